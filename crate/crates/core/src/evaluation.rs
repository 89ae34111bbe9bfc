//! Benchmark evaluation: dataset loading, strict-match accuracy, and the
//! baseline/ablation configuration matrix.
//!
//! A pipeline mode fixes which stages run (retrieval on/off, causal weight
//! on/off, reasoning template). Items are processed independently; report
//! rows keep dataset order regardless of completion order. Failed items are
//! recorded and scored incorrect rather than dropped, and a run with more
//! than 10% failures is marked degraded.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::CausalLexicon;
use crate::embedding::{EmbeddingClient, EmbeddingError, EmbeddingProviderConfig};
use crate::generation::{
    extract_mcq_answer, extract_yesno_answer, GenClient, GenError, GenProviderConfig,
};
use crate::index::{Index, IndexError, RetrievalWeights, ScoredDocument, DEFAULT_MODIFIERS};
use crate::prompt::{build_prompt, PromptError, TaskKind, TemplateName};

/// Default context budget in tokens.
pub const DEFAULT_BUDGET_TOKENS: usize = 4096;
/// Default per-item worker bound.
pub const DEFAULT_CONCURRENCY: usize = 4;
/// Runs with more than this fraction of errored items are marked degraded.
pub const DEGRADED_ERROR_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record at line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("invalid item `{id}`: {message}")]
    InvalidItem { id: String, message: String },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Dataset shape: lettered multiple choice or binary yes/no.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mcq,
    YesNo,
}

impl FromStr for DatasetKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mcq" => Ok(Self::Mcq),
            "yes_no" => Ok(Self::YesNo),
            other => Err(EvalError::Config(format!(
                "unknown dataset kind `{other}` (expected mcq or yes_no)"
            ))),
        }
    }
}

/// One benchmark question with its gold answer (a letter for MCQ,
/// `yes`/`no` for binary).
#[derive(Debug, Clone, PartialEq)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub task: TaskKind,
    pub gold: String,
}

#[derive(Deserialize)]
struct McqRecord {
    id: String,
    question: String,
    options: std::collections::BTreeMap<String, String>,
    answer: String,
}

#[derive(Deserialize)]
struct YesNoRecord {
    id: String,
    question: String,
    answer: String,
}

/// Load a JSON Lines dataset, validating every record. Order is preserved;
/// ids must be unique (completions are matched to items by id).
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Vec<QAItem>, EvalError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = match kind {
            DatasetKind::Mcq => parse_mcq(&line, line_no)?,
            DatasetKind::YesNo => parse_yesno(&line, line_no)?,
        };
        if item.id.trim().is_empty() {
            return Err(EvalError::Dataset {
                line: line_no,
                message: "`id` must be nonempty".into(),
            });
        }
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::Dataset {
                line: line_no,
                message: format!("duplicate item id `{}`", item.id),
            });
        }
        items.push(item);
    }
    Ok(items)
}

fn parse_mcq(line: &str, line_no: usize) -> Result<QAItem, EvalError> {
    let rec: McqRecord = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
        line: line_no,
        message: e.to_string(),
    })?;
    let mut options = Vec::with_capacity(rec.options.len());
    for (label, text) in rec.options {
        let mut chars = label.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return Err(EvalError::InvalidItem {
                id: rec.id,
                message: format!("option label `{label}` is not a single letter"),
            });
        };
        options.push((c.to_ascii_uppercase(), text));
    }
    let task = TaskKind::multiple_choice(options).map_err(|e| EvalError::InvalidItem {
        id: rec.id.clone(),
        message: e.to_string(),
    })?;
    let gold = rec.answer.trim().to_ascii_uppercase();
    let gold_char = {
        let mut chars = gold.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(EvalError::InvalidItem {
                    id: rec.id,
                    message: format!("gold answer `{}` is not a single letter", rec.answer),
                })
            }
        }
    };
    if !task.labels().contains(&gold_char) {
        return Err(EvalError::InvalidItem {
            id: rec.id,
            message: format!(
                "gold answer `{gold_char}` is not among option labels {:?}",
                task.labels()
            ),
        });
    }
    Ok(QAItem {
        id: rec.id,
        question: rec.question,
        task,
        gold,
    })
}

fn parse_yesno(line: &str, line_no: usize) -> Result<QAItem, EvalError> {
    let rec: YesNoRecord = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
        line: line_no,
        message: e.to_string(),
    })?;
    let gold = rec.answer.trim().to_lowercase();
    if gold != "yes" && gold != "no" {
        return Err(EvalError::InvalidItem {
            id: rec.id,
            message: format!("gold answer `{}` must be yes or no", rec.answer),
        });
    }
    Ok(QAItem {
        id: rec.id,
        question: rec.question,
        task: TaskKind::YesNo,
        gold,
    })
}

/// Strict match: case-insensitive equality of canonical forms. An
/// unparseable prediction (`None`) never matches.
pub fn strict_match(prediction: Option<&str>, gold: &str) -> bool {
    prediction.is_some_and(|p| p.eq_ignore_ascii_case(gold))
}

/// The evaluated pipeline configurations. Each mode reproduces one row of
/// the baseline/ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    /// No retrieval, no reasoning template.
    ZeroShot,
    /// Semantic-only retrieval (beta = 0), no reasoning template.
    BasicRag,
    /// Composite causal retrieval (beta > 0), no reasoning template.
    CausalRagNoCot,
    /// No retrieval, generic step-by-step template.
    GenericCotOnly,
    /// Semantic-only retrieval plus the generic template.
    RagPlusGenericCot,
    /// Composite causal retrieval plus the four-stage causal template.
    FullCausalRag,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 6] = [
        PipelineMode::ZeroShot,
        PipelineMode::BasicRag,
        PipelineMode::CausalRagNoCot,
        PipelineMode::GenericCotOnly,
        PipelineMode::RagPlusGenericCot,
        PipelineMode::FullCausalRag,
    ];

    pub fn uses_retrieval(&self) -> bool {
        !matches!(self, Self::ZeroShot | Self::GenericCotOnly)
    }

    /// The template this mode is defined by.
    pub fn required_template(&self) -> TemplateName {
        match self {
            Self::ZeroShot | Self::BasicRag | Self::CausalRagNoCot => TemplateName::None,
            Self::GenericCotOnly | Self::RagPlusGenericCot => TemplateName::GenericV1,
            Self::FullCausalRag => TemplateName::CotV1,
        }
    }

    /// Whether the mode's retrieval includes the causal term.
    pub fn causal_retrieval(&self) -> bool {
        matches!(self, Self::CausalRagNoCot | Self::FullCausalRag)
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroShot => "zero_shot",
            Self::BasicRag => "basic_rag",
            Self::CausalRagNoCot => "causal_rag_no_cot",
            Self::GenericCotOnly => "generic_cot_only",
            Self::RagPlusGenericCot => "rag_plus_generic_cot",
            Self::FullCausalRag => "full_medcot_rag",
        })
    }
}

impl FromStr for PipelineMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" => Ok(Self::ZeroShot),
            "basic_rag" => Ok(Self::BasicRag),
            "causal_rag_no_cot" => Ok(Self::CausalRagNoCot),
            "generic_cot_only" => Ok(Self::GenericCotOnly),
            "rag_plus_generic_cot" => Ok(Self::RagPlusGenericCot),
            "full_medcot_rag" => Ok(Self::FullCausalRag),
            other => Err(EvalError::Config(format!("unknown pipeline mode `{other}`"))),
        }
    }
}

/// Everything needed to run one pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub weights: RetrievalWeights,
    pub template: TemplateName,
    pub budget_tokens: usize,
    pub modifiers: Vec<String>,
    pub concurrency: usize,
    pub embedding: EmbeddingProviderConfig,
    pub generation: GenProviderConfig,
}

impl PipelineConfig {
    /// Canonical config for a mode: the mode's template, semantic-only
    /// weights where the mode excludes the causal term, and the default
    /// clinical modifiers for causal retrieval.
    pub fn for_mode(
        mode: PipelineMode,
        weights: RetrievalWeights,
        embedding: EmbeddingProviderConfig,
        generation: GenProviderConfig,
    ) -> Self {
        let weights = match mode {
            PipelineMode::BasicRag | PipelineMode::RagPlusGenericCot => RetrievalWeights {
                alpha: if weights.alpha > 0.0 { weights.alpha } else { 1.0 },
                beta: 0.0,
                k: weights.k,
            },
            _ => weights,
        };
        let modifiers = if mode.causal_retrieval() {
            DEFAULT_MODIFIERS.iter().map(|s| s.to_string()).collect()
        } else {
            Vec::new()
        };
        Self {
            mode,
            weights,
            template: mode.required_template(),
            budget_tokens: DEFAULT_BUDGET_TOKENS,
            modifiers,
            concurrency: DEFAULT_CONCURRENCY,
            embedding,
            generation,
        }
    }

    /// Reject invalid mode/weight/template combinations before any
    /// provider call.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.budget_tokens == 0 {
            return Err(EvalError::Config("budget_tokens must be > 0".into()));
        }
        if self.template != self.mode.required_template() {
            return Err(EvalError::Config(format!(
                "mode {} requires template {}, got {}",
                self.mode,
                self.mode.required_template(),
                self.template
            )));
        }
        if self.mode.causal_retrieval() && self.weights.beta <= 0.0 {
            return Err(EvalError::Config(format!(
                "mode {} requires beta > 0, got beta = {}",
                self.mode, self.weights.beta
            )));
        }
        if matches!(
            self.mode,
            PipelineMode::BasicRag | PipelineMode::RagPlusGenericCot
        ) && self.weights.beta != 0.0
        {
            return Err(EvalError::Config(format!(
                "mode {} is semantic-only and requires beta = 0, got beta = {}",
                self.mode, self.weights.beta
            )));
        }
        Ok(())
    }

    fn descriptor(&self, embedder: &EmbeddingClient, generator: &GenClient) -> ConfigDescriptor {
        ConfigDescriptor {
            mode: self.mode.to_string(),
            alpha: self.weights.alpha,
            beta: self.weights.beta,
            k: self.weights.k,
            template: self.template.to_string(),
            budget_tokens: self.budget_tokens,
            embedding_provider: embedder.descriptor(),
            generation_provider: generator.descriptor(),
        }
    }
}

/// The configuration block recorded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDescriptor {
    pub mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub template: String,
    pub budget_tokens: usize,
    pub embedding_provider: String,
    pub generation_provider: String,
}

/// Per-item outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub prediction: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub retrieved_chunk_ids: Vec<String>,
    pub prompt_hash: Option<String>,
    pub errored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub total: usize,
    pub correct: usize,
    pub unparseable: usize,
    pub errored: usize,
}

/// One pipeline configuration's results over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigDescriptor,
    pub lexicon_version: String,
    pub rows: Vec<EvalRow>,
    pub accuracy: f64,
    pub counts: EvalCounts,
    pub degraded: bool,
    pub timestamp_unix: u64,
}

impl EvalReport {
    /// Recount correct flags from the rows; must always equal `accuracy`.
    pub fn recount_accuracy(&self) -> f64 {
        let correct = self.rows.iter().filter(|r| r.correct).count();
        correct as f64 / self.rows.len() as f64
    }
}

fn eval_one_item(
    config: &PipelineConfig,
    item: &QAItem,
    index: Option<&Index>,
    lexicon: &CausalLexicon,
    embedder: &EmbeddingClient,
    generator: &GenClient,
) -> Result<EvalRow, EvalError> {
    let docs: Vec<ScoredDocument> = if config.mode.uses_retrieval() {
        let index = index.expect("checked by run_eval");
        index.retrieve(
            &item.question,
            &config.weights,
            embedder,
            lexicon,
            &config.modifiers,
        )?
    } else {
        Vec::new()
    };
    let retrieved_chunk_ids: Vec<String> = docs.iter().map(|d| d.chunk_id.clone()).collect();
    let prompt = build_prompt(
        config.template,
        &item.question,
        &item.task,
        &docs,
        config.budget_tokens,
    )?;
    let completion = generator.generate(&prompt, Some(&item.id))?;
    let prediction: Option<String> = match &item.task {
        TaskKind::MultipleChoice(_) => {
            extract_mcq_answer(&completion.text, &item.task.labels()).map(|c| c.to_string())
        }
        TaskKind::YesNo => extract_yesno_answer(&completion.text).map(|a| a.as_str().to_string()),
        TaskKind::FreeForm => None,
    };
    let correct = strict_match(prediction.as_deref(), &item.gold);
    Ok(EvalRow {
        id: item.id.clone(),
        prediction,
        gold: item.gold.clone(),
        correct,
        retrieved_chunk_ids,
        prompt_hash: Some(completion.prompt_hash),
        errored: false,
    })
}

fn errored_row(item: &QAItem) -> EvalRow {
    EvalRow {
        id: item.id.clone(),
        prediction: None,
        gold: item.gold.clone(),
        correct: false,
        retrieved_chunk_ids: Vec::new(),
        prompt_hash: None,
        errored: true,
    }
}

/// Run one pipeline configuration over a dataset.
///
/// Items run independently (concurrently up to `config.concurrency`);
/// rows are reported in dataset order. A failed item is recorded as
/// errored and scored incorrect; the run continues, and the report is
/// marked degraded when more than 10% of items errored.
pub fn run_eval(
    config: &PipelineConfig,
    items: &[QAItem],
    index: Option<&Index>,
    lexicon: &CausalLexicon,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    if items.is_empty() {
        return Err(EvalError::Config("cannot evaluate an empty dataset".into()));
    }
    if config.mode.uses_retrieval() {
        let index = index.ok_or_else(|| {
            EvalError::Config(format!("mode {} requires an index", config.mode))
        })?;
        if index.is_empty() {
            return Err(EvalError::Index(IndexError::EmptyIndex));
        }
        if index.dim() != config.embedding.dim() {
            return Err(EvalError::Index(IndexError::DimMismatch {
                index: index.dim(),
                provider: config.embedding.dim(),
            }));
        }
        if index.lexicon_version() != lexicon.version {
            return Err(EvalError::Index(IndexError::LexiconMismatch {
                index: index.lexicon_version().to_string(),
                given: lexicon.version.clone(),
            }));
        }
    }
    let embedder = EmbeddingClient::new(config.embedding.clone())?;
    let generator = GenClient::new(config.generation.clone())?;

    let rows = if config.concurrency <= 1 || items.len() == 1 {
        items
            .iter()
            .map(|item| {
                eval_one_item(config, item, index, lexicon, &embedder, &generator)
                    .unwrap_or_else(|_| errored_row(item))
            })
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<EvalRow>>> =
            items.iter().map(|_| Mutex::new(None)).collect();
        let workers = config.concurrency.min(items.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let row = eval_one_item(
                        config, &items[i], index, lexicon, &embedder, &generator,
                    )
                    .unwrap_or_else(|_| errored_row(&items[i]));
                    *slots[i].lock().unwrap() = Some(row);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("all slots filled"))
            .collect::<Vec<_>>()
    };

    let counts = EvalCounts {
        total: rows.len(),
        correct: rows.iter().filter(|r: &&EvalRow| r.correct).count(),
        unparseable: rows
            .iter()
            .filter(|r| !r.errored && r.prediction.is_none())
            .count(),
        errored: rows.iter().filter(|r| r.errored).count(),
    };
    let accuracy = counts.correct as f64 / counts.total as f64;
    let degraded = counts.errored as f64 / counts.total as f64 > DEGRADED_ERROR_FRACTION;
    Ok(EvalReport {
        config: config.descriptor(&embedder, &generator),
        lexicon_version: lexicon.version.clone(),
        rows,
        accuracy,
        counts,
        degraded,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    })
}

/// Relative accuracy delta versus a baseline: `(acc - base) / base`.
/// Undefined when the baseline accuracy is zero.
pub fn relative_delta(accuracy: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (accuracy - baseline) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub accuracy: f64,
    /// Relative delta vs the baseline config; `None` when undefined.
    pub delta_vs_baseline: Option<f64>,
    pub is_baseline: bool,
}

/// Accuracy comparison across configs, with relative deltas against a
/// designated baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline_mode: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn from_reports(reports: &[EvalReport], baseline_mode: PipelineMode) -> Result<Self, EvalError> {
        let baseline_name = baseline_mode.to_string();
        let baseline = reports
            .iter()
            .find(|r| r.config.mode == baseline_name)
            .ok_or_else(|| {
                EvalError::Config(format!(
                    "baseline mode {baseline_name} is not among the evaluated configs"
                ))
            })?
            .accuracy;
        let rows = reports
            .iter()
            .map(|r| AblationRow {
                mode: r.config.mode.clone(),
                accuracy: r.accuracy,
                delta_vs_baseline: relative_delta(r.accuracy, baseline),
                is_baseline: r.config.mode == baseline_name,
            })
            .collect();
        Ok(Self {
            baseline_mode: baseline_name,
            rows,
        })
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>9} {:>12}\n",
            "configuration", "accuracy", "delta"
        ));
        out.push_str(&format!("{}\n", "-".repeat(45)));
        for row in &self.rows {
            let delta = match row.delta_vs_baseline {
                Some(d) => format!("{:+.1}%", d * 100.0),
                None => "n/a".to_string(),
            };
            let marker = if row.is_baseline { " (baseline)" } else { "" };
            out.push_str(&format!(
                "{:<22} {:>8.1}% {:>12}{}\n",
                row.mode,
                row.accuracy * 100.0,
                delta,
                marker
            ));
        }
        out
    }
}

/// Run every config and build the comparison table against the baseline
/// (conventionally the generic-template, no-retrieval arm).
pub fn run_ablation(
    configs: &[PipelineConfig],
    items: &[QAItem],
    index: Option<&Index>,
    lexicon: &CausalLexicon,
    baseline_mode: PipelineMode,
) -> Result<(Vec<EvalReport>, AblationTable), EvalError> {
    if configs.is_empty() {
        return Err(EvalError::Config("no configs to ablate".into()));
    }
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        reports.push(run_eval(config, items, index, lexicon)?);
    }
    let table = AblationTable::from_reports(&reports, baseline_mode)?;
    Ok((reports, table))
}
