//! Command-line driver: ingest, index, retrieve, ask, eval, ablate.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use causalrag::causal::{self, CausalLexicon};
use causalrag::config::AppConfig;
use causalrag::corpus;
use causalrag::embedding::{EmbeddingClient, EmbeddingProviderConfig, DEFAULT_LOCAL_DIM};
use causalrag::evaluation::{
    self, load_dataset, run_eval, AblationTable, DatasetKind, EvalReport, PipelineConfig,
    PipelineMode, DEFAULT_BUDGET_TOKENS, DEFAULT_CONCURRENCY,
};
use causalrag::generation::{GenClient, GenProviderConfig, GenProviderKind};
use causalrag::index::{
    Index, RetrievalWeights, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_K, DEFAULT_MODIFIERS,
    INDEX_FORMAT_VERSION,
};
use causalrag::prompt::{build_prompt, TaskKind, TemplateName};

fn version_string() -> String {
    format!(
        "{} (templates: cot_v1, generic_v1, none; index format v{})",
        causalrag::VERSION,
        INDEX_FORMAT_VERSION
    )
}

#[derive(Parser)]
#[command(name = "causalrag", version = version_string(), about = "Causal-aware retrieval-augmented question answering")]
struct Cli {
    /// Flat key-value config file; explicit flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct EmbeddingArgs {
    /// Embedding provider: local_hash or remote_http.
    #[arg(long)]
    embedding_kind: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Remote embeddings endpoint URL.
    #[arg(long)]
    embedding_endpoint: Option<String>,
    /// Remote embeddings model name.
    #[arg(long)]
    embedding_model: Option<String>,
    /// Env var holding the embeddings API key.
    #[arg(long)]
    embedding_api_key_env: Option<String>,
}

#[derive(Args, Clone, Default)]
struct GenerationArgs {
    /// Generation provider: scripted_mock or remote_chat.
    #[arg(long)]
    generation_kind: Option<String>,
    /// Remote chat-completions endpoint URL.
    #[arg(long)]
    generation_endpoint: Option<String>,
    /// Remote generation model name.
    #[arg(long)]
    generation_model: Option<String>,
    /// Env var holding the generation API key.
    #[arg(long)]
    generation_api_key_env: Option<String>,
    /// Mock script path (JSON Lines keyed by item id).
    #[arg(long)]
    generation_script: Option<PathBuf>,
    /// Generation budget in new tokens.
    #[arg(long)]
    max_new_tokens: Option<u32>,
    /// Decoding temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct WeightArgs {
    /// Weight on semantic similarity.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight on the causal score.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of chunks to retrieve.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and chunk a JSON Lines corpus into a chunk file.
    Ingest {
        /// Corpus file (JSON Lines with id/text/title/source).
        #[arg(long)]
        corpus: PathBuf,
        /// Output chunk file (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Maximum chunk size in characters.
        #[arg(long)]
        max_chunk_chars: Option<usize>,
        /// Overlap between adjacent chunks in characters.
        #[arg(long)]
        overlap_chars: Option<usize>,
    },
    /// Embed and causally score a chunk file into a persisted index.
    Index {
        /// Chunk file produced by `ingest`.
        #[arg(long)]
        chunks: PathBuf,
        /// Output index path.
        #[arg(long)]
        out: PathBuf,
        /// Causal lexicon file (JSON Lines); omit for the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Causal score saturation (density that saturates psi at 1).
        #[arg(long)]
        saturation: Option<f64>,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
    /// Rank index entries against a query and print the top hits.
    Retrieve {
        /// Index path.
        #[arg(long)]
        index: PathBuf,
        /// The query text.
        query: String,
        /// Causal lexicon file; must match the one used at build time.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Print the psi column.
        #[arg(long)]
        show_psi: bool,
        /// Query modifiers, comma-separated. Defaults to the clinical set
        /// when beta > 0; pass an empty string to disable.
        #[arg(long)]
        modifiers: Option<String>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
    /// Run one question through retrieval, prompting, and generation.
    Ask {
        /// Index path.
        #[arg(long)]
        index: PathBuf,
        /// The question text.
        question: String,
        /// Task shape: free_form, yes_no, or mcq.
        #[arg(long, default_value = "free_form")]
        task: String,
        /// MCQ option as LABEL=TEXT; repeat per option.
        #[arg(long = "option")]
        options: Vec<String>,
        /// Prompt template: cot_v1, generic_v1, or none.
        #[arg(long)]
        template: Option<String>,
        /// Context budget in tokens.
        #[arg(long)]
        budget_tokens: Option<usize>,
        /// Causal lexicon file; must match the one used at build time.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Query modifiers, comma-separated.
        #[arg(long)]
        modifiers: Option<String>,
        /// Item id passed to the provider (keys the scripted mock).
        #[arg(long)]
        item_id: Option<String>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[command(flatten)]
        generation: GenerationArgs,
    },
    /// Evaluate a dataset under one pipeline mode.
    Eval {
        /// Index path (required by retrieval modes).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Dataset file (JSON Lines).
        #[arg(long)]
        dataset: PathBuf,
        /// Dataset kind: mcq or yes_no.
        #[arg(long)]
        kind: String,
        /// Pipeline mode.
        #[arg(long)]
        mode: String,
        /// Write the machine-readable JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prompt template override (rejected if it contradicts the mode).
        #[arg(long)]
        template: Option<String>,
        /// Context budget in tokens.
        #[arg(long)]
        budget_tokens: Option<usize>,
        /// Per-item worker bound.
        #[arg(long)]
        concurrency: Option<usize>,
        /// Causal lexicon file; must match the one used at build time.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Query modifiers, comma-separated.
        #[arg(long)]
        modifiers: Option<String>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[command(flatten)]
        generation: GenerationArgs,
    },
    /// Evaluate several modes and compare them against a baseline.
    Ablate {
        /// Index path (required by retrieval modes).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Dataset file (JSON Lines).
        #[arg(long)]
        dataset: PathBuf,
        /// Dataset kind: mcq or yes_no.
        #[arg(long)]
        kind: String,
        /// Comma-separated pipeline modes; defaults to all six.
        #[arg(long)]
        modes: Option<String>,
        /// Baseline mode for relative deltas.
        #[arg(long, default_value = "generic_cot_only")]
        baseline: String,
        /// Write reports and the comparison table as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Context budget in tokens.
        #[arg(long)]
        budget_tokens: Option<usize>,
        /// Per-item worker bound.
        #[arg(long)]
        concurrency: Option<usize>,
        /// Causal lexicon file; must match the one used at build time.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[command(flatten)]
        generation: GenerationArgs,
    },
}

fn load_app_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p).with_context(|| format!("config file {}", p.display())),
        None => Ok(AppConfig::default()),
    }
}

fn resolve_embedding(args: &EmbeddingArgs, cfg: &AppConfig) -> Result<EmbeddingProviderConfig> {
    let kind = args
        .embedding_kind
        .clone()
        .or_else(|| cfg.embedding_kind.clone())
        .unwrap_or_else(|| "local_hash".to_string());
    let dim = args
        .embedding_dim
        .or(cfg.embedding_dim)
        .unwrap_or(DEFAULT_LOCAL_DIM);
    match kind.as_str() {
        "local_hash" => Ok(EmbeddingProviderConfig::LocalHash { dim }),
        "remote_http" => {
            let endpoint_url = args
                .embedding_endpoint
                .clone()
                .or_else(|| cfg.embedding_endpoint.clone())
                .ok_or_else(|| anyhow!("remote_http embedding requires --embedding-endpoint"))?;
            let model_name = args
                .embedding_model
                .clone()
                .or_else(|| cfg.embedding_model.clone())
                .unwrap_or_else(|| "default".to_string());
            Ok(EmbeddingProviderConfig::RemoteHttp {
                endpoint_url,
                model_name,
                dim,
                timeout_ms: cfg.embedding_timeout_ms.unwrap_or(30_000),
                api_key_env_var: args
                    .embedding_api_key_env
                    .clone()
                    .or_else(|| cfg.embedding_api_key_env.clone()),
                max_in_flight: cfg.concurrency.unwrap_or(DEFAULT_CONCURRENCY),
            })
        }
        other => bail!("unknown embedding kind `{other}` (expected local_hash or remote_http)"),
    }
}

fn resolve_generation(args: &GenerationArgs, cfg: &AppConfig) -> Result<GenProviderConfig> {
    let script = args
        .generation_script
        .clone()
        .or_else(|| cfg.generation_script.clone());
    let endpoint = args
        .generation_endpoint
        .clone()
        .or_else(|| cfg.generation_endpoint.clone());
    let kind = args
        .generation_kind
        .clone()
        .or_else(|| cfg.generation_kind.clone())
        .or_else(|| script.is_some().then(|| "scripted_mock".to_string()))
        .or_else(|| endpoint.is_some().then(|| "remote_chat".to_string()))
        .ok_or_else(|| {
            anyhow!("no generation provider configured: pass --generation-script or --generation-endpoint")
        })?;
    let provider_kind = match kind.as_str() {
        "scripted_mock" => GenProviderKind::ScriptedMock {
            script_path: script
                .ok_or_else(|| anyhow!("scripted_mock requires --generation-script"))?,
        },
        "remote_chat" => GenProviderKind::RemoteChat {
            endpoint_url: endpoint
                .ok_or_else(|| anyhow!("remote_chat requires --generation-endpoint"))?,
            model_name: args
                .generation_model
                .clone()
                .or_else(|| cfg.generation_model.clone())
                .unwrap_or_else(|| "default".to_string()),
            api_key_env_var: args
                .generation_api_key_env
                .clone()
                .or_else(|| cfg.generation_api_key_env.clone()),
        },
        other => bail!("unknown generation kind `{other}` (expected scripted_mock or remote_chat)"),
    };
    Ok(GenProviderConfig {
        kind: provider_kind,
        max_new_tokens: args
            .max_new_tokens
            .or(cfg.max_new_tokens)
            .unwrap_or(causalrag::generation::DEFAULT_MAX_NEW_TOKENS),
        temperature: args
            .temperature
            .or(cfg.temperature)
            .unwrap_or(causalrag::generation::DEFAULT_TEMPERATURE),
        timeout_ms: cfg.generation_timeout_ms.unwrap_or(30_000),
        max_in_flight: cfg.concurrency.unwrap_or(DEFAULT_CONCURRENCY),
        retry_base_ms: cfg
            .retry_base_ms
            .unwrap_or(causalrag::generation::DEFAULT_RETRY_BASE_MS),
    })
}

fn resolve_weights(args: &WeightArgs, cfg: &AppConfig) -> Result<RetrievalWeights> {
    Ok(RetrievalWeights::new(
        args.alpha.or(cfg.alpha).unwrap_or(DEFAULT_ALPHA),
        args.beta.or(cfg.beta).unwrap_or(DEFAULT_BETA),
        args.k.or(cfg.k).unwrap_or(DEFAULT_K),
    )?)
}

fn resolve_lexicon(flag: Option<&Path>, cfg: &AppConfig) -> Result<CausalLexicon> {
    let path = flag.map(Path::to_path_buf).or_else(|| cfg.lexicon_path.clone());
    Ok(causal::load_lexicon(path.as_deref())?)
}

fn parse_modifier_flag(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect()
}

fn resolve_modifiers(flag: Option<&str>, cfg: &AppConfig, beta: f64) -> Vec<String> {
    if let Some(raw) = flag {
        return parse_modifier_flag(raw);
    }
    if let Some(list) = cfg.modifier_list() {
        return list;
    }
    if beta > 0.0 {
        DEFAULT_MODIFIERS.iter().map(|s| s.to_string()).collect()
    } else {
        Vec::new()
    }
}

fn parse_task(task: &str, options: &[String]) -> Result<TaskKind> {
    match task {
        "free_form" => Ok(TaskKind::FreeForm),
        "yes_no" => Ok(TaskKind::YesNo),
        "mcq" => {
            let mut parsed = Vec::new();
            for raw in options {
                let (label, text) = raw
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--option must look like LABEL=TEXT, got `{raw}`"))?;
                let mut chars = label.trim().chars();
                let (Some(c), None) = (chars.next(), chars.next()) else {
                    bail!("option label `{label}` is not a single letter");
                };
                parsed.push((c.to_ascii_uppercase(), text.trim().to_string()));
            }
            Ok(TaskKind::multiple_choice(parsed)?)
        }
        other => bail!("unknown task `{other}` (expected free_form, yes_no, or mcq)"),
    }
}

fn print_report_summary(report: &EvalReport) {
    println!(
        "mode {} | template {} | alpha {} beta {} k {}",
        report.config.mode,
        report.config.template,
        report.config.alpha,
        report.config.beta,
        report.config.k
    );
    println!(
        "{:<10} {:>6} {:>8} {:>12} {:>8}",
        "items", "correct", "errored", "unparseable", "accuracy"
    );
    println!(
        "{:<10} {:>6} {:>8} {:>12} {:>7.1}%",
        report.counts.total,
        report.counts.correct,
        report.counts.errored,
        report.counts.unparseable,
        report.accuracy * 100.0
    );
    if report.degraded {
        println!("warning: run degraded (more than 10% of items errored)");
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn build_pipeline_config(
    mode: PipelineMode,
    weight_args: &WeightArgs,
    template: Option<&str>,
    budget_tokens: Option<usize>,
    concurrency: Option<usize>,
    modifiers: Option<&str>,
    cfg: &AppConfig,
    embedding: EmbeddingProviderConfig,
    generation: GenProviderConfig,
) -> Result<PipelineConfig> {
    let weights = resolve_weights(weight_args, cfg)?;
    let mut config = PipelineConfig::for_mode(mode, weights, embedding, generation);
    // Explicit weight flags are honored verbatim so contradictions are
    // rejected rather than silently canonicalized.
    if let Some(beta) = weight_args.beta {
        config.weights.beta = beta;
    }
    if let Some(alpha) = weight_args.alpha {
        config.weights.alpha = alpha;
    }
    if let Some(t) = template.or(cfg.template.as_deref()) {
        config.template = t.parse::<TemplateName>().map_err(|e| anyhow!(e.to_string()))?;
    }
    config.budget_tokens = budget_tokens
        .or(cfg.budget_tokens)
        .unwrap_or(DEFAULT_BUDGET_TOKENS);
    config.concurrency = concurrency.or(cfg.concurrency).unwrap_or(DEFAULT_CONCURRENCY);
    if let Some(raw) = modifiers {
        config.modifiers = parse_modifier_flag(raw);
    } else if let Some(list) = cfg.modifier_list() {
        if mode.causal_retrieval() {
            config.modifiers = list;
        }
    }
    config.validate()?;
    Ok(config)
}

fn cmd_ingest(
    corpus_path: &Path,
    out: &Path,
    max_chunk_chars: Option<usize>,
    overlap_chars: Option<usize>,
    cfg: &AppConfig,
) -> Result<()> {
    let max = max_chunk_chars.or(cfg.max_chunk_chars).unwrap_or(1200);
    let overlap = overlap_chars.or(cfg.overlap_chars).unwrap_or(200);
    let docs = corpus::load_corpus(corpus_path)?;
    let mut chunks = Vec::new();
    for doc in &docs {
        chunks.extend(corpus::chunk_document(doc, max, overlap)?);
    }
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    corpus::write_chunks(std::io::BufWriter::new(file), &chunks)?;
    println!("{} documents, {} chunks -> {}", docs.len(), chunks.len(), out.display());
    Ok(())
}

fn cmd_index(
    chunks_path: &Path,
    out: &Path,
    lexicon_flag: Option<&Path>,
    saturation: Option<f64>,
    embedding_args: &EmbeddingArgs,
    cfg: &AppConfig,
) -> Result<()> {
    let chunks = corpus::read_chunks(chunks_path)?;
    let lexicon = resolve_lexicon(lexicon_flag, cfg)?;
    let saturation = saturation
        .or(cfg.saturation)
        .unwrap_or(causal::DEFAULT_SATURATION);
    if saturation <= 0.0 {
        bail!("saturation must be > 0, got {saturation}");
    }
    let provider = resolve_embedding(embedding_args, cfg)?;
    let client = EmbeddingClient::new(provider)?;
    let index = Index::build(&chunks, &client, &lexicon, saturation)?;
    index.save(out)?;
    println!(
        "indexed {} chunks (dim {}, lexicon {}) -> {}",
        index.len(),
        index.dim(),
        index.lexicon_version(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_retrieve(
    index_path: &Path,
    query: &str,
    lexicon_flag: Option<&Path>,
    show_psi: bool,
    modifiers: Option<&str>,
    weight_args: &WeightArgs,
    embedding_args: &EmbeddingArgs,
    cfg: &AppConfig,
) -> Result<()> {
    let index = Index::load(index_path)?;
    let lexicon = resolve_lexicon(lexicon_flag, cfg)?;
    let weights = resolve_weights(weight_args, cfg)?;
    let provider = resolve_embedding(embedding_args, cfg)?;
    let client = EmbeddingClient::new(provider)?;
    let mods = resolve_modifiers(modifiers, cfg, weights.beta);
    let hits = index.retrieve(query, &weights, &client, &lexicon, &mods)?;
    if show_psi {
        println!("{:<4} {:<18} {:>9} {:>7} {:>7}  text", "rank", "chunk", "composite", "sim", "psi");
    } else {
        println!("{:<4} {:<18} {:>9} {:>7}  text", "rank", "chunk", "composite", "sim");
    }
    for (rank, hit) in hits.iter().enumerate() {
        let snippet: String = hit.text.chars().take(60).collect();
        if show_psi {
            println!(
                "{:<4} {:<18} {:>9.4} {:>7.4} {:>7.4}  {}",
                rank + 1,
                hit.chunk_id,
                hit.composite,
                hit.sim,
                hit.psi,
                snippet
            );
        } else {
            println!(
                "{:<4} {:<18} {:>9.4} {:>7.4}  {}",
                rank + 1,
                hit.chunk_id,
                hit.composite,
                hit.sim,
                snippet
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ask(
    index_path: &Path,
    question: &str,
    task: &str,
    options: &[String],
    template: Option<&str>,
    budget_tokens: Option<usize>,
    lexicon_flag: Option<&Path>,
    modifiers: Option<&str>,
    item_id: Option<&str>,
    weight_args: &WeightArgs,
    embedding_args: &EmbeddingArgs,
    generation_args: &GenerationArgs,
    cfg: &AppConfig,
) -> Result<()> {
    let index = Index::load(index_path)?;
    let lexicon = resolve_lexicon(lexicon_flag, cfg)?;
    let weights = resolve_weights(weight_args, cfg)?;
    let embedder = EmbeddingClient::new(resolve_embedding(embedding_args, cfg)?)?;
    let generator = GenClient::new(resolve_generation(generation_args, cfg)?)?;
    let task = parse_task(task, options)?;
    let template: TemplateName = template
        .or(cfg.template.as_deref())
        .unwrap_or("cot_v1")
        .parse()
        .map_err(|e: causalrag::prompt::PromptError| anyhow!(e.to_string()))?;
    let budget = budget_tokens
        .or(cfg.budget_tokens)
        .unwrap_or(DEFAULT_BUDGET_TOKENS);
    let mods = resolve_modifiers(modifiers, cfg, weights.beta);

    let docs = index.retrieve(question, &weights, &embedder, &lexicon, &mods)?;
    let prompt = build_prompt(template, question, &task, &docs, budget)?;
    let completion = generator.generate(&prompt, item_id)?;

    println!("retrieved chunks:");
    for d in &docs {
        println!("  {} (composite {:.4}, sim {:.4}, psi {:.4})", d.chunk_id, d.composite, d.sim, d.psi);
    }
    if prompt.dropped_chunks > 0 {
        println!("  ({} chunk(s) dropped for budget)", prompt.dropped_chunks);
    }
    println!("\ncompletion:\n{}", completion.text);
    let extracted = match &task {
        TaskKind::MultipleChoice(_) => {
            causalrag::generation::extract_mcq_answer(&completion.text, &task.labels())
                .map(|c| c.to_string())
        }
        TaskKind::YesNo => causalrag::generation::extract_yesno_answer(&completion.text)
            .map(|a| a.as_str().to_string()),
        TaskKind::FreeForm => None,
    };
    match (&task, extracted) {
        (TaskKind::FreeForm, _) => {}
        (_, Some(ans)) => println!("\nextracted answer: {ans}"),
        (_, None) => println!("\nextracted answer: unparseable"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    index_path: Option<&Path>,
    dataset: &Path,
    kind: &str,
    mode: &str,
    out: Option<&Path>,
    template: Option<&str>,
    budget_tokens: Option<usize>,
    concurrency: Option<usize>,
    lexicon_flag: Option<&Path>,
    modifiers: Option<&str>,
    weight_args: &WeightArgs,
    embedding_args: &EmbeddingArgs,
    generation_args: &GenerationArgs,
    cfg: &AppConfig,
) -> Result<()> {
    let mode: PipelineMode = mode.parse().map_err(|e: evaluation::EvalError| anyhow!(e.to_string()))?;
    let kind: DatasetKind = kind.parse().map_err(|e: evaluation::EvalError| anyhow!(e.to_string()))?;
    let config = build_pipeline_config(
        mode,
        weight_args,
        template,
        budget_tokens,
        concurrency,
        modifiers,
        cfg,
        resolve_embedding(embedding_args, cfg)?,
        resolve_generation(generation_args, cfg)?,
    )?;
    let items = load_dataset(dataset, kind)?;
    let lexicon = resolve_lexicon(lexicon_flag, cfg)?;
    let index = load_index_if_needed(mode, index_path, cfg)?;
    let report = run_eval(&config, &items, index.as_ref(), &lexicon)?;
    print_report_summary(&report);
    if let Some(path) = out {
        write_json(path, &report)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn load_index_if_needed(
    mode: PipelineMode,
    index_path: Option<&Path>,
    cfg: &AppConfig,
) -> Result<Option<Index>> {
    if !mode.uses_retrieval() {
        return Ok(None);
    }
    let path = index_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.index_path.clone())
        .ok_or_else(|| anyhow!("mode {mode} requires --index"))?;
    Ok(Some(Index::load(&path)?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    index_path: Option<&Path>,
    dataset: &Path,
    kind: &str,
    modes: Option<&str>,
    baseline: &str,
    out: Option<&Path>,
    budget_tokens: Option<usize>,
    concurrency: Option<usize>,
    lexicon_flag: Option<&Path>,
    weight_args: &WeightArgs,
    embedding_args: &EmbeddingArgs,
    generation_args: &GenerationArgs,
    cfg: &AppConfig,
) -> Result<()> {
    let kind: DatasetKind = kind.parse().map_err(|e: evaluation::EvalError| anyhow!(e.to_string()))?;
    let baseline: PipelineMode = baseline
        .parse()
        .map_err(|e: evaluation::EvalError| anyhow!(e.to_string()))?;
    let modes: Vec<PipelineMode> = match modes {
        Some(raw) => raw
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| m.parse().map_err(|e: evaluation::EvalError| anyhow!(e.to_string())))
            .collect::<Result<_>>()?,
        None => PipelineMode::ALL.to_vec(),
    };
    if modes.is_empty() {
        bail!("no modes to ablate");
    }
    let embedding = resolve_embedding(embedding_args, cfg)?;
    let generation = resolve_generation(generation_args, cfg)?;
    let mut configs = Vec::with_capacity(modes.len());
    for mode in &modes {
        configs.push(build_pipeline_config(
            *mode,
            weight_args,
            None,
            budget_tokens,
            concurrency,
            None,
            cfg,
            embedding.clone(),
            generation.clone(),
        )?);
    }
    let items = load_dataset(dataset, kind)?;
    let lexicon = resolve_lexicon(lexicon_flag, cfg)?;
    let needs_index = modes.iter().any(PipelineMode::uses_retrieval);
    let index = if needs_index {
        let any_rag = modes.iter().copied().find(PipelineMode::uses_retrieval).unwrap();
        load_index_if_needed(any_rag, index_path, cfg)?
    } else {
        None
    };
    let (reports, table) = evaluation::run_ablation(&configs, &items, index.as_ref(), &lexicon, baseline)?;
    print!("{}", table.render());
    if let Some(path) = out {
        #[derive(serde::Serialize)]
        struct AblationOutput<'a> {
            reports: &'a [EvalReport],
            table: &'a AblationTable,
        }
        write_json(path, &AblationOutput { reports: &reports, table: &table })?;
        println!("reports -> {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_app_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest {
            corpus,
            out,
            max_chunk_chars,
            overlap_chars,
        } => cmd_ingest(corpus, out, *max_chunk_chars, *overlap_chars, &cfg),
        Command::Index {
            chunks,
            out,
            lexicon,
            saturation,
            embedding,
        } => cmd_index(chunks, out, lexicon.as_deref(), *saturation, embedding, &cfg),
        Command::Retrieve {
            index,
            query,
            lexicon,
            show_psi,
            modifiers,
            weights,
            embedding,
        } => cmd_retrieve(
            index,
            query,
            lexicon.as_deref(),
            *show_psi,
            modifiers.as_deref(),
            weights,
            embedding,
            &cfg,
        ),
        Command::Ask {
            index,
            question,
            task,
            options,
            template,
            budget_tokens,
            lexicon,
            modifiers,
            item_id,
            weights,
            embedding,
            generation,
        } => cmd_ask(
            index,
            question,
            task,
            options,
            template.as_deref(),
            *budget_tokens,
            lexicon.as_deref(),
            modifiers.as_deref(),
            item_id.as_deref(),
            weights,
            embedding,
            generation,
            &cfg,
        ),
        Command::Eval {
            index,
            dataset,
            kind,
            mode,
            out,
            template,
            budget_tokens,
            concurrency,
            lexicon,
            modifiers,
            weights,
            embedding,
            generation,
        } => cmd_eval(
            index.as_deref(),
            dataset,
            kind,
            mode,
            out.as_deref(),
            template.as_deref(),
            *budget_tokens,
            *concurrency,
            lexicon.as_deref(),
            modifiers.as_deref(),
            weights,
            embedding,
            generation,
            &cfg,
        ),
        Command::Ablate {
            index,
            dataset,
            kind,
            modes,
            baseline,
            out,
            budget_tokens,
            concurrency,
            lexicon,
            weights,
            embedding,
            generation,
        } => cmd_ablate(
            index.as_deref(),
            dataset,
            kind,
            modes.as_deref(),
            baseline,
            out.as_deref(),
            *budget_tokens,
            *concurrency,
            lexicon.as_deref(),
            weights,
            embedding,
            generation,
            &cfg,
        ),
    }
}
