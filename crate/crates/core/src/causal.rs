//! Causal relevance scoring.
//!
//! A document's causal score ψ measures the density of causal language:
//! causal operators ("leads to", "causes", "mediates"), treatment-effect
//! relations, and mechanism descriptions. Matching is weighted, whole-word,
//! and case-insensitive; the weighted match mass is normalized by word count
//! so verbose documents gain nothing, then mapped through a saturating
//! linear ramp into [0, 1].

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Saturation default: one weighted match per 20 words saturates ψ at 1.
pub const DEFAULT_SATURATION: f64 = 0.05;

/// Version string of the built-in lexicon.
pub const BUILTIN_LEXICON_VERSION: &str = "builtin_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CausalOperator,
    TreatmentEffect,
    Mechanism,
}

/// One lexicon pattern. Matched case-insensitively as a whole-word phrase;
/// multiword patterns match across single spaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub pattern: String,
    pub weight: f64,
    pub category: Category,
}

#[derive(Debug, Clone)]
pub struct CausalLexicon {
    pub entries: Vec<LexiconEntry>,
    pub version: String,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read lexicon file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed lexicon entry at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate lexicon pattern `{pattern}` at line {line}")]
    DuplicatePattern { pattern: String, line: usize },
}

/// Weighted match mass plus per-category occurrence counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchStats {
    pub mass: f64,
    pub causal_operator: usize,
    pub treatment_effect: usize,
    pub mechanism: usize,
}

impl MatchStats {
    pub fn total_matches(&self) -> usize {
        self.causal_operator + self.treatment_effect + self.mechanism
    }
}

const W_CAUSAL_OPERATOR: f64 = 1.0;
const W_TREATMENT_EFFECT: f64 = 1.2;
const W_MECHANISM: f64 = 0.8;

/// The shipped default lexicon: treatment relations weigh more (rarer and
/// more diagnostic), mechanism vocabulary slightly less.
pub fn default_lexicon() -> CausalLexicon {
    use Category::*;
    let spec: &[(&str, Category)] = &[
        ("causes", CausalOperator),
        ("caused by", CausalOperator),
        ("leads to", CausalOperator),
        ("results in", CausalOperator),
        ("results from", CausalOperator),
        ("mediates", CausalOperator),
        ("mediated by", CausalOperator),
        ("induces", CausalOperator),
        ("induced by", CausalOperator),
        ("triggers", CausalOperator),
        ("contributes to", CausalOperator),
        ("gives rise to", CausalOperator),
        ("predisposes to", CausalOperator),
        ("precipitates", CausalOperator),
        ("underlies", CausalOperator),
        ("attributable to", CausalOperator),
        ("treated with", TreatmentEffect),
        ("responds to", TreatmentEffect),
        ("contraindicated in", TreatmentEffect),
        ("reduces the risk of", TreatmentEffect),
        ("increases the risk of", TreatmentEffect),
        ("first-line treatment", TreatmentEffect),
        ("adverse effect of", TreatmentEffect),
        ("alleviates", TreatmentEffect),
        ("prevents", TreatmentEffect),
        ("indicated for", TreatmentEffect),
        ("prophylaxis against", TreatmentEffect),
        ("pathophysiology", Mechanism),
        ("mechanism of", Mechanism),
        ("due to", Mechanism),
        ("secondary to", Mechanism),
        ("pathogenesis", Mechanism),
        ("etiology", Mechanism),
        ("deficiency of", Mechanism),
        ("dysregulation of", Mechanism),
        ("accumulation of", Mechanism),
        ("obstruction of", Mechanism),
    ];
    let entries = spec
        .iter()
        .map(|&(pattern, category)| LexiconEntry {
            pattern: pattern.to_string(),
            weight: match category {
                CausalOperator => W_CAUSAL_OPERATOR,
                TreatmentEffect => W_TREATMENT_EFFECT,
                Mechanism => W_MECHANISM,
            },
            category,
        })
        .collect();
    CausalLexicon {
        entries,
        version: BUILTIN_LEXICON_VERSION.to_string(),
    }
}

/// Load a lexicon from a JSON Lines file (one `{"pattern", "weight",
/// "category"}` object per line), or return the built-in default when no
/// path is given. Patterns are unique case-insensitively.
pub fn load_lexicon(path: Option<&Path>) -> Result<CausalLexicon, LexiconError> {
    let Some(path) = path else {
        return Ok(default_lexicon());
    };
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut entries: Vec<LexiconEntry> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LexiconEntry =
            serde_json::from_str(&line).map_err(|e| LexiconError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if entry.pattern.trim().is_empty() {
            return Err(LexiconError::Parse {
                line: line_no,
                message: "`pattern` must be nonempty".into(),
            });
        }
        if !(entry.weight > 0.0 && entry.weight.is_finite()) {
            return Err(LexiconError::Parse {
                line: line_no,
                message: format!("`weight` must be a positive finite number, got {}", entry.weight),
            });
        }
        let key = entry.pattern.to_lowercase();
        if seen.contains(&key) {
            return Err(LexiconError::DuplicatePattern {
                pattern: entry.pattern,
                line: line_no,
            });
        }
        seen.push(key);
        entries.push(entry);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    Ok(CausalLexicon {
        entries,
        version: format!("file:{stem}"),
    })
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Count non-overlapping whole-word occurrences of `pattern` in `text`.
/// Both sides must already be lowercased char slices.
fn count_occurrences(text: &[char], pattern: &[char]) -> usize {
    let n = text.len();
    let m = pattern.len();
    if m == 0 || m > n {
        return 0;
    }
    let mut count = 0;
    let mut i = 0;
    while i + m <= n {
        if text[i..i + m] == *pattern
            && (i == 0 || !is_word_char(text[i - 1]))
            && (i + m == n || !is_word_char(text[i + m]))
        {
            count += 1;
            i += m; // occurrences of the same pattern may not overlap
        } else {
            i += 1;
        }
    }
    count
}

/// Weighted match mass over all lexicon entries, with per-category counts.
/// Occurrences of distinct patterns may overlap each other.
pub fn count_matches(text: &str, lexicon: &CausalLexicon) -> MatchStats {
    let text_lc: Vec<char> = text.to_lowercase().chars().collect();
    let mut stats = MatchStats::default();
    for entry in &lexicon.entries {
        let pattern_lc: Vec<char> = entry.pattern.to_lowercase().chars().collect();
        let hits = count_occurrences(&text_lc, &pattern_lc);
        if hits == 0 {
            continue;
        }
        stats.mass += entry.weight * hits as f64;
        match entry.category {
            Category::CausalOperator => stats.causal_operator += hits,
            Category::TreatmentEffect => stats.treatment_effect += hits,
            Category::Mechanism => stats.mechanism += hits,
        }
    }
    stats
}

/// The causal relevance score ψ in [0, 1]: weighted match mass per word,
/// divided by `saturation` and clamped at 1. Word count is the
/// whitespace-separated token count, floored at 1.
pub fn causal_score(text: &str, lexicon: &CausalLexicon, saturation: f64) -> f64 {
    debug_assert!(saturation > 0.0);
    let stats = count_matches(text, lexicon);
    let words = text.split_whitespace().count().max(1) as f64;
    let density = stats.mass / words;
    (density / saturation).min(1.0)
}
