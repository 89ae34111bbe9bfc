//! Structured reasoning prompts over retrieved evidence.
//!
//! The main template (`cot_v1`) walks the model through four fixed stages:
//! clinical features, causal mechanism, differential diagnosis, evidence
//! synthesis. A generic step-by-step template (`generic_v1`) and a bare
//! template (`none`) cover the ablation arms. Every template ends
//! answerable tasks with a forced `Final Answer:` line so strict-match
//! extraction is well-defined.
//!
//! Evidence chunks are packed greedily in retrieval rank order under the
//! token budget: the first chunk that would overflow, and everything ranked
//! below it, is dropped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::ScoredDocument;

/// The four stage headers, in order, exactly as rendered.
pub const STAGE_HEADERS: [&str; 4] = [
    "Step 1 — Clinical Features",
    "Step 2 — Causal Mechanism",
    "Step 3 — Differential Diagnosis",
    "Step 4 — Evidence Synthesis & Final Answer",
];

/// Question shape: labeled multiple choice, binary yes/no, or free-form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "options")]
pub enum TaskKind {
    MultipleChoice(Vec<(char, String)>),
    YesNo,
    FreeForm,
}

impl TaskKind {
    /// Validated multiple-choice constructor: at least two options with
    /// distinct single-letter labels, kept in label order.
    pub fn multiple_choice(
        mut options: Vec<(char, String)>,
    ) -> Result<Self, PromptError> {
        if options.len() < 2 {
            return Err(PromptError::InvalidTask(
                "multiple choice requires at least 2 options".into(),
            ));
        }
        for (label, _) in &options {
            if !label.is_ascii_uppercase() {
                return Err(PromptError::InvalidTask(format!(
                    "option label `{label}` is not a single letter A-Z"
                )));
            }
        }
        options.sort_by_key(|(label, _)| *label);
        if options.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(PromptError::InvalidTask(
                "duplicate option labels".into(),
            ));
        }
        Ok(Self::MultipleChoice(options))
    }

    pub fn labels(&self) -> Vec<char> {
        match self {
            Self::MultipleChoice(options) => options.iter().map(|(l, _)| *l).collect(),
            _ => Vec::new(),
        }
    }
}

/// Prompt template selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    CotV1,
    GenericV1,
    None,
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CotV1 => "cot_v1",
            Self::GenericV1 => "generic_v1",
            Self::None => "none",
        })
    }
}

impl FromStr for TemplateName {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot_v1" => Ok(Self::CotV1),
            "generic_v1" => Ok(Self::GenericV1),
            "none" => Ok(Self::None),
            other => Err(PromptError::UnknownTemplate(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt budget too small: template plus question needs {required} tokens, budget is {budget}")]
    BudgetExceeded { required: usize, budget: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("unknown template `{0}` (expected cot_v1, generic_v1, or none)")]
    UnknownTemplate(String),
}

/// A fully rendered prompt plus its packing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub rendered: String,
    pub task: TaskKind,
    pub included_chunk_ids: Vec<String>,
    pub token_estimate: usize,
    pub dropped_chunks: usize,
    system_len: usize,
}

impl PromptBundle {
    /// The system half of the prompt (preamble / schema statement).
    pub fn system_text(&self) -> &str {
        &self.rendered[..self.system_len]
    }

    /// The user half: evidence, question, and answer instructions.
    pub fn user_text(&self) -> &str {
        self.rendered[self.system_len..].trim_start_matches('\n')
    }
}

/// Deterministic token estimate: ceil(character count / 4). A documented
/// heuristic standing in for model-specific tokenizers.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn system_preamble(template: TemplateName) -> String {
    match template {
        TemplateName::CotV1 => format!(
            "You are a careful clinical reasoning assistant. Work through the \
             problem in four stages, writing each stage header on its own line \
             before its content:\n{}\n{}\n{}\n{}\nName the findings first, \
             connect them causally, weigh the alternatives, and only then \
             commit to an answer.",
            STAGE_HEADERS[0], STAGE_HEADERS[1], STAGE_HEADERS[2], STAGE_HEADERS[3]
        ),
        TemplateName::GenericV1 => {
            "You are a helpful medical assistant. Let's think step by step.".to_string()
        }
        TemplateName::None => {
            "You are a helpful medical assistant. Answer the question.".to_string()
        }
    }
}

fn evidence_line(rank: usize, doc: &ScoredDocument) -> String {
    format!("[Evidence {}] (source: {}) {}\n", rank, doc.chunk_id, doc.text)
}

fn instruction_block(template: TemplateName, task: &TaskKind) -> String {
    match task {
        TaskKind::MultipleChoice(options) => {
            let labels: Vec<String> = options.iter().map(|(l, _)| l.to_string()).collect();
            format!(
                "After your reasoning, end your response with exactly one line \
                 of the form \"Final Answer: <LETTER>\" where <LETTER> is one \
                 of {}.",
                labels.join(", ")
            )
        }
        TaskKind::YesNo => "After your reasoning, end your response with exactly one line: \
             \"Final Answer: yes\" or \"Final Answer: no\"."
            .to_string(),
        TaskKind::FreeForm => match template {
            TemplateName::CotV1 => {
                "Elaborate through all four stages above and state your conclusion \
                 in the last stage."
                    .to_string()
            }
            _ => "Explain your reasoning, then state your conclusion.".to_string(),
        },
    }
}

fn options_block(task: &TaskKind) -> String {
    match task {
        TaskKind::MultipleChoice(options) => {
            let mut out = String::from("Options:\n");
            for (label, text) in options {
                out.push_str(&format!("{label}. {text}\n"));
            }
            out
        }
        _ => String::new(),
    }
}

fn render(
    template: TemplateName,
    question: &str,
    task: &TaskKind,
    included: &[&ScoredDocument],
) -> (String, usize) {
    let system = system_preamble(template);
    let mut user = String::new();
    let with_section = matches!(template, TemplateName::CotV1 | TemplateName::GenericV1);
    if with_section || !included.is_empty() {
        user.push_str("Evidence:\n");
        for (i, doc) in included.iter().enumerate() {
            user.push_str(&evidence_line(i + 1, doc));
        }
        user.push('\n');
    }
    user.push_str(&format!("Question: {question}\n"));
    let options = options_block(task);
    if !options.is_empty() {
        user.push('\n');
        user.push_str(&options);
    }
    let instruction = instruction_block(template, task);
    if !instruction.is_empty() {
        user.push('\n');
        user.push_str(&instruction);
    }
    let system_len = system.len();
    (format!("{system}\n\n{user}"), system_len)
}

/// Render a prompt under a token budget, packing evidence greedily in rank
/// order. Errors when the template plus question alone exceed the budget.
pub fn build_prompt(
    template: TemplateName,
    question: &str,
    task: &TaskKind,
    docs: &[ScoredDocument],
    budget_tokens: usize,
) -> Result<PromptBundle, PromptError> {
    let (base, _) = render(template, question, task, &[]);
    let base_chars = base.chars().count();
    if estimate_tokens(&base) > budget_tokens {
        return Err(PromptError::BudgetExceeded {
            required: estimate_tokens(&base),
            budget: budget_tokens,
        });
    }
    // `none` adds its section header together with the first evidence line.
    let section_chars = if matches!(template, TemplateName::None) && !docs.is_empty() {
        "Evidence:\n".chars().count() + 1 // plus the blank line after the section
    } else {
        0
    };
    let mut total_chars = base_chars;
    let mut included = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let mut cost = evidence_line(i + 1, doc).chars().count();
        if included == 0 {
            cost += section_chars;
        }
        if (total_chars + cost).div_ceil(4) > budget_tokens {
            break;
        }
        total_chars += cost;
        included = i + 1;
    }
    let picked: Vec<&ScoredDocument> = docs[..included].iter().collect();
    let (rendered, system_len) = render(template, question, task, &picked);
    debug_assert_eq!(rendered.chars().count(), total_chars);
    let token_estimate = estimate_tokens(&rendered);
    debug_assert!(token_estimate <= budget_tokens);
    Ok(PromptBundle {
        included_chunk_ids: picked.iter().map(|d| d.chunk_id.clone()).collect(),
        token_estimate,
        dropped_chunks: docs.len() - included,
        rendered,
        task: task.clone(),
        system_len,
    })
}

/// The four-stage causal reasoning prompt (template `cot_v1`).
pub fn build_causal_cot_prompt(
    question: &str,
    task: &TaskKind,
    docs: &[ScoredDocument],
    budget_tokens: usize,
) -> Result<PromptBundle, PromptError> {
    build_prompt(TemplateName::CotV1, question, task, docs, budget_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> ScoredDocument {
        ScoredDocument {
            chunk_id: id.into(),
            sim: 0.5,
            psi: 0.1,
            composite: 0.38,
            text: text.into(),
        }
    }

    fn count_occurrences(haystack: &str, needle: &str) -> usize {
        haystack.match_indices(needle).count()
    }

    fn assert_headers_once_in_order(rendered: &str) {
        let mut last = 0;
        for header in STAGE_HEADERS {
            assert_eq!(
                count_occurrences(rendered, header),
                1,
                "header {header:?} count != 1"
            );
            let pos = rendered.find(header).unwrap();
            assert!(pos >= last, "header {header:?} out of order");
            last = pos;
        }
    }

    #[test]
    fn token_estimate_is_ceil_quarter_chars() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens("123456789"), 3);
        assert_eq!(estimate_tokens("é"), 1);
    }

    #[test]
    fn free_form_no_docs_has_all_headers_and_empty_evidence() {
        let bundle =
            build_causal_cot_prompt("What causes anemia?", &TaskKind::FreeForm, &[], 4096)
                .unwrap();
        assert_headers_once_in_order(&bundle.rendered);
        assert_eq!(bundle.dropped_chunks, 0);
        assert!(bundle.included_chunk_ids.is_empty());
        assert!(bundle.rendered.contains("Evidence:\n\n"));
        assert!(bundle.rendered.contains("Question: What causes anemia?"));
    }

    #[test]
    fn greedy_packing_matches_hand_trace() {
        // Five evidence lines of exactly 4000 chars (1000 tokens) each and
        // a base well under 2000 chars: 3 fit in 3500, 2 drop.
        let docs: Vec<ScoredDocument> = (0..5)
            .map(|i| {
                let id = format!("d#{i}");
                let prefix_len = evidence_line(i + 1, &doc(&id, "")).chars().count();
                let text = "x".repeat(4000 - prefix_len);
                doc(&id, &text)
            })
            .collect();
        for (i, d) in docs.iter().enumerate() {
            assert_eq!(evidence_line(i + 1, d).chars().count(), 4000);
        }
        let bundle = build_causal_cot_prompt("Q?", &TaskKind::FreeForm, &docs, 3500).unwrap();
        assert_eq!(bundle.included_chunk_ids.len(), 3);
        assert_eq!(bundle.dropped_chunks, 2);
        assert!(bundle.token_estimate <= 3500);
        assert_eq!(
            bundle.included_chunk_ids,
            vec!["d#0".to_string(), "d#1".into(), "d#2".into()]
        );
    }

    #[test]
    fn mcq_prompt_lists_options_and_final_answer_contract() {
        let task = TaskKind::multiple_choice(vec![
            ('A', "aspirin".into()),
            ('B', "heparin".into()),
            ('C', "warfarin".into()),
            ('D', "none".into()),
        ])
        .unwrap();
        let bundle = build_causal_cot_prompt("Best drug?", &task, &[], 4096).unwrap();
        for label in ["A. aspirin", "B. heparin", "C. warfarin", "D. none"] {
            assert!(bundle.rendered.contains(label), "missing {label:?}");
        }
        assert!(bundle.rendered.contains("Final Answer:"));
    }

    #[test]
    fn yes_no_prompt_has_both_terminal_forms() {
        let bundle =
            build_causal_cot_prompt("Is it viral?", &TaskKind::YesNo, &[], 4096).unwrap();
        assert!(bundle.rendered.contains("Final Answer: yes"));
        assert!(bundle.rendered.contains("Final Answer: no"));
    }

    #[test]
    fn budget_smaller_than_template_errors() {
        let err = build_causal_cot_prompt("Q?", &TaskKind::FreeForm, &[], 10).unwrap_err();
        assert!(matches!(err, PromptError::BudgetExceeded { budget: 10, .. }));
    }

    #[test]
    fn rendering_is_deterministic() {
        let docs = vec![doc("a#0", "alpha text"), doc("b#0", "beta text")];
        let a = build_causal_cot_prompt("Q?", &TaskKind::YesNo, &docs, 4096).unwrap();
        let b = build_causal_cot_prompt("Q?", &TaskKind::YesNo, &docs, 4096).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evidence_lines_carry_rank_and_source() {
        let docs = vec![doc("p#7", "first"), doc("q#2", "second")];
        let bundle = build_causal_cot_prompt("Q?", &TaskKind::FreeForm, &docs, 4096).unwrap();
        assert!(bundle.rendered.contains("[Evidence 1] (source: p#7) first"));
        assert!(bundle.rendered.contains("[Evidence 2] (source: q#2) second"));
        let p1 = bundle.rendered.find("[Evidence 1]").unwrap();
        let p2 = bundle.rendered.find("[Evidence 2]").unwrap();
        assert!(p1 < p2);
    }

    #[test]
    fn system_user_split_reassembles() {
        let bundle =
            build_causal_cot_prompt("Q?", &TaskKind::FreeForm, &[doc("a#0", "t")], 4096).unwrap();
        assert!(bundle.system_text().starts_with("You are a careful clinical"));
        assert!(bundle.user_text().starts_with("Evidence:"));
        let reassembled = format!("{}\n\n{}", bundle.system_text(), bundle.user_text());
        assert_eq!(reassembled, bundle.rendered);
    }

    #[test]
    fn generic_template_skips_stage_headers_but_keeps_contract() {
        let bundle = build_prompt(
            TemplateName::GenericV1,
            "Q?",
            &TaskKind::YesNo,
            &[doc("a#0", "t")],
            4096,
        )
        .unwrap();
        for header in STAGE_HEADERS {
            assert_eq!(count_occurrences(&bundle.rendered, header), 0);
        }
        assert!(bundle.rendered.contains("step by step"));
        assert!(bundle.rendered.contains("Final Answer:"));
    }

    #[test]
    fn bare_template_omits_evidence_section_without_docs() {
        let bundle =
            build_prompt(TemplateName::None, "Q?", &TaskKind::YesNo, &[], 4096).unwrap();
        assert!(!bundle.rendered.contains("Evidence:"));
        assert!(bundle.rendered.contains("Question: Q?"));
        assert!(bundle.rendered.contains("Final Answer:"));

        let with_docs = build_prompt(
            TemplateName::None,
            "Q?",
            &TaskKind::YesNo,
            &[doc("a#0", "t")],
            4096,
        )
        .unwrap();
        assert!(with_docs.rendered.contains("Evidence:"));
    }

    #[test]
    fn task_validation_rejects_bad_option_sets() {
        assert!(TaskKind::multiple_choice(vec![('A', "one".into())]).is_err());
        assert!(TaskKind::multiple_choice(vec![
            ('A', "one".into()),
            ('A', "two".into())
        ])
        .is_err());
        assert!(TaskKind::multiple_choice(vec![
            ('a', "one".into()),
            ('B', "two".into())
        ])
        .is_err());
        let ok = TaskKind::multiple_choice(vec![('B', "two".into()), ('A', "one".into())]).unwrap();
        assert_eq!(ok.labels(), vec!['A', 'B']);
    }

    #[test]
    fn template_names_round_trip() {
        for (s, t) in [
            ("cot_v1", TemplateName::CotV1),
            ("generic_v1", TemplateName::GenericV1),
            ("none", TemplateName::None),
        ] {
            assert_eq!(s.parse::<TemplateName>().unwrap(), t);
            assert_eq!(t.to_string(), s);
        }
        assert!("fancy".parse::<TemplateName>().is_err());
    }
}
