//! Answer generation and final-answer extraction.
//!
//! Prompts go to one of two providers: a remote chat-completion endpoint
//! (retried on transport/HTTP failure with exponential backoff) or a
//! scripted mock keyed by item id, which makes whole evaluation runs pure
//! functions of their inputs. Extraction of the terminal `Final Answer:`
//! line is deterministic and total: unparseable output is a value, never a
//! crash.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::concurrency::Semaphore;
use crate::prompt::PromptBundle;

/// Default generation budget.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 256;
/// Default decoding temperature (greedy).
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
/// Default in-flight request bound.
pub const DEFAULT_GEN_MAX_IN_FLIGHT: usize = 4;
/// Default backoff base between retries.
pub const DEFAULT_RETRY_BASE_MS: u64 = 250;
/// Transport/HTTP failures are retried this many times after the first try.
pub const MAX_RETRIES: u32 = 2;

/// Which backend produces completions.
#[derive(Debug, Clone)]
pub enum GenProviderKind {
    RemoteChat {
        endpoint_url: String,
        model_name: String,
        api_key_env_var: Option<String>,
    },
    ScriptedMock {
        script_path: PathBuf,
    },
}

/// Generation provider settings. Decoding defaults: up to 256 new tokens,
/// temperature 0.
#[derive(Debug, Clone)]
pub struct GenProviderConfig {
    pub kind: GenProviderKind,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub retry_base_ms: u64,
}

impl GenProviderConfig {
    pub fn remote(endpoint_url: &str, model_name: &str) -> Self {
        Self {
            kind: GenProviderKind::RemoteChat {
                endpoint_url: endpoint_url.to_string(),
                model_name: model_name.to_string(),
                api_key_env_var: None,
            },
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            timeout_ms: 30_000,
            max_in_flight: DEFAULT_GEN_MAX_IN_FLIGHT,
            retry_base_ms: DEFAULT_RETRY_BASE_MS,
        }
    }

    pub fn mock(script_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: GenProviderKind::ScriptedMock {
                script_path: script_path.into(),
            },
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            timeout_ms: 30_000,
            max_in_flight: DEFAULT_GEN_MAX_IN_FLIGHT,
            retry_base_ms: DEFAULT_RETRY_BASE_MS,
        }
    }

    pub fn descriptor(&self) -> String {
        match &self.kind {
            GenProviderKind::RemoteChat { model_name, .. } => {
                format!(
                    "remote_chat(model={model_name},max_tokens={},temp={})",
                    self.max_new_tokens, self.temperature
                )
            }
            GenProviderKind::ScriptedMock { script_path } => {
                format!("scripted_mock({})", script_path.display())
            }
        }
    }
}

/// One model completion, tagged with the hash of the exact prompt bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub provider_meta: String,
    pub prompt_hash: String,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("failed to read mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed mock script at line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("no scripted response for item `{item}` and no default row")]
    ScriptMissing { item: String },
    #[error("generation failed for item `{item}` after {attempts} attempts: {cause}")]
    Exhausted {
        item: String,
        attempts: u32,
        cause: String,
    },
    #[error("generation provider error for item `{item}`: {message}")]
    Provider { item: String, message: String },
    #[error("api key env var `{0}` is configured but not set")]
    MissingApiKey(String),
}

/// Stable hex SHA-256 of the exact prompt bytes.
pub fn prompt_hash(rendered: &str) -> String {
    let digest = Sha256::digest(rendered.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
struct ScriptRow {
    item_id: String,
    response: String,
}

#[derive(Debug, Default)]
struct MockScript {
    responses: HashMap<String, String>,
    default: Option<String>,
}

impl MockScript {
    /// JSON Lines: `{"item_id": s, "response": s}` per line; an `item_id`
    /// of `"*"` supplies the default response.
    fn load(path: &PathBuf) -> Result<Self, GenError> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        let mut script = MockScript::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ScriptRow = serde_json::from_str(&line).map_err(|e| GenError::Script {
                line: line_no,
                message: e.to_string(),
            })?;
            if row.item_id == "*" {
                if script.default.is_some() {
                    return Err(GenError::Script {
                        line: line_no,
                        message: "duplicate default (`*`) row".into(),
                    });
                }
                script.default = Some(row.response);
            } else if script.responses.insert(row.item_id.clone(), row.response).is_some() {
                return Err(GenError::Script {
                    line: line_no,
                    message: format!("duplicate item_id `{}`", row.item_id),
                });
            }
        }
        Ok(script)
    }

    fn lookup(&self, item_id: Option<&str>) -> Option<&str> {
        item_id
            .and_then(|id| self.responses.get(id))
            .or(self.default.as_ref())
            .map(String::as_str)
    }
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// A ready-to-use generation provider. Concurrent `generate` calls are
/// bounded by the configured in-flight limit.
pub struct GenClient {
    config: GenProviderConfig,
    http: Option<reqwest::blocking::Client>,
    script: Option<MockScript>,
    gate: Semaphore,
}

impl GenClient {
    pub fn new(config: GenProviderConfig) -> Result<Self, GenError> {
        let (http, script) = match &config.kind {
            GenProviderKind::RemoteChat { .. } => {
                let http = reqwest::blocking::Client::builder()
                    .timeout(std::time::Duration::from_millis(config.timeout_ms))
                    .build()
                    .map_err(|e| GenError::Provider {
                        item: "-".into(),
                        message: e.to_string(),
                    })?;
                (Some(http), None)
            }
            GenProviderKind::ScriptedMock { script_path } => {
                (None, Some(MockScript::load(script_path)?))
            }
        };
        let gate = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            http,
            script,
            gate,
        })
    }

    pub fn config(&self) -> &GenProviderConfig {
        &self.config
    }

    pub fn descriptor(&self) -> String {
        self.config.descriptor()
    }

    /// Produce a completion for the prompt. `item_id` is the request
    /// metadata the scripted mock keys on; it also labels errors.
    pub fn generate(
        &self,
        prompt: &PromptBundle,
        item_id: Option<&str>,
    ) -> Result<Completion, GenError> {
        let hash = prompt_hash(&prompt.rendered);
        match &self.config.kind {
            GenProviderKind::ScriptedMock { .. } => {
                let script = self.script.as_ref().expect("mock client has script");
                let text = script.lookup(item_id).ok_or_else(|| GenError::ScriptMissing {
                    item: item_id.unwrap_or("-").to_string(),
                })?;
                Ok(Completion {
                    text: text.to_string(),
                    provider_meta: "scripted_mock".into(),
                    prompt_hash: hash,
                })
            }
            GenProviderKind::RemoteChat {
                endpoint_url,
                model_name,
                api_key_env_var,
            } => {
                let item = item_id.unwrap_or("-").to_string();
                let key = match api_key_env_var {
                    Some(var) => Some(
                        std::env::var(var).map_err(|_| GenError::MissingApiKey(var.clone()))?,
                    ),
                    None => None,
                };
                let body = serde_json::json!({
                    "model": model_name,
                    "messages": [
                        {"role": "system", "content": prompt.system_text()},
                        {"role": "user", "content": prompt.user_text()},
                    ],
                    "max_tokens": self.config.max_new_tokens,
                    "temperature": self.config.temperature,
                });
                let http = self.http.as_ref().expect("remote client has http");
                let attempts = MAX_RETRIES + 1;
                let mut last_cause = String::new();
                for attempt in 0..attempts {
                    if attempt > 0 {
                        let backoff = self.config.retry_base_ms << (attempt - 1);
                        std::thread::sleep(std::time::Duration::from_millis(backoff));
                    }
                    let _permit = self.gate.acquire();
                    let started = std::time::Instant::now();
                    let mut req = http.post(endpoint_url).json(&body);
                    if let Some(key) = &key {
                        req = req.bearer_auth(key);
                    }
                    match req.send() {
                        Err(e) => last_cause = format!("request failed: {e}"),
                        Ok(resp) if !resp.status().is_success() => {
                            last_cause = format!("endpoint returned HTTP {}", resp.status());
                        }
                        Ok(resp) => {
                            let parsed: ChatResponse =
                                resp.json().map_err(|e| GenError::Provider {
                                    item: item.clone(),
                                    message: format!("bad response body: {e}"),
                                })?;
                            let choice =
                                parsed.choices.into_iter().next().ok_or_else(|| {
                                    GenError::Provider {
                                        item: item.clone(),
                                        message: "response has no choices".into(),
                                    }
                                })?;
                            return Ok(Completion {
                                text: choice.message.content,
                                provider_meta: format!(
                                    "model={model_name} latency_ms={}",
                                    started.elapsed().as_millis()
                                ),
                                prompt_hash: hash,
                            });
                        }
                    }
                }
                Err(GenError::Exhausted {
                    item,
                    attempts,
                    cause: last_cause,
                })
            }
        }
    }
}

fn mcq_primary_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)final\s+answer[\s:,.;\-–—()\[\]*'"`]*([A-Za-z])([^A-Za-z0-9]|$)"#)
            .expect("static regex compiles")
    })
}

fn yesno_primary_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)final\s+answer[\s:,.;\-–—()\[\]*'"`]*(yes|no)\b"#)
            .expect("static regex compiles")
    })
}

fn yesno_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex compiles"))
}

fn final_nonempty_line(text: &str) -> Option<&str> {
    text.lines().rev().find(|l| !l.trim().is_empty())
}

/// All standalone single letters on a line (plain, parenthesized, or
/// punctuation-adjacent), uppercased, in order of appearance.
fn standalone_letters(line: &str) -> Vec<char> {
    let chars: Vec<char> = line.chars().collect();
    let is_alnum = |c: char| c.is_ascii_alphanumeric();
    let mut found = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let prev_ok = i == 0 || !is_alnum(chars[i - 1]);
        let next_ok = i + 1 == chars.len() || !is_alnum(chars[i + 1]);
        if prev_ok && next_ok {
            found.push(c.to_ascii_uppercase());
        }
    }
    found
}

/// Pull the chosen letter out of a completion.
///
/// The last case-insensitive `final answer ... <letter>` occurrence wins;
/// when that is absent or names an invalid label, the last standalone valid
/// letter on the final non-empty line is used. `None` means unparseable
/// (scored as incorrect, never a crash).
pub fn extract_mcq_answer(text: &str, valid_labels: &[char]) -> Option<char> {
    if valid_labels.is_empty() {
        return None;
    }
    if let Some(caps) = mcq_primary_re().captures_iter(text).last() {
        let letter = caps[1].chars().next()?.to_ascii_uppercase();
        if valid_labels.contains(&letter) {
            return Some(letter);
        }
    }
    let line = final_nonempty_line(text)?;
    standalone_letters(line)
        .into_iter()
        .filter(|l| valid_labels.contains(l))
        .next_back()
}

/// Binary answer, extracted like [`extract_mcq_answer`] with the target
/// `final answer: yes|no`, falling back to the last standalone yes/no token
/// on the final non-empty line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNoAnswer {
    Yes,
    No,
}

impl YesNoAnswer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Yes => "yes",
            Self::No => "no",
        }
    }
}

pub fn extract_yesno_answer(text: &str) -> Option<YesNoAnswer> {
    let to_answer = |s: &str| {
        if s.eq_ignore_ascii_case("yes") {
            YesNoAnswer::Yes
        } else {
            YesNoAnswer::No
        }
    };
    if let Some(caps) = yesno_primary_re().captures_iter(text).last() {
        return Some(to_answer(&caps[1]));
    }
    let line = final_nonempty_line(text)?;
    yesno_token_re()
        .captures_iter(line)
        .last()
        .map(|caps| to_answer(&caps[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_causal_cot_prompt, TaskKind};
    use proptest::prelude::*;
    use std::io::Write as _;

    const ABCD: [char; 4] = ['A', 'B', 'C', 'D'];

    fn write_script(rows: &[(&str, &str)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for (id, resp) in rows {
            let row = serde_json::json!({"item_id": id, "response": resp});
            writeln!(f, "{row}").unwrap();
        }
        f
    }

    fn sample_prompt() -> PromptBundle {
        build_causal_cot_prompt("Q?", &TaskKind::FreeForm, &[], 4096).unwrap()
    }

    #[test]
    fn mock_returns_scripted_text_by_item_id() {
        let f = write_script(&[("q1", "reasoning...\nFinal Answer: B")]);
        let client = GenClient::new(GenProviderConfig::mock(f.path())).unwrap();
        let got = client.generate(&sample_prompt(), Some("q1")).unwrap();
        assert_eq!(got.text, "reasoning...\nFinal Answer: B");
        assert_eq!(got.provider_meta, "scripted_mock");
    }

    #[test]
    fn mock_falls_back_to_default_row() {
        let f = write_script(&[("q1", "specific"), ("*", "default answer")]);
        let client = GenClient::new(GenProviderConfig::mock(f.path())).unwrap();
        assert_eq!(
            client.generate(&sample_prompt(), Some("q9")).unwrap().text,
            "default answer"
        );
        assert_eq!(
            client.generate(&sample_prompt(), None).unwrap().text,
            "default answer"
        );
    }

    #[test]
    fn mock_without_match_or_default_errors() {
        let f = write_script(&[("q1", "specific")]);
        let client = GenClient::new(GenProviderConfig::mock(f.path())).unwrap();
        assert!(matches!(
            client.generate(&sample_prompt(), Some("q9")),
            Err(GenError::ScriptMissing { item }) if item == "q9"
        ));
    }

    #[test]
    fn mock_rejects_duplicate_rows() {
        let f = write_script(&[("q1", "a"), ("q1", "b")]);
        assert!(matches!(
            GenClient::new(GenProviderConfig::mock(f.path())),
            Err(GenError::Script { line: 2, .. })
        ));
    }

    #[test]
    fn prompt_hash_is_stable_and_prompt_sensitive() {
        let a = prompt_hash("hello");
        let b = prompt_hash("hello");
        let c = prompt_hash("hello!");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);

        let f = write_script(&[("*", "x")]);
        let client = GenClient::new(GenProviderConfig::mock(f.path())).unwrap();
        let p = sample_prompt();
        let c1 = client.generate(&p, None).unwrap();
        let c2 = client.generate(&p, None).unwrap();
        assert_eq!(c1.prompt_hash, c2.prompt_hash);
        assert_eq!(c1.prompt_hash, prompt_hash(&p.rendered));
    }

    #[test]
    fn mcq_primary_pattern_wins() {
        assert_eq!(
            extract_mcq_answer("lots of reasoning... Final Answer: C", &ABCD),
            Some('C')
        );
        assert_eq!(extract_mcq_answer("FINAL ANSWER (d)", &ABCD), Some('D'));
        assert_eq!(extract_mcq_answer("final answer - b.", &ABCD), Some('B'));
        assert_eq!(
            extract_mcq_answer("Final Answer: A\nFinal Answer: B", &ABCD),
            Some('B'),
            "last occurrence wins"
        );
    }

    #[test]
    fn mcq_fallback_reads_final_line() {
        assert_eq!(extract_mcq_answer("the answer is (b).", &ABCD), Some('B'));
        assert_eq!(extract_mcq_answer("so we pick C\n\n", &ABCD), Some('C'));
        assert_eq!(
            extract_mcq_answer("maybe A, but really D", &ABCD),
            Some('D'),
            "last standalone valid letter wins"
        );
    }

    #[test]
    fn mcq_unparseable_cases() {
        assert_eq!(extract_mcq_answer("I cannot determine this.", &ABCD), None);
        assert_eq!(extract_mcq_answer("", &ABCD), None);
        assert_eq!(extract_mcq_answer("Final Answer: Z", &['A', 'B']), None);
        assert_eq!(extract_mcq_answer("Final Answer: B", &[]), None);
    }

    #[test]
    fn mcq_invalid_primary_letter_falls_back() {
        // primary letter X is not a label; final line holds a valid one
        assert_eq!(
            extract_mcq_answer("Final Answer: X\nthe best option is (a)", &ABCD),
            Some('A')
        );
    }

    #[test]
    fn yesno_examples() {
        assert_eq!(
            extract_yesno_answer("because...\nFinal Answer: no"),
            Some(YesNoAnswer::No)
        );
        assert_eq!(
            extract_yesno_answer("Yes, because ...\nFinal answer: yes"),
            Some(YesNoAnswer::Yes)
        );
        assert_eq!(extract_yesno_answer("possibly"), None);
        assert_eq!(
            extract_yesno_answer("the data says no"),
            Some(YesNoAnswer::No)
        );
        assert_eq!(extract_yesno_answer("nope, nothing"), None);
    }

    proptest! {
        // Appending the terminal line dominates all earlier content.
        #[test]
        fn terminal_line_dominates(s in ".{0,200}", label_idx in 0usize..4) {
            let label = ABCD[label_idx];
            let text = format!("{s}\nFinal Answer: {label}");
            prop_assert_eq!(extract_mcq_answer(&text, &ABCD), Some(label));
        }

        #[test]
        fn extraction_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = extract_mcq_answer(&text, &ABCD);
            let _ = extract_yesno_answer(&text);
        }
    }
}
