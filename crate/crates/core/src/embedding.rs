//! Dense vectors for queries and chunks, and the semantic similarity term.
//!
//! Two providers are available behind one config: a deterministic local
//! signed 3-gram hash embedder (no model weights, fully reproducible) and a
//! remote HTTP provider speaking the common embeddings-API wire shape. All
//! vectors are L2-normalized on receipt, so cosine similarity reduces to a
//! dot product at query time.

use serde::Deserialize;
use thiserror::Error;

use crate::concurrency::Semaphore;

/// Default in-flight request bound for the remote provider.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Default dimension of the local hash embedder.
pub const DEFAULT_LOCAL_DIM: usize = 256;

/// Batch size used when sending texts to the remote provider.
const REMOTE_BATCH: usize = 64;

/// A fixed-dimension real vector. All components are finite; when
/// `normalized` is set the Euclidean norm is 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("embed_texts requires a nonempty list of nonempty texts")]
    EmptyInput,
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("provider returned {got} vectors for {expected} inputs (count mismatch)")]
    CountMismatch { expected: usize, got: usize },
    #[error("api key env var `{0}` is configured but not set")]
    MissingApiKey(String),
}

impl EmbeddingVector {
    /// Wrap raw components, rejecting NaN and infinities.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Scale to unit Euclidean norm. Zero vectors are an error.
    pub fn into_normalized(mut self) -> Result<Self, EmbeddingError> {
        if self.normalized {
            return Ok(self);
        }
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        for v in &mut self.values {
            *v = (*v as f64 / norm) as f32;
        }
        self.normalized = true;
        Ok(self)
    }

    pub(crate) fn from_unit_values(values: Vec<f32>) -> Self {
        Self {
            values,
            normalized: true,
        }
    }
}

/// Provider selection: deterministic local hashing or a remote HTTP service.
#[derive(Debug, Clone)]
pub enum EmbeddingProviderConfig {
    LocalHash {
        dim: usize,
    },
    RemoteHttp {
        endpoint_url: String,
        model_name: String,
        dim: usize,
        timeout_ms: u64,
        api_key_env_var: Option<String>,
        max_in_flight: usize,
    },
}

impl EmbeddingProviderConfig {
    pub fn local(dim: usize) -> Self {
        Self::LocalHash { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::LocalHash { dim } => *dim,
            Self::RemoteHttp { dim, .. } => *dim,
        }
    }

    /// Short descriptor recorded in index headers and eval reports.
    pub fn descriptor(&self) -> String {
        match self {
            Self::LocalHash { dim } => format!("local_hash(dim={dim})"),
            Self::RemoteHttp {
                model_name, dim, ..
            } => format!("remote_http(model={model_name},dim={dim})"),
        }
    }
}

/// Cosine similarity dot(a,b)/(|a||b|), clamped to [-1, 1] to absorb
/// rounding. Dimension mismatch and zero-norm inputs are errors.
pub fn cosine_similarity(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// FNV-1a, 64-bit: offset 0xcbf29ce484222325, prime 0x100000001b3.
fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic signed 3-gram hash embedding.
///
/// The text is lowercased and every consecutive character 3-gram is hashed
/// with FNV-1a (64-bit). Each hash adds ±1 to bucket `hash % dim` (positive
/// when bit 63 is clear), and the result is L2-normalized. Empty or
/// all-whitespace text (or any text too short to produce a 3-gram) yields
/// the unit vector e0.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 8, "hash_embed requires dim >= 8, got {dim}");
    let make_e0 = || {
        let mut values = vec![0.0f32; dim];
        values[0] = 1.0;
        EmbeddingVector::from_unit_values(values)
    };
    if text.trim().is_empty() {
        return make_e0();
    }
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    if chars.len() < 3 {
        return make_e0();
    }
    let mut acc = vec![0.0f64; dim];
    let mut buf = [0u8; 12];
    for gram in chars.windows(3) {
        let mut len = 0;
        for &c in gram {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a64(&buf[..len]);
        let bucket = (h % dim as u64) as usize;
        if h >> 63 == 0 {
            acc[bucket] += 1.0;
        } else {
            acc[bucket] -= 1.0;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return make_e0();
    }
    let values = acc.iter().map(|v| (v / norm) as f32).collect();
    EmbeddingVector::from_unit_values(values)
}

/// A ready-to-use embedding provider. Stateless after construction;
/// concurrent [`EmbeddingClient::embed_texts`] calls are permitted, with
/// remote in-flight requests bounded by the configured limit.
pub struct EmbeddingClient {
    config: EmbeddingProviderConfig,
    http: Option<reqwest::blocking::Client>,
    gate: Option<Semaphore>,
}

#[derive(Deserialize)]
struct RemoteEmbeddingRow {
    index: usize,
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct RemoteEmbeddingResponse {
    data: Vec<RemoteEmbeddingRow>,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbeddingError> {
        match &config {
            EmbeddingProviderConfig::LocalHash { dim } => {
                if *dim < 8 {
                    return Err(EmbeddingError::Provider(format!(
                        "local_hash dim must be >= 8, got {dim}"
                    )));
                }
                Ok(Self {
                    config,
                    http: None,
                    gate: None,
                })
            }
            EmbeddingProviderConfig::RemoteHttp {
                endpoint_url,
                timeout_ms,
                max_in_flight,
                ..
            } => {
                if endpoint_url.trim().is_empty() {
                    return Err(EmbeddingError::Provider(
                        "remote_http requires a nonempty endpoint_url".into(),
                    ));
                }
                let http = reqwest::blocking::Client::builder()
                    .timeout(std::time::Duration::from_millis(*timeout_ms))
                    .build()
                    .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
                let gate = Semaphore::new(*max_in_flight);
                Ok(Self {
                    config,
                    http: Some(http),
                    gate: Some(gate),
                })
            }
        }
    }

    pub fn config(&self) -> &EmbeddingProviderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn descriptor(&self) -> String {
        self.config.descriptor()
    }

    /// Embed a batch of texts, order-preserving, one unit-norm vector per
    /// input. The list and every text must be nonempty.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
            return Err(EmbeddingError::EmptyInput);
        }
        match &self.config {
            EmbeddingProviderConfig::LocalHash { dim } => {
                Ok(texts.iter().map(|t| hash_embed(t, *dim)).collect())
            }
            EmbeddingProviderConfig::RemoteHttp { .. } => {
                let mut out = Vec::with_capacity(texts.len());
                for batch in texts.chunks(REMOTE_BATCH) {
                    out.extend(self.embed_remote_batch(batch)?);
                }
                Ok(out)
            }
        }
    }

    /// Convenience wrapper for a single text.
    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let v = self.embed_texts(std::slice::from_ref(&text.to_string()))?;
        Ok(v.into_iter().next().expect("one vector per input"))
    }

    fn embed_remote_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let EmbeddingProviderConfig::RemoteHttp {
            endpoint_url,
            model_name,
            dim,
            api_key_env_var,
            ..
        } = &self.config
        else {
            unreachable!("embed_remote_batch called on local provider");
        };
        let http = self.http.as_ref().expect("remote client has http");
        let body = serde_json::json!({ "model": model_name, "input": texts });
        let mut req = http.post(endpoint_url).json(&body);
        if let Some(var) = api_key_env_var {
            let key = std::env::var(var).map_err(|_| EmbeddingError::MissingApiKey(var.clone()))?;
            req = req.bearer_auth(key);
        }
        let _permit = self.gate.as_ref().expect("remote client has gate").acquire();
        let resp = req
            .send()
            .map_err(|e| EmbeddingError::Provider(format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::Provider(format!(
                "endpoint returned HTTP {status}"
            )));
        }
        let parsed: RemoteEmbeddingResponse = resp
            .json()
            .map_err(|e| EmbeddingError::Provider(format!("bad response body: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                got: parsed.data.len(),
            });
        }
        // Reorder by the response's index field.
        let mut slots: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for row in parsed.data {
            if row.index >= texts.len() {
                return Err(EmbeddingError::Provider(format!(
                    "response index {} out of range",
                    row.index
                )));
            }
            if slots[row.index].is_some() {
                return Err(EmbeddingError::Provider(format!(
                    "duplicate response index {}",
                    row.index
                )));
            }
            slots[row.index] = Some(row.embedding);
        }
        let mut out = Vec::with_capacity(texts.len());
        for slot in slots {
            let values = slot.expect("all slots filled after count check");
            if values.len() != *dim {
                return Err(EmbeddingError::DimensionMismatch {
                    a: *dim,
                    b: values.len(),
                });
            }
            out.push(EmbeddingVector::new(values)?.into_normalized()?);
        }
        Ok(out)
    }
}
