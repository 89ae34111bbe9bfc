//! Retrieval index: chunk embeddings plus precomputed causal scores,
//! searched under the composite score `alpha * sim + beta * psi`.
//!
//! The causal score is query-independent, so it is computed once at build
//! time; query-time cost is one dot product and one multiply-add per entry.
//! Search is an exact full scan. Ranking ties break by ascending chunk id
//! so evaluation runs are reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::causal::{causal_score, CausalLexicon};
use crate::corpus::Chunk;
use crate::embedding::{
    cosine_similarity, EmbeddingClient, EmbeddingError, EmbeddingVector,
};

/// On-disk format tag. The loader rejects anything else.
pub const INDEX_MAGIC: &[u8; 8] = b"CRGIDX01";
/// On-disk format version.
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Default weight on semantic similarity.
pub const DEFAULT_ALPHA: f64 = 0.7;
/// Default weight on the causal score.
pub const DEFAULT_BETA: f64 = 0.3;
/// Default number of chunks to retrieve.
pub const DEFAULT_K: usize = 5;

/// Clinical modifiers appended to queries by default.
pub const DEFAULT_MODIFIERS: &[&str] = &["pathophysiology", "mechanism", "differential diagnosis"];

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("index i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid index file: {0}")]
    Format(String),
    #[error("unsupported index format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("cannot build an index from zero chunks")]
    NoChunks,
    #[error("duplicate chunk id `{0}` in index build input")]
    DuplicateChunkId(String),
    #[error("cannot retrieve from an empty index")]
    EmptyIndex,
    #[error("provider dim {provider} does not match index dim {index}")]
    DimMismatch { index: usize, provider: usize },
    #[error("lexicon version `{given}` does not match index lexicon `{index}`")]
    LexiconMismatch { index: String, given: String },
    #[error("invalid retrieval weights: {0}")]
    InvalidWeights(String),
}

/// Ranking weights: `alpha` on semantic similarity, `beta` on causal score,
/// `k` results. Requires `alpha, beta >= 0`, `alpha + beta > 0`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalWeights {
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
}

impl RetrievalWeights {
    pub fn new(alpha: f64, beta: f64, k: usize) -> Result<Self, IndexError> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 {
            return Err(IndexError::InvalidWeights(format!(
                "alpha and beta must be finite and >= 0, got alpha={alpha}, beta={beta}"
            )));
        }
        if alpha + beta <= 0.0 {
            return Err(IndexError::InvalidWeights(
                "alpha + beta must be > 0".into(),
            ));
        }
        if k == 0 {
            return Err(IndexError::InvalidWeights("k must be >= 1".into()));
        }
        Ok(Self { alpha, beta, k })
    }

    /// The single-parameter form of the same ranking family: `beta / alpha`.
    pub fn lambda(&self) -> Option<f64> {
        (self.alpha > 0.0).then(|| self.beta / self.alpha)
    }
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            k: DEFAULT_K,
        }
    }
}

/// The composite retrieval score `alpha * sim + beta * psi`.
pub fn composite_score(sim: f64, psi: f64, weights: &RetrievalWeights) -> f64 {
    weights.alpha * sim + weights.beta * psi
}

/// Append clinical modifiers to a query, space-separated, in order. Each
/// distinct modifier is appended once; an empty list leaves the query
/// unchanged.
pub fn enhance_query(query: &str, modifiers: &[String]) -> String {
    let mut out = query.to_string();
    let mut appended: Vec<&str> = Vec::new();
    for m in modifiers {
        if m.is_empty() || appended.contains(&m.as_str()) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(m);
        appended.push(m);
    }
    out
}

/// One indexed chunk: unit-norm embedding, precomputed causal score, and
/// the chunk text for prompt assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub psi: f64,
    pub text: String,
}

/// A retrieval hit with its score breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub chunk_id: String,
    pub sim: f64,
    pub psi: f64,
    pub composite: f64,
    pub text: String,
}

/// Immutable after build/load; concurrent retrieval is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    lexicon_version: String,
    saturation: f64,
    provider_descriptor: String,
    entries: Vec<IndexEntry>,
}

impl Index {
    /// Embed and causally score every chunk. Chunk ids must be unique.
    pub fn build(
        chunks: &[Chunk],
        client: &EmbeddingClient,
        lexicon: &CausalLexicon,
        saturation: f64,
    ) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::NoChunks);
        }
        let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for c in chunks {
            if !seen.insert(&c.chunk_id) {
                return Err(IndexError::DuplicateChunkId(c.chunk_id.clone()));
            }
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = client.embed_texts(&texts)?;
        let entries = chunks
            .iter()
            .zip(vectors)
            .map(|(chunk, vector)| IndexEntry {
                chunk_id: chunk.chunk_id.clone(),
                psi: causal_score(&chunk.text, lexicon, saturation),
                text: chunk.text.clone(),
                vector,
            })
            .collect();
        Ok(Self {
            dim: client.dim(),
            lexicon_version: lexicon.version.clone(),
            saturation,
            provider_descriptor: client.descriptor(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lexicon_version(&self) -> &str {
        &self.lexicon_version
    }

    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    pub fn provider_descriptor(&self) -> &str {
        &self.provider_descriptor
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Top-k search under the composite score.
    ///
    /// The query is enhanced, embedded, and scored against every entry;
    /// results are the `k` highest composite scores in descending order,
    /// ties broken by ascending chunk id. Exact full scan, no approximation.
    pub fn retrieve(
        &self,
        query: &str,
        weights: &RetrievalWeights,
        client: &EmbeddingClient,
        lexicon: &CausalLexicon,
        modifiers: &[String],
    ) -> Result<Vec<ScoredDocument>, IndexError> {
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if client.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                index: self.dim,
                provider: client.dim(),
            });
        }
        if lexicon.version != self.lexicon_version {
            return Err(IndexError::LexiconMismatch {
                index: self.lexicon_version.clone(),
                given: lexicon.version.clone(),
            });
        }
        let enhanced = enhance_query(query, modifiers);
        let query_vec = client.embed_one(&enhanced)?;
        let mut scored: Vec<ScoredDocument> = self
            .entries
            .iter()
            .map(|e| {
                let sim = cosine_similarity(&query_vec, &e.vector)?;
                Ok(ScoredDocument {
                    chunk_id: e.chunk_id.clone(),
                    sim,
                    psi: e.psi,
                    composite: composite_score(sim, e.psi, weights),
                    text: e.text.clone(),
                })
            })
            .collect::<Result<_, IndexError>>()?;
        scored.sort_unstable_by(|a, b| {
            b.composite
                .total_cmp(&a.composite)
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        scored.truncate(weights.k);
        Ok(scored)
    }

    /// Serialize to the versioned binary format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), IndexError> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        out.write_all(&self.saturation.to_le_bytes())?;
        write_str(&mut out, &self.lexicon_version)?;
        write_str(&mut out, &self.provider_descriptor)?;
        for e in &self.entries {
            write_str(&mut out, &e.chunk_id)?;
            out.write_all(&e.psi.to_le_bytes())?;
            for &v in e.vector.values() {
                out.write_all(&v.to_le_bytes())?;
            }
            write_str(&mut out, &e.text)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Parse the versioned binary format, rejecting unknown versions and
    /// malformed records.
    pub fn read_from<R: Read>(mut input: R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != INDEX_MAGIC {
            return Err(IndexError::Format("bad magic, not an index file".into()));
        }
        let version = read_u32(&mut input)?;
        if version != INDEX_FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion {
                found: version,
                supported: INDEX_FORMAT_VERSION,
            });
        }
        let dim = read_u32(&mut input)? as usize;
        if dim == 0 {
            return Err(IndexError::Format("dim must be nonzero".into()));
        }
        let count = read_u64(&mut input)?;
        let saturation = read_f64(&mut input)?;
        if !(saturation.is_finite() && saturation > 0.0) {
            return Err(IndexError::Format(format!(
                "invalid saturation {saturation}"
            )));
        }
        let lexicon_version = read_str(&mut input)?;
        let provider_descriptor = read_str(&mut input)?;
        let mut entries = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let chunk_id = read_str(&mut input)?;
            let psi = read_f64(&mut input)?;
            if !(0.0..=1.0).contains(&psi) {
                return Err(IndexError::Format(format!(
                    "psi {psi} out of [0,1] for chunk `{chunk_id}`"
                )));
            }
            let mut values = vec![0.0f32; dim];
            for v in &mut values {
                *v = read_f32(&mut input)?;
            }
            let vector = EmbeddingVector::new(values)
                .map_err(|e| IndexError::Format(format!("chunk `{chunk_id}`: {e}")))?;
            if (vector.norm() - 1.0).abs() > 1e-3 {
                return Err(IndexError::Format(format!(
                    "stored vector for chunk `{chunk_id}` is not unit norm"
                )));
            }
            let text = read_str(&mut input)?;
            entries.push(IndexEntry {
                chunk_id,
                vector: mark_unit(vector),
                psi,
                text,
            });
        }
        Ok(Self {
            dim,
            lexicon_version,
            saturation,
            provider_descriptor,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn mark_unit(v: EmbeddingVector) -> EmbeddingVector {
    // Stored vectors were normalized before save; the norm was re-checked.
    EmbeddingVector::from_unit_values(v.values().to_vec())
}

fn truncated(e: std::io::Error) -> IndexError {
    IndexError::Format(format!("truncated index file: {e}"))
}

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<(), IndexError> {
    let bytes = s.as_bytes();
    out.write_all(&(bytes.len() as u32).to_le_bytes())?;
    out.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, IndexError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, IndexError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f32<R: Read>(input: &mut R) -> Result<f32, IndexError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(f32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64, IndexError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str<R: Read>(input: &mut R) -> Result<String, IndexError> {
    let len = read_u32(input)? as usize;
    if len > (1 << 30) {
        return Err(IndexError::Format(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|e| IndexError::Format(format!("invalid utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{default_lexicon, DEFAULT_SATURATION};
    use crate::embedding::EmbeddingProviderConfig;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            text: text.into(),
            ordinal: 0,
            char_span: (0, text.chars().count()),
        }
    }

    fn local_client() -> EmbeddingClient {
        EmbeddingClient::new(EmbeddingProviderConfig::local(64)).unwrap()
    }

    fn sample_index() -> Index {
        let chunks = vec![
            chunk("a#0", "aspirin reduces the risk of stroke in atrial fibrillation"),
            chunk("b#0", "the heart pumps blood through the circulatory system"),
            chunk("c#0", "hypertension causes left ventricular hypertrophy which leads to failure"),
        ];
        Index::build(&chunks, &local_client(), &default_lexicon(), DEFAULT_SATURATION).unwrap()
    }

    #[test]
    fn composite_matches_hand_arithmetic() {
        let w = RetrievalWeights::new(0.7, 0.3, 5).unwrap();
        assert!((composite_score(0.5, 0.0, &w) - 0.35).abs() < 1e-12);
        assert_eq!(composite_score(0.0, 0.0, &w), 0.0);
        assert!((composite_score(1.0, 1.0, &w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_are_validated() {
        assert!(RetrievalWeights::new(0.0, 0.0, 5).is_err());
        assert!(RetrievalWeights::new(-0.1, 0.5, 5).is_err());
        assert!(RetrievalWeights::new(0.7, 0.3, 0).is_err());
        assert!(RetrievalWeights::new(0.0, 1.0, 1).is_ok());
        let w = RetrievalWeights::new(0.5, 0.25, 5).unwrap();
        assert_eq!(w.lambda(), Some(0.5));
    }

    #[test]
    fn enhance_query_examples() {
        let none: Vec<String> = vec![];
        assert_eq!(enhance_query("chest pain", &none), "chest pain");
        assert_eq!(
            enhance_query("chest pain", &["mechanism".to_string()]),
            "chest pain mechanism"
        );
        assert_eq!(
            enhance_query("q", &["a".to_string(), "b".to_string()]),
            "q a b"
        );
        assert_eq!(
            enhance_query("q", &["a".to_string(), "a".to_string()]),
            "q a"
        );
        assert_eq!(enhance_query("", &["a".to_string()]), "a");
    }

    #[test]
    fn build_produces_one_entry_per_chunk() {
        let index = sample_index();
        assert_eq!(index.len(), 3);
        assert_eq!(index.dim(), 64);
        assert_eq!(index.lexicon_version(), "builtin_v1");
        // the causal chunk should carry nonzero psi, the neutral one zero
        let by_id = |id: &str| index.entries().iter().find(|e| e.chunk_id == id).unwrap();
        assert!(by_id("c#0").psi > 0.0);
        assert_eq!(by_id("b#0").psi, 0.0);
    }

    #[test]
    fn build_rejects_duplicates_and_empty() {
        let client = local_client();
        let lex = default_lexicon();
        assert!(matches!(
            Index::build(&[], &client, &lex, DEFAULT_SATURATION),
            Err(IndexError::NoChunks)
        ));
        let twice = vec![chunk("a#0", "text one"), chunk("a#0", "text two")];
        assert!(matches!(
            Index::build(&twice, &client, &lex, DEFAULT_SATURATION),
            Err(IndexError::DuplicateChunkId(id)) if id == "a#0"
        ));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let a = sample_index();
        let b = sample_index();
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.write_to(&mut bytes_a).unwrap();
        b.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let index = sample_index();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.idx");
        index.save(&path).unwrap();
        let loaded = Index::load(&path).unwrap();
        assert_eq!(index, loaded);
    }

    #[test]
    fn loader_rejects_bad_magic_and_unknown_version() {
        let index = sample_index();
        let mut bytes = Vec::new();
        index.write_to(&mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            Index::read_from(bad_magic.as_slice()),
            Err(IndexError::Format(_))
        ));

        let mut bad_version = bytes.clone();
        bad_version[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            Index::read_from(bad_version.as_slice()),
            Err(IndexError::UnsupportedVersion { found: 99, .. })
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Index::read_from(truncated),
            Err(IndexError::Format(_))
        ));
    }

    #[test]
    fn retrieve_returns_all_when_k_exceeds_size() {
        let index = sample_index();
        let w = RetrievalWeights::new(0.7, 0.3, 10).unwrap();
        let hits = index
            .retrieve("heart", &w, &local_client(), &default_lexicon(), &[])
            .unwrap();
        assert_eq!(hits.len(), 3);
        for pair in hits.windows(2) {
            assert!(pair[0].composite >= pair[1].composite);
        }
        for h in &hits {
            let expect = composite_score(h.sim, h.psi, &w);
            assert!((h.composite - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_zero_matches_pure_cosine_ranking() {
        let index = sample_index();
        let client = local_client();
        let lex = default_lexicon();
        let w = RetrievalWeights::new(1.0, 0.0, 3).unwrap();
        let hits = index.retrieve("blood circulation", &w, &client, &lex, &[]).unwrap();
        let mut by_sim: Vec<(String, f64)> = hits.iter().map(|h| (h.chunk_id.clone(), h.sim)).collect();
        by_sim.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got: Vec<&String> = hits.iter().map(|h| &h.chunk_id).collect();
        let want: Vec<&String> = by_sim.iter().map(|(id, _)| id).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn ties_break_by_ascending_chunk_id() {
        // identical text => identical vector and psi => identical composite
        let chunks = vec![
            chunk("z#0", "same words here"),
            chunk("a#0", "same words here"),
            chunk("m#0", "same words here"),
        ];
        let index =
            Index::build(&chunks, &local_client(), &default_lexicon(), DEFAULT_SATURATION).unwrap();
        let w = RetrievalWeights::new(0.7, 0.3, 3).unwrap();
        let hits = index
            .retrieve("same words", &w, &local_client(), &default_lexicon(), &[])
            .unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["a#0", "m#0", "z#0"]);
    }

    #[test]
    fn raising_psi_never_lowers_rank() {
        let mut index = sample_index();
        let w = RetrievalWeights::new(0.5, 0.5, 3).unwrap();
        let client = local_client();
        let lex = default_lexicon();
        let before = index.retrieve("heart failure", &w, &client, &lex, &[]).unwrap();
        let target = before.last().unwrap().chunk_id.clone();
        let rank_before = before.iter().position(|h| h.chunk_id == target).unwrap();
        for e in &mut index.entries {
            if e.chunk_id == target {
                e.psi = 1.0;
            }
        }
        let after = index.retrieve("heart failure", &w, &client, &lex, &[]).unwrap();
        let rank_after = after.iter().position(|h| h.chunk_id == target).unwrap();
        assert!(rank_after <= rank_before);
    }

    #[test]
    fn retrieve_rejects_mismatched_provider_and_lexicon() {
        let index = sample_index();
        let w = RetrievalWeights::default();
        let wrong_dim = EmbeddingClient::new(EmbeddingProviderConfig::local(32)).unwrap();
        assert!(matches!(
            index.retrieve("q", &w, &wrong_dim, &default_lexicon(), &[]),
            Err(IndexError::DimMismatch { index: 64, provider: 32 })
        ));
        let mut other_lex = default_lexicon();
        other_lex.version = "file:custom".into();
        assert!(matches!(
            index.retrieve("q", &w, &local_client(), &other_lex, &[]),
            Err(IndexError::LexiconMismatch { .. })
        ));
    }
}
