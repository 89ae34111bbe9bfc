//! Causal-aware retrieval-augmented question answering.
//!
//! The pipeline ranks corpus chunks by a composite of semantic similarity
//! and a causal-language relevance score, packs the top hits into a
//! four-stage clinical reasoning prompt, sends it to a generation provider,
//! and scores extracted answers with strict match over MCQ and yes/no
//! benchmarks. Embedding and generation backends are pluggable; a
//! deterministic local hash embedder and a scripted mock generator make
//! every evaluation run reproducible offline.

pub mod causal;
pub mod concurrency;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod index;
pub mod prompt;

pub use causal::{causal_score, count_matches, load_lexicon, CausalLexicon, LexiconEntry};
pub use corpus::{chunk_document, load_corpus, normalize_text, Chunk, Document};
pub use embedding::{
    cosine_similarity, hash_embed, EmbeddingClient, EmbeddingProviderConfig, EmbeddingVector,
};
pub use evaluation::{
    load_dataset, run_ablation, run_eval, strict_match, EvalReport, PipelineConfig, PipelineMode,
    QAItem,
};
pub use generation::{
    extract_mcq_answer, extract_yesno_answer, Completion, GenClient, GenProviderConfig,
};
pub use index::{
    composite_score, enhance_query, Index, RetrievalWeights, ScoredDocument,
};
pub use prompt::{
    build_causal_cot_prompt, build_prompt, estimate_tokens, PromptBundle, TaskKind, TemplateName,
};

/// Artifact version, printed by the CLI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
