//! Corpus loading, normalization, and chunking.
//!
//! Source documents arrive as JSON Lines (one object per line with required
//! keys `id`, `text` and optional `title`, `source`). They are normalized to
//! single-spaced text and split into overlapping character-window chunks,
//! which are the retrieval units for the rest of the pipeline.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Provenance of a corpus document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Pubmed,
    Statpearls,
    Textbook,
    Wikipedia,
    #[default]
    Other,
}

/// A corpus record. `text` is whitespace-normalized at load time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: Source,
}

/// A retrievable fragment of a document.
///
/// `char_span` holds character offsets (not bytes) into the normalized
/// parent text, so `parent.text.chars()[start..end]` equals `chunk.text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub ordinal: usize,
    pub char_span: (usize, usize),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("invalid chunking config: overlap_chars ({overlap_chars}) must be < max_chunk_chars ({max_chunk_chars}), and max_chunk_chars must be > 0")]
    InvalidChunking {
        max_chunk_chars: usize,
        overlap_chars: usize,
    },
}

/// Collapse every run of whitespace (including line breaks) to a single
/// space and strip leading/trailing whitespace. No case folding.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut first = true;
    for word in raw.split_whitespace() {
        if !first {
            out.push(' ');
        }
        out.push_str(word);
        first = false;
    }
    out
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
    #[serde(default)]
    source: Source,
}

/// Load a JSON Lines corpus file. Yields one [`Document`] per record in
/// file order, with `text` normalized. Blank lines are skipped.
///
/// Duplicate ids are hard errors: corpus provenance must stay auditable.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "`id` must be nonempty".into(),
            });
        }
        let text = normalize_text(&raw.text);
        if text.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "`text` is empty after normalization".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: raw.id,
                line: line_no,
            });
        }
        docs.push(Document {
            id: raw.id,
            title: raw.title,
            text,
            source: raw.source,
        });
    }
    Ok(docs)
}

/// Split a document into overlapping character-window chunks.
///
/// The window slides by `max_chunk_chars - overlap_chars`; a boundary is
/// pulled back to the nearest whitespace when one exists within the final
/// 20% of the window, so words are not cut mid-token. Adjacent chunks share
/// exactly `overlap_chars` characters. An empty document yields no chunks.
pub fn chunk_document(
    doc: &Document,
    max_chunk_chars: usize,
    overlap_chars: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if max_chunk_chars == 0 || overlap_chars >= max_chunk_chars {
        return Err(CorpusError::InvalidChunking {
            max_chunk_chars,
            overlap_chars,
        });
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let total = chars.len();
    let mut chunks = Vec::new();
    if total == 0 {
        return Ok(chunks);
    }
    let snap_window = max_chunk_chars / 5;
    let mut start = 0usize;
    let mut ordinal = 0usize;
    loop {
        let hard_end = (start + max_chunk_chars).min(total);
        let mut end = hard_end;
        if hard_end < total && snap_window > 0 {
            let floor = hard_end - snap_window;
            if let Some(p) = (floor..hard_end).rev().find(|&i| chars[i].is_whitespace()) {
                // Keep the stride positive; otherwise fall back to a hard split.
                if p.saturating_sub(overlap_chars) > start {
                    end = p;
                }
            }
        }
        chunks.push(Chunk {
            chunk_id: format!("{}#{}", doc.id, ordinal),
            doc_id: doc.id.clone(),
            text: chars[start..end].iter().collect(),
            ordinal,
            char_span: (start, end),
        });
        if end >= total {
            break;
        }
        start = end - overlap_chars;
        ordinal += 1;
    }
    Ok(chunks)
}

/// Write chunks as JSON Lines, one object per line.
pub fn write_chunks<W: Write>(mut out: W, chunks: &[Chunk]) -> Result<(), CorpusError> {
    for chunk in chunks {
        let line = serde_json::to_string(chunk).expect("chunk serialization is infallible");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read a chunk file produced by [`write_chunks`].
pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut chunks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            source: Source::Other,
        }
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_text("A  B\n C"), "A B C");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  leads to  "), "leads to");
    }

    #[test]
    fn normalize_preserves_case() {
        assert_eq!(normalize_text("Hypertension CAUSES lvh"), "Hypertension CAUSES lvh");
    }

    #[test]
    fn load_corpus_passes_through_well_formed_records() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"pm-1","text":"alpha","source":"pubmed"}}"#).unwrap();
        writeln!(f, r#"{{"id":"pm-2","title":"T","text":"beta  gamma"}}"#).unwrap();
        writeln!(f, r#"{{"id":"pm-3","text":"delta"}}"#).unwrap();
        let docs = load_corpus(f.path()).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[0].id, "pm-1");
        assert_eq!(docs[0].source, Source::Pubmed);
        assert_eq!(docs[1].text, "beta gamma");
        assert_eq!(docs[2].source, Source::Other);
    }

    #[test]
    fn load_corpus_rejects_missing_text_with_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"pm-1","text":"alpha"}}"#).unwrap();
        writeln!(f, r#"{{"id":"pm-2","title":"no text here"}}"#).unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn load_corpus_rejects_duplicate_ids_by_name() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"pm-1","text":"alpha"}}"#).unwrap();
        writeln!(f, r#"{{"id":"pm-1","text":"beta"}}"#).unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line } => {
                assert_eq!(id, "pm-1");
                assert_eq!(line, 2);
            }
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn load_corpus_rejects_whitespace_only_text() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"pm-1","text":"   "}}"#).unwrap();
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn single_window_chunk_is_identity() {
        let d = doc("d", &"y".repeat(100));
        let chunks = chunk_document(&d, 100, 0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, d.text);
        assert_eq!(chunks[0].char_span, (0, 100));
        assert_eq!(chunks[0].chunk_id, "d#0");
    }

    #[test]
    fn sliding_window_spans_match_hand_trace() {
        // 250 chars, no whitespace: starts advance by max - overlap.
        let d = doc("d", &"x".repeat(250));
        let chunks = chunk_document(&d, 100, 20).unwrap();
        let spans: Vec<(usize, usize)> = chunks.iter().map(|c| c.char_span).collect();
        assert_eq!(spans, vec![(0, 100), (80, 180), (160, 250)]);
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.ordinal, i);
        }
    }

    #[test]
    fn empty_document_yields_no_chunks() {
        let d = doc("d", "");
        assert!(chunk_document(&d, 100, 20).unwrap().is_empty());
    }

    #[test]
    fn overlap_must_be_smaller_than_window() {
        let d = doc("d", "abc");
        assert!(matches!(
            chunk_document(&d, 10, 10),
            Err(CorpusError::InvalidChunking { .. })
        ));
    }

    #[test]
    fn boundaries_snap_to_whitespace() {
        // Words of 9 chars + space; window 20, overlap 5, snap range 4. The
        // first hard end (20) falls mid-word with the space at 19 inside the
        // final 20%, so the boundary pulls back: every non-final cut lands
        // just before a space unless no space was available in the range.
        let word = "abcdefghi";
        let text = std::iter::repeat(word).take(12).collect::<Vec<_>>().join(" ");
        let d = doc("d", &text);
        let chars: Vec<char> = d.text.chars().collect();
        let max = 20;
        let chunks = chunk_document(&d, max, 5).unwrap();
        assert!(chunks.len() > 1);
        for c in &chunks[..chunks.len() - 1] {
            let (s, e) = c.char_span;
            let hard_cut = e == s + max;
            assert!(
                chars[e].is_whitespace() || hard_cut,
                "boundary at {e} is mid-word without a hard cut: {:?}",
                c.text
            );
        }
        // The first window (hard end 20, mid-word) must actually snap.
        assert_eq!(chunks[0].char_span, (0, 19));
    }

    #[test]
    fn adjacent_chunks_share_exactly_overlap_chars() {
        let text = "the quick brown fox jumps over the lazy dog and keeps on running far away";
        let d = doc("d", text);
        let overlap = 8;
        let chunks = chunk_document(&d, 30, overlap).unwrap();
        assert!(chunks.len() > 1);
        for pair in chunks.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            assert_eq!(prev.char_span.1 - next.char_span.0, overlap);
            let prev_chars: Vec<char> = prev.text.chars().collect();
            let next_chars: Vec<char> = next.text.chars().collect();
            assert_eq!(
                prev_chars[prev_chars.len() - overlap..],
                next_chars[..overlap]
            );
        }
    }

    #[test]
    fn chunk_roundtrip_through_jsonl() {
        let d = doc("d", &"words and more words ".repeat(20));
        let chunks = chunk_document(&d, 50, 10).unwrap();
        let mut buf = Vec::new();
        write_chunks(&mut buf, &chunks).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&buf).unwrap();
        let back = read_chunks(f.path()).unwrap();
        assert_eq!(chunks, back);
    }

    proptest! {
        // Span soundness: parent.text.chars()[span] reproduces chunk.text,
        // chunks never exceed the window, and the windows cover the document.
        #[test]
        fn chunk_spans_are_sound(
            words in proptest::collection::vec("[a-zA-Zé0-9]{1,12}", 0..60),
            max in 8usize..80,
            overlap_frac in 0usize..7,
        ) {
            let overlap = (max * overlap_frac) / 8; // always < max
            let d = doc("p", &words.join(" "));
            let chars: Vec<char> = d.text.chars().collect();
            let chunks = chunk_document(&d, max, overlap).unwrap();
            if chars.is_empty() {
                prop_assert!(chunks.is_empty());
                return Ok(());
            }
            prop_assert_eq!(chunks[0].char_span.0, 0);
            prop_assert_eq!(chunks.last().unwrap().char_span.1, chars.len());
            let mut prev_end = 0usize;
            for (i, c) in chunks.iter().enumerate() {
                let (s, e) = c.char_span;
                prop_assert!(e - s <= max);
                prop_assert_eq!(c.ordinal, i);
                let expect: String = chars[s..e].iter().collect();
                prop_assert_eq!(&expect, &c.text);
                if i > 0 {
                    prop_assert_eq!(prev_end - s, overlap);
                }
                prev_end = e;
            }
        }
    }
}
