use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// Default per-corpus example cap.
pub const DEFAULT_MAX_EXAMPLES: usize = 40_000;

/// One JSON Lines record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub article: String,
    pub summary: String,
}

/// A tokenized article/summary pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// Article ids with sentence markers.
    pub article: Vec<usize>,
    /// Ground-truth summary ids, without `[BOS]`/`[EOS]`.
    pub summary: Vec<usize>,
    pub source_corpus: Arc<str>,
    /// Position in the source corpus.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusCaps {
    pub max_examples: usize,
    pub max_src_len: usize,
    /// Includes the `[BOS]`/`[EOS]` position, so summaries keep at most `max_tgt_len - 1` ids.
    pub max_tgt_len: usize,
}

impl Default for CorpusCaps {
    fn default() -> Self {
        CorpusCaps {
            max_examples: DEFAULT_MAX_EXAMPLES,
            max_src_len: 512,
            max_tgt_len: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: Arc<str>,
    pub examples: Vec<Example>,
    /// Untokenized text, parallel to `examples`.
    pub raw: Vec<RawExample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Tokenized article text (no markers), one list per example.
    pub fn article_tokens(&self) -> Vec<Vec<String>> {
        self.raw.iter().map(|r| tokenize(&r.article)).collect()
    }

    /// Builds a corpus from records, tokenizing and truncating each one.
    pub fn from_raw(name: &str, raw: Vec<RawExample>, vocab: &Vocabulary, caps: CorpusCaps) -> Result<Self> {
        let name: Arc<str> = name.into();
        let raw: Vec<RawExample> = raw.into_iter().take(caps.max_examples).collect();
        let mut examples = Vec::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            let mut article = vocab.encode_article(&r.article);
            article.truncate(caps.max_src_len);
            let mut summary = vocab.encode(&r.summary);
            summary.truncate(caps.max_tgt_len.saturating_sub(1));
            if article.is_empty() || summary.is_empty() {
                return Err(Error::Invalid(format!(
                    "{name}: example {} has an empty article or summary",
                    i + 1
                )));
            }
            examples.push(Example {
                article,
                summary,
                source_corpus: Arc::clone(&name),
                index: i,
            });
        }
        if examples.is_empty() {
            return Err(Error::EmptyCorpus(name.to_string()));
        }
        Ok(Corpus { name, examples, raw })
    }
}

/// Reads at most `limit` records from a JSON Lines file. Blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>, limit: usize) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if out.len() >= limit {
            break;
        }
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.article.trim().is_empty() || rec.summary.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty article or summary".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[RawExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Corpus name for a path: the file stem.
pub fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads, tokenizes and caps a JSON Lines corpus.
pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocabulary, caps: CorpusCaps) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = read_jsonl(path, caps.max_examples)?;
    let name = corpus_name(path);
    if raw.is_empty() {
        return Err(Error::EmptyCorpus(name));
    }
    Corpus::from_raw(&name, raw, vocab, caps)
}

/// Builds one vocabulary over every article and summary, then tokenizes each corpus with it.
pub fn corpora_from_raw(
    named: Vec<(String, Vec<RawExample>)>,
    vocab_cap: usize,
    caps: CorpusCaps,
) -> Result<(Vocabulary, Vec<Corpus>)> {
    let vocab = Vocabulary::build(
        named
            .iter()
            .flat_map(|(_, recs)| recs.iter().take(caps.max_examples))
            .flat_map(|r| [r.article.as_str(), r.summary.as_str()]),
        vocab_cap,
    );
    let corpora = named
        .into_iter()
        .map(|(name, raw)| Corpus::from_raw(&name, raw, &vocab, caps))
        .collect::<Result<_>>()?;
    Ok((vocab, corpora))
}
