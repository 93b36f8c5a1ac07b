//! Vocabulary, corpus ingestion and MAML task sampling.

pub mod corpus;
pub mod synthetic;
pub mod task;
pub mod vocab;

pub use corpus::{
    corpora_from_raw, corpus_name, load_corpus, read_jsonl, write_jsonl, Corpus, CorpusCaps, Example, RawExample,
};
pub use synthetic::Style;
pub use task::{build_meta_batch, sample_task, shuffled_prefix, MetaBatch, Scheduler, Task, DEFAULT_K};
pub use vocab::{tokenize, Vocabulary};
