//! ROUGE scoring and summary generation.

pub mod decode;
pub mod rouge;

#[cfg(test)]
mod tests;

pub use decode::{beam_search, decode, evaluate_corpus, greedy, DecodeConfig, Evaluation, Hypothesis, Strategy};
pub use rouge::{clipped_overlap, lcs_len, ngram_counts, rouge_l, rouge_n, RougeScore, RougeTriple};
