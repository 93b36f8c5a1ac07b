//! Source/target corpus affinity and source-corpus selection.

mod criteria;
mod ranking;

pub use criteria::{
    cosine_set_similarity, embedding_similarity, length_similarity, normalized_inner, rouge2_documents,
    rouge2_precision, rouge2_recall,
};
pub use ranking::{
    corpus_similarity, rank_and_select, sample_indices, Criterion, Encoder, PairScores, RankOptions, RankingReport,
    RankingRow, SimilarityScore, SECTIONS,
};
