//! Ranking and regression metrics, serving-size accounting and code
//! similarity analysis.

mod ranking;
mod regression;
mod similarity;
pub(crate) mod size;

pub use ranking::{evaluate_ranking, evaluate_ranking_on, rank_of, recall_at_k, RankingReport, UserRank};
pub use regression::{evaluate_rmse, rmse};
pub use similarity::{code_similarity, code_similarity_matrix, SimilarityMatrix, FIGURE_CATEGORIES};
pub use size::{
    dense_param_count, formula, scheme_size, size_report, spec_size, ComponentBits, SizeReport, TableSize,
};
