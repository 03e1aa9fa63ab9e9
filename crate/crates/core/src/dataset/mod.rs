//! Interaction and relevance datasets.

mod histogram;
mod interactions;
mod movielens;
mod relevance;
mod synthetic;

pub use histogram::{frequency_histogram, split_counts, write_histogram_csv, HistogramRow};
pub use interactions::{Interaction, InteractionDataset, RawRating, SplitOptions};
pub use movielens::{load_movielens, parse_movies, parse_ratings, GenreTable, LoadOptions};
pub use relevance::{RelevanceDataset, RelevancePair};
pub use synthetic::{
    generate_synthetic_interactions, generate_synthetic_relevance, SyntheticInteractionConfig,
    SyntheticInteractions, SyntheticRelevance, SYNTHETIC_GENRES,
};
