use std::fmt;

use rand::Rng;

use super::{
    DpqEmbedding, EmbeddingScheme, FullEmbedding, LowRankEmbedding, MgqeEmbedding, MgqeVariant,
    ScalarQuantizedState, TierPartition, INIT_STD,
};
use crate::error::{Error, Result};

/// Recipe for a fresh embedding table of any scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemeSpec {
    Full,
    LowRank {
        rank: usize,
    },
    ScalarQuantized {
        bits: u32,
    },
    Dpq {
        subspaces: usize,
        centroids: usize,
    },
    Mgqe {
        variant: MgqeVariant,
        /// Cumulative tier boundaries as fractions of the vocabulary.
        tier_fractions: Vec<f64>,
        centroids: Vec<usize>,
        subspaces: Vec<usize>,
    },
}

impl SchemeSpec {
    /// Default configuration of MGQE: two tiers split at the top 10%.
    pub fn mgqe_default(variant: MgqeVariant) -> Self {
        let (centroids, subspaces) = match variant {
            MgqeVariant::SharedVarK | MgqeVariant::UnsharedVarK => (vec![256, 64], vec![64, 64]),
            MgqeVariant::UnsharedVarD => (vec![256, 256], vec![64, 32]),
        };
        SchemeSpec::Mgqe {
            variant,
            tier_fractions: vec![0.1],
            centroids,
            subspaces,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeSpec::Full => "full",
            SchemeSpec::LowRank { .. } => "lrf",
            SchemeSpec::ScalarQuantized { .. } => "sq",
            SchemeSpec::Dpq { .. } => "dpq",
            SchemeSpec::Mgqe { .. } => "mgqe",
        }
    }

    /// Builds an `n x dim` table. Raw embeddings start from N(0, 0.01^2).
    pub fn build<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Result<EmbeddingScheme> {
        if n == 0 || dim == 0 {
            return Err(Error::Config(format!("cannot build a {n} x {dim} embedding table")));
        }
        Ok(match self {
            SchemeSpec::Full => EmbeddingScheme::Full(FullEmbedding::new(n, dim, INIT_STD, rng)),
            SchemeSpec::LowRank { rank } => {
                if *rank >= dim {
                    return Err(Error::Config(format!("rank {rank} must be below d = {dim}")));
                }
                EmbeddingScheme::LowRank(LowRankEmbedding::new(n, dim, *rank, INIT_STD, rng)?)
            }
            SchemeSpec::ScalarQuantized { bits } => {
                if !(1..=16).contains(bits) {
                    return Err(Error::Config(format!("scalar quantization bits {bits} outside 1..=16")));
                }
                EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training {
                    table: FullEmbedding::new(n, dim, INIT_STD, rng),
                    bits: *bits,
                })
            }
            SchemeSpec::Dpq { subspaces, centroids } => {
                EmbeddingScheme::Dpq(DpqEmbedding::new(n, dim, *subspaces, *centroids, rng)?)
            }
            SchemeSpec::Mgqe {
                variant,
                tier_fractions,
                centroids,
                subspaces,
            } => {
                let partition =
                    TierPartition::from_fractions(n, tier_fractions, centroids.clone(), subspaces.clone(), *variant)?;
                EmbeddingScheme::Mgqe(MgqeEmbedding::new(dim, partition, rng)?)
            }
        })
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::Full => write!(f, "full"),
            SchemeSpec::LowRank { rank } => write!(f, "lrf(r={rank})"),
            SchemeSpec::ScalarQuantized { bits } => write!(f, "sq(b={bits})"),
            SchemeSpec::Dpq { subspaces, centroids } => write!(f, "dpq(D={subspaces},K={centroids})"),
            SchemeSpec::Mgqe {
                variant,
                centroids,
                subspaces,
                ..
            } => write!(f, "mgqe-{variant}(D={subspaces:?},K={centroids:?})"),
        }
    }
}
