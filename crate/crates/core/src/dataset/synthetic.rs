//! Seeded synthetic data: a power-law item-to-item relevance set and a
//! MovieLens-shaped implicit-feedback set with planted genres.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::interactions::{InteractionDataset, RawRating, SplitOptions};
use super::movielens::GenreTable;
use super::relevance::{RelevanceDataset, RelevancePair};
use crate::error::{Error, Result};

const LATENT_RANK: usize = 8;
const CLUSTERS: usize = 16;
const CLUSTER_SPREAD: f64 = 0.5;
const SCORE_SCALE: f64 = 25.0;
const NOISE_STD: f64 = 5.0;
const EVAL_FRACTION: f64 = 0.1;
/// Consecutive rejected draws before pair sampling falls back to a scan.
const MAX_REJECTIONS: usize = 10_000;

/// Relevance data plus the planted structure that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticRelevance {
    pub dataset: RelevanceDataset,
    /// Planted cluster of every (remapped) item.
    pub clusters: Vec<usize>,
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|k| ((k + 1) as f64).powf(-exponent)).collect()
}

/// Generates `num_pairs` unique unordered item pairs with Zipf-distributed
/// endpoints and scores from a planted clustered low-rank model.
///
/// Pair endpoints are drawn independently from a Zipf law over items. Each
/// item carries a latent vector near one of a few cluster centres; the score
/// of a pair is a scaled inner product of the two latents plus Gaussian
/// noise, clipped to [-100, 100]. A random tenth of the pairs is held out.
/// Items are finally renumbered by their frequency in the training pairs.
pub fn generate_synthetic_relevance(
    num_items: usize,
    num_pairs: usize,
    zipf_exponent: f64,
    seed: u64,
) -> Result<SyntheticRelevance> {
    let max = num_items.saturating_mul(num_items.saturating_sub(1)) / 2;
    if num_pairs > max {
        return Err(Error::InfeasiblePairs { requested: num_pairs, max });
    }
    if !(zipf_exponent >= 0.0 && zipf_exponent.is_finite()) {
        return Err(Error::Config(format!("zipf exponent must be >= 0, got {zipf_exponent}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");

    let centres: Vec<Vec<f64>> = (0..CLUSTERS)
        .map(|_| (0..LATENT_RANK).map(|_| std_normal.sample(&mut rng)).collect())
        .collect();
    let clusters: Vec<usize> = (0..num_items).map(|_| rng.random_range(0..CLUSTERS)).collect();
    let latents: Vec<Vec<f64>> = clusters
        .iter()
        .map(|&c| {
            centres[c]
                .iter()
                .map(|&m| m + CLUSTER_SPREAD * std_normal.sample(&mut rng))
                .collect()
        })
        .collect();

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(num_pairs);
    let mut endpoints: Vec<(usize, usize)> = Vec::with_capacity(num_pairs);
    if num_pairs > 0 {
        let popularity = WeightedIndex::new(zipf_weights(num_items, zipf_exponent)).expect("positive weights");
        let mut rejections = 0;
        while endpoints.len() < num_pairs && rejections < MAX_REJECTIONS {
            let a = popularity.sample(&mut rng);
            let b = popularity.sample(&mut rng);
            let key = (a.min(b), a.max(b));
            if a == b || !seen.insert(key) {
                rejections += 1;
                continue;
            }
            rejections = 0;
            endpoints.push(key);
        }
        // Dense requests exhaust the popular pairs; fill with the remaining
        // pairs in popularity order.
        'fill: for a in 0..num_items {
            for b in a + 1..num_items {
                if endpoints.len() == num_pairs {
                    break 'fill;
                }
                if seen.insert((a, b)) {
                    endpoints.push((a, b));
                }
            }
        }
    }

    let scale = SCORE_SCALE / (LATENT_RANK as f64).sqrt();
    let pairs: Vec<RelevancePair> = endpoints
        .iter()
        .map(|&(a, b)| {
            let dot: f64 = latents[a].iter().zip(&latents[b]).map(|(x, y)| x * y).sum();
            let noise = NOISE_STD * std_normal.sample(&mut rng);
            RelevancePair {
                a,
                b,
                score: (scale * dot + noise).clamp(-100.0, 100.0),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..num_pairs).collect();
    order.shuffle(&mut rng);
    let num_eval = (num_pairs as f64 * EVAL_FRACTION).round() as usize;
    let mut is_eval = vec![false; num_pairs];
    for &i in &order[..num_eval] {
        is_eval[i] = true;
    }

    // Renumber items by training frequency, ties by generator id.
    let mut counts = vec![0u32; num_items];
    for (p, &e) in pairs.iter().zip(&is_eval) {
        if !e {
            counts[p.a] += 1;
            counts[p.b] += 1;
        }
    }
    let mut by_freq: Vec<usize> = (0..num_items).collect();
    by_freq.sort_by(|&x, &y| counts[y].cmp(&counts[x]).then(x.cmp(&y)));
    let mut new_id = vec![0; num_items];
    for (new, &old) in by_freq.iter().enumerate() {
        new_id[old] = new;
    }
    let pairs = pairs
        .into_iter()
        .map(|p| {
            let (a, b) = (new_id[p.a], new_id[p.b]);
            RelevancePair {
                a: a.min(b),
                b: a.max(b),
                score: p.score,
            }
        })
        .collect();
    let clusters = by_freq.iter().map(|&old| clusters[old]).collect();
    Ok(SyntheticRelevance {
        dataset: RelevanceDataset::new(num_items, pairs, is_eval)?,
        clusters,
    })
}

/// Genre names used by the synthetic interaction generator; the first four
/// are the categories of the code-similarity analysis.
pub const SYNTHETIC_GENRES: [&str; 8] = [
    "Sci-Fi", "Romance", "Animation", "Horror", "Action", "Comedy", "Drama", "Thriller",
];

#[derive(Debug, Clone)]
pub struct SyntheticInteractionConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Mean number of distinct items per user.
    pub mean_actions: usize,
    pub zipf_exponent: f64,
    /// Probability that an action is drawn from the user's favourite genre.
    pub genre_affinity: f64,
    /// Probability that an item carries a second genre.
    pub second_genre_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticInteractionConfig {
    fn default() -> Self {
        SyntheticInteractionConfig {
            num_users: 1000,
            num_items: 600,
            mean_actions: 40,
            zipf_exponent: 0.9,
            genre_affinity: 0.8,
            second_genre_prob: 0.2,
            seed: 0,
        }
    }
}

/// Raw ratings and movie metadata shaped like MovieLens-1M. External ids
/// start at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInteractions {
    pub ratings: Vec<RawRating>,
    /// External movie id -> genres.
    pub movies: HashMap<u32, Vec<String>>,
}

impl SyntheticInteractions {
    pub fn dataset(&self, options: &SplitOptions) -> (InteractionDataset, GenreTable) {
        let dataset = InteractionDataset::from_ratings(&self.ratings, options);
        let genres = GenreTable::from_metadata(&dataset, &self.movies);
        (dataset, genres)
    }

    /// Writes `ratings.dat` and `movies.dat` in MovieLens `::` format.
    pub fn write_movielens(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut ratings = String::new();
        for r in &self.ratings {
            writeln!(ratings, "{}::{}::5::{}", r.user, r.item, r.timestamp).expect("string write");
        }
        let mut ids: Vec<u32> = self.movies.keys().copied().collect();
        ids.sort_unstable();
        let mut movies = String::new();
        for id in ids {
            writeln!(movies, "{id}::Movie {id} (2000)::{}", self.movies[&id].join("|")).expect("string write");
        }
        let rp = dir.join("ratings.dat");
        fs::write(&rp, ratings).map_err(|e| Error::io(&rp, e))?;
        let mp = dir.join("movies.dat");
        fs::write(&mp, movies).map_err(|e| Error::io(&mp, e))?;
        Ok(())
    }
}

/// Generates implicit feedback where every user favours one genre.
pub fn generate_synthetic_interactions(config: &SyntheticInteractionConfig) -> Result<SyntheticInteractions> {
    let SyntheticInteractionConfig {
        num_users,
        num_items,
        mean_actions,
        zipf_exponent,
        genre_affinity,
        second_genre_prob,
        seed,
    } = *config;
    if num_items < 2 || num_users == 0 || mean_actions < 3 || mean_actions > num_items {
        return Err(Error::Config(format!(
            "need users > 0, items >= 2 and 3 <= mean_actions <= items (got {num_users}, {num_items}, {mean_actions})"
        )));
    }
    if !(0.0..=1.0).contains(&genre_affinity) || !(0.0..=1.0).contains(&second_genre_prob) {
        return Err(Error::Config("probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_genres = SYNTHETIC_GENRES.len();

    let mut item_genres: Vec<Vec<usize>> = Vec::with_capacity(num_items);
    for _ in 0..num_items {
        let first = rng.random_range(0..num_genres);
        let mut g = vec![first];
        if rng.random_bool(second_genre_prob) {
            let second = rng.random_range(0..num_genres);
            if second != first {
                g.push(second);
            }
        }
        item_genres.push(g);
    }

    // Popularity is independent of genre; shuffle which items are popular.
    let weights = zipf_weights(num_items, zipf_exponent);
    let mut popularity_rank: Vec<usize> = (0..num_items).collect();
    popularity_rank.shuffle(&mut rng);
    let item_weight: Vec<f64> = popularity_rank.iter().map(|&r| weights[r]).collect();
    let global = WeightedIndex::new(&item_weight).expect("positive weights");
    let by_genre: Vec<Option<(Vec<usize>, WeightedIndex<f64>)>> = (0..num_genres)
        .map(|g| {
            let members: Vec<usize> = (0..num_items).filter(|&i| item_genres[i].contains(&g)).collect();
            let w: Vec<f64> = members.iter().map(|&i| item_weight[i]).collect();
            WeightedIndex::new(w).ok().map(|d| (members, d))
        })
        .collect();

    let mut ratings = Vec::new();
    let lo = 3.max(mean_actions / 2);
    let hi = (2 * mean_actions - lo).min(num_items);
    for u in 0..num_users {
        let favourite = rng.random_range(0..num_genres);
        let target = rng.random_range(lo..=hi);
        let mut taken = HashSet::with_capacity(target);
        let mut attempts = 0;
        while taken.len() < target && attempts < 50 * target {
            attempts += 1;
            let item = match &by_genre[favourite] {
                Some((members, dist)) if rng.random_bool(genre_affinity) => members[dist.sample(&mut rng)],
                _ => global.sample(&mut rng),
            };
            if taken.insert(item) {
                ratings.push(RawRating {
                    user: u as u32 + 1,
                    item: item as u32 + 1,
                    timestamp: 978_300_000 + taken.len() as i64,
                });
            }
        }
    }
    let movies = item_genres
        .iter()
        .enumerate()
        .map(|(i, g)| (i as u32 + 1, g.iter().map(|&k| SYNTHETIC_GENRES[k].to_string()).collect()))
        .collect();
    Ok(SyntheticInteractions { ratings, movies })
}
