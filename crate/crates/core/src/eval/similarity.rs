use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::GenreTable;
use crate::error::{Error, Result};

/// Categories of the published code-similarity figure.
pub const FIGURE_CATEGORIES: [&str; 4] = ["Sci-Fi", "Romance", "Animation", "Horror"];

/// Number of positions at which two codes pick the same centroid.
pub fn code_similarity(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x == y).count()
}

/// Mean pairwise code similarity between categories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub categories: Vec<String>,
    pub values: Array2<f64>,
    /// Items sampled per category on each side.
    pub samples: Vec<(usize, usize)>,
}

impl SimilarityMatrix {
    /// Whether same-category similarity beats the mean similarity to the
    /// other categories, per category.
    pub fn diagonal_dominance(&self) -> Vec<bool> {
        let c = self.categories.len();
        (0..c)
            .map(|i| {
                let off: f64 = (0..c).filter(|&j| j != i).map(|j| self.values[[i, j]]).sum::<f64>();
                let mean_off = off / (c - 1).max(1) as f64;
                self.values[[i, i]] > mean_off
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["category".to_string()];
        header.extend(self.categories.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.categories.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.values.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Similarity matrix over `categories`.
///
/// Items are randomly assigned to side A or B. For each category up to
/// `sample_size` items are drawn from each side; entry `(i, j)` averages the
/// similarity of every A-sample of `i` with every B-sample of `j`, and the
/// matrix is then symmetrized. Items in several categories count for each.
pub fn code_similarity_matrix(
    codes: &[Vec<u32>],
    genres: &GenreTable,
    categories: &[&str],
    sample_size: usize,
    seed: u64,
) -> Result<SimilarityMatrix> {
    if genres.genres.len() != codes.len() {
        return Err(Error::Config(format!(
            "{} code rows but {} genre entries",
            codes.len(),
            genres.genres.len()
        )));
    }
    if sample_size == 0 || categories.is_empty() {
        return Err(Error::Config("need at least one category and a positive sample size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side_a: Vec<bool> = (0..codes.len()).map(|_| rng.random_bool(0.5)).collect();
    let mut sets = Vec::with_capacity(categories.len());
    for &cat in categories {
        let members = genres.items_with(cat);
        let mut a: Vec<usize> = members.iter().copied().filter(|&i| side_a[i]).collect();
        let mut b: Vec<usize> = members.iter().copied().filter(|&i| !side_a[i]).collect();
        if a.is_empty() || b.is_empty() {
            return Err(Error::SparseCategory(cat.to_string()));
        }
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        a.truncate(sample_size);
        b.truncate(sample_size);
        sets.push((a, b));
    }
    let c = categories.len();
    let mut raw = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            let (a, _) = &sets[i];
            let (_, b) = &sets[j];
            let total: usize = a
                .iter()
                .flat_map(|&x| b.iter().map(move |&y| code_similarity(&codes[x], &codes[y])))
                .sum();
            raw[[i, j]] = total as f64 / (a.len() * b.len()) as f64;
        }
    }
    let values = (&raw + &raw.t()) / 2.0;
    Ok(SimilarityMatrix {
        categories: categories.iter().map(|s| s.to_string()).collect(),
        values,
        samples: sets.iter().map(|(a, b)| (a.len(), b.len())).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint_codes() {
        assert_eq!(code_similarity(&[1, 2, 3], &[1, 2, 3]), 3);
        assert_eq!(code_similarity(&[1, 2, 3], &[0, 0, 0]), 0);
    }

    fn table(genres: &[&str]) -> GenreTable {
        GenreTable {
            genres: genres.iter().map(|g| Some(vec![g.to_string()])).collect(),
        }
    }

    #[test]
    fn planted_categories_dominate() {
        // Items of category c all share code c in every position.
        let cats = ["A", "B", "C"];
        let mut genre_names = Vec::new();
        let mut codes = Vec::new();
        for i in 0..60 {
            genre_names.push(cats[i % 3]);
            codes.push(vec![(i % 3) as u32; 4]);
        }
        let m = code_similarity_matrix(&codes, &table(&genre_names), &cats, 200, 1).unwrap();
        for i in 0..3 {
            assert_eq!(m.values[[i, i]], 4.0);
            for j in 0..3 {
                assert_eq!(m.values[[i, j]], m.values[[j, i]]);
                if i != j {
                    assert_eq!(m.values[[i, j]], 0.0);
                }
            }
        }
        assert_eq!(m.diagonal_dominance(), vec![true; 3]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("category,A,B,C\nA,4.000000,0.000000,0.000000\n"));
    }

    #[test]
    fn missing_category_is_named() {
        let codes = vec![vec![0u32]; 4];
        let err = code_similarity_matrix(&codes, &table(&["A", "A", "A", "A"]), &["A", "Horror"], 10, 0).unwrap_err();
        assert!(matches!(err, Error::SparseCategory(c) if c == "Horror"));
    }

    #[test]
    fn samples_are_capped() {
        let codes = vec![vec![0u32, 1]; 1000];
        let genres = table(&vec!["A"; 1000]);
        let m = code_similarity_matrix(&codes, &genres, &["A"], 200, 3).unwrap();
        assert_eq!(m.samples, vec![(200, 200)]);
        assert_eq!(m.values[[0, 0]], 2.0);
    }
}
