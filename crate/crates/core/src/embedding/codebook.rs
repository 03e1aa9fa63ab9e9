//! Per-subspace centroid tables and nearest-centroid search.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::param::Param;

/// A KD code entry. Centroid counts are capped at 2^16.
pub type Code = u16;

pub const MAX_CENTROIDS: usize = 1 << 16;

/// `D` subspaces with `K` centroids each, every centroid of width `d / D`.
///
/// Storage is one parameter of shape `(D * K, d / D)`; row `s * K + k` is
/// centroid `k` of subspace `s`, which is also the serialized order.
#[derive(Debug, Clone)]
pub struct CodebookSet {
    subspaces: usize,
    centroids: usize,
    sub_dim: usize,
    pub(crate) param: Param,
}

impl CodebookSet {
    pub fn new(dim: usize, subspaces: usize, centroids: usize, values: Array2<f32>) -> Result<Self> {
        validate_shape(dim, subspaces, centroids)?;
        let sub_dim = dim / subspaces;
        if values.dim() != (subspaces * centroids, sub_dim) {
            return Err(Error::Config(format!(
                "codebook values have shape {:?}, expected ({}, {})",
                values.dim(),
                subspaces * centroids,
                sub_dim
            )));
        }
        Ok(CodebookSet {
            subspaces,
            centroids,
            sub_dim,
            param: Param::new(values),
        })
    }

    /// Seeds every subspace with `K` slices of randomly chosen rows of `table`,
    /// jittered by Gaussian noise.
    pub fn sample_from_rows<R: Rng + ?Sized>(
        table: &Array2<f32>,
        subspaces: usize,
        centroids: usize,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, dim) = table.dim();
        validate_shape(dim, subspaces, centroids)?;
        if n == 0 {
            return Err(Error::Config("cannot seed centroids from an empty table".into()));
        }
        let sub_dim = dim / subspaces;
        let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut values = Array2::<f32>::zeros((subspaces * centroids, sub_dim));
        for s in 0..subspaces {
            let picks: Vec<usize> = if n >= centroids {
                sample(rng, n, centroids).into_vec()
            } else {
                (0..centroids).map(|_| rng.random_range(0..n)).collect()
            };
            for (k, &row) in picks.iter().enumerate() {
                for j in 0..sub_dim {
                    let base = f64::from(table[[row, s * sub_dim + j]]);
                    values[[s * centroids + k, j]] = (base + noise.sample(rng)) as f32;
                }
            }
        }
        CodebookSet::new(dim, subspaces, centroids, values)
    }

    pub fn subspaces(&self) -> usize {
        self.subspaces
    }

    pub fn centroids(&self) -> usize {
        self.centroids
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.sub_dim * self.subspaces
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.param.value
    }

    /// Centroid `k` of subspace `s`.
    pub fn centroid(&self, s: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.param.row_f64(s * self.centroids + k)
    }

    /// Concatenates the selected centroid of every subspace into `out`.
    pub fn decode_into(&self, codes: &[Code], out: &mut [f64]) {
        debug_assert_eq!(codes.len(), self.subspaces);
        for (s, &k) in codes.iter().enumerate() {
            let dst = &mut out[s * self.sub_dim..(s + 1) * self.sub_dim];
            for (o, c) in dst.iter_mut().zip(self.centroid(s, usize::from(k))) {
                *o = c;
            }
        }
    }

    pub fn decode(&self, codes: &[Code]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.decode_into(codes, &mut out);
        out
    }

    /// Squared distance between a slice of `e` and centroid `k` of subspace `s`.
    #[inline]
    fn distance(&self, e_sub: &[f64], s: usize, k: usize) -> f64 {
        e_sub
            .iter()
            .zip(self.centroid(s, k))
            .map(|(&x, c)| (x - c) * (x - c))
            .sum()
    }
}

fn validate_shape(dim: usize, subspaces: usize, centroids: usize) -> Result<()> {
    if subspaces == 0 || dim % subspaces != 0 {
        return Err(Error::Config(format!(
            "{subspaces} subspaces do not divide embedding dimension {dim}"
        )));
    }
    if centroids == 0 || centroids > MAX_CENTROIDS {
        return Err(Error::Config(format!(
            "centroid count {centroids} must lie in [1, {MAX_CENTROIDS}]"
        )));
    }
    Ok(())
}

/// Nearest-centroid codes of `e`, searching only centroids `k < max_code[s]`
/// in subspace `s`. Ties go to the smallest index.
pub fn quantize(e: &[f64], codebooks: &CodebookSet, max_code: &[usize]) -> Vec<Code> {
    assert_eq!(e.len(), codebooks.dim(), "vector width must match codebooks");
    assert_eq!(max_code.len(), codebooks.subspaces(), "one limit per subspace");
    let w = codebooks.sub_dim();
    (0..codebooks.subspaces())
        .map(|s| {
            let limit = max_code[s].clamp(1, codebooks.centroids());
            let e_sub = &e[s * w..(s + 1) * w];
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for k in 0..limit {
                let dist = codebooks.distance(e_sub, s, k);
                if dist < best_dist {
                    best = k;
                    best_dist = dist;
                }
            }
            best as Code
        })
        .collect()
}

/// Sorted view of one-dimensional subspaces for logarithmic nearest-centroid
/// search. Produces exactly the codes of [`quantize`].
#[derive(Debug, Clone)]
pub(crate) struct ScalarCentroidIndex {
    limit: usize,
    /// Per subspace: the first `limit` centroids by (value, index).
    sorted: Vec<Vec<(f64, Code)>>,
}

fn by_value_then_index(a: &(f64, Code), b: &(f64, Code)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl ScalarCentroidIndex {
    pub(crate) fn build(codebooks: &CodebookSet, limit: usize) -> Option<Self> {
        if codebooks.sub_dim() != 1 {
            return None;
        }
        let limit = limit.clamp(1, codebooks.centroids());
        let values = codebooks.values();
        let k_total = codebooks.centroids();
        let sorted = (0..codebooks.subspaces())
            .map(|s| {
                let mut entries: Vec<(f64, Code)> = (0..limit)
                    .map(|k| (f64::from(values[[s * k_total + k, 0]]), k as Code))
                    .collect();
                entries.sort_by(by_value_then_index);
                entries
            })
            .collect();
        Some(ScalarCentroidIndex { limit, sorted })
    }

    /// Re-reads centroid values after an update. Small steps leave the
    /// previous order nearly sorted, so an insertion sort repairs it cheaply.
    pub(crate) fn refresh(&mut self, codebooks: &CodebookSet) {
        let values = codebooks.values();
        let k_total = codebooks.centroids();
        for (s, entries) in self.sorted.iter_mut().enumerate() {
            for e in entries.iter_mut() {
                e.0 = f64::from(values[[s * k_total + usize::from(e.1), 0]]);
            }
            for i in 1..entries.len() {
                let mut j = i;
                while j > 0 && by_value_then_index(&entries[j - 1], &entries[j]).is_gt() {
                    entries.swap(j - 1, j);
                    j -= 1;
                }
            }
        }
    }

    pub(crate) fn limit(&self) -> usize {
        self.limit
    }

    fn nearest(entries: &[(f64, Code)], x: f64) -> Code {
        let dist = |j: usize| (x - entries[j].0) * (x - entries[j].0);
        let p = entries.partition_point(|&(v, _)| v < x);
        let mut best_dist = f64::INFINITY;
        let mut best = Code::MAX;
        let consider = |j: usize, best_dist: &mut f64, best: &mut Code| {
            let d = dist(j);
            let k = entries[j].1;
            if d < *best_dist || (d == *best_dist && k < *best) {
                *best_dist = d;
                *best = k;
            }
        };
        if p > 0 {
            consider(p - 1, &mut best_dist, &mut best);
        }
        if p < entries.len() {
            consider(p, &mut best_dist, &mut best);
        }
        // Rounded distances are monotone away from x, so equal-distance
        // candidates (duplicate values included) sit contiguously next to
        // the neighbours.
        let mut j = p.saturating_sub(1);
        while j > 0 && dist(j - 1) == best_dist {
            j -= 1;
            consider(j, &mut best_dist, &mut best);
        }
        let mut j = p;
        while j + 1 < entries.len() && dist(j + 1) == best_dist {
            j += 1;
            consider(j, &mut best_dist, &mut best);
        }
        best
    }

    pub(crate) fn quantize_into(&self, e: &[f64], out: &mut [Code]) {
        for ((o, &x), entries) in out.iter_mut().zip(e).zip(&self.sorted) {
            *o = Self::nearest(entries, x);
        }
    }
}
