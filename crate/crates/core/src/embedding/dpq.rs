//! Differentiable product quantization (vector-quantization variant).

use ndarray::Array2;
use rand::Rng;

use super::codebook::{quantize, Code, CodebookSet, ScalarCentroidIndex};
use crate::error::{Error, Result};
use crate::param::{Param, RowGrad};
use crate::train::AdamState;

/// Standard deviation of the raw embedding initialization.
pub const INIT_STD: f64 = 0.01;
/// Jitter added to centroids seeded from raw rows.
pub const CENTROID_NOISE_STD: f64 = 0.001;

/// Result of looking up one group of ids at a fixed centroid limit.
#[derive(Debug, Clone)]
pub struct GroupLookup {
    /// Raw `e` rows (training mode only).
    pub raw: Option<Array2<f64>>,
    /// Decoded centroids, one row per id.
    pub output: Array2<f64>,
    /// Codes, `D` per id, row-major.
    pub codes: Vec<Code>,
}

/// Gradients for one DPQ instance.
#[derive(Debug, Clone)]
pub struct DpqGrad {
    pub raw: RowGrad,
    pub codebook: Array2<f64>,
}

/// A DPQ table: raw embeddings `e` plus codebooks while training; cached
/// codes plus codebooks once frozen.
#[derive(Debug, Clone)]
pub struct DpqEmbedding {
    n: usize,
    dim: usize,
    raw: Option<Param>,
    codebooks: CodebookSet,
    codes: Option<Vec<Code>>,
    indexes: Vec<ScalarCentroidIndex>,
    limits: Vec<usize>,
}

impl DpqEmbedding {
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        dim: usize,
        subspaces: usize,
        centroids: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let raw = Param::normal(n, dim, INIT_STD, rng);
        let codebooks =
            CodebookSet::sample_from_rows(&raw.value, subspaces, centroids, CENTROID_NOISE_STD, rng)?;
        Ok(Self::from_parts(raw, codebooks))
    }

    /// Training-mode table from explicit values.
    pub fn from_parts(raw: Param, codebooks: CodebookSet) -> Self {
        let mut dpq = DpqEmbedding {
            n: raw.rows(),
            dim: raw.cols(),
            raw: Some(raw),
            limits: vec![codebooks.centroids()],
            codebooks,
            codes: None,
            indexes: Vec::new(),
        };
        dpq.rebuild_indexes();
        dpq
    }

    /// Serving-mode table from stored codes.
    pub fn from_codes(n: usize, codebooks: CodebookSet, codes: Vec<Code>) -> Result<Self> {
        if codes.len() != n * codebooks.subspaces() {
            return Err(Error::Malformed(format!(
                "{} codes for {} items with {} subspaces",
                codes.len(),
                n,
                codebooks.subspaces()
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| usize::from(c) >= codebooks.centroids()) {
            return Err(Error::Malformed(format!(
                "code {bad} exceeds centroid count {}",
                codebooks.centroids()
            )));
        }
        Ok(DpqEmbedding {
            n,
            dim: codebooks.dim(),
            raw: None,
            limits: vec![codebooks.centroids()],
            codebooks,
            codes: Some(codes),
            indexes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.codebooks.subspaces()
    }

    pub fn centroids(&self) -> usize {
        self.codebooks.centroids()
    }

    pub fn codebooks(&self) -> &CodebookSet {
        &self.codebooks
    }

    #[cfg(test)]
    pub(crate) fn codebooks_mut(&mut self) -> &mut CodebookSet {
        &mut self.codebooks
    }

    pub fn raw(&self) -> Option<&Param> {
        self.raw.as_ref()
    }

    pub fn stored_codes(&self) -> Option<&[Code]> {
        self.codes.as_deref()
    }

    pub fn is_frozen(&self) -> bool {
        self.codes.is_some()
    }

    /// Declares which centroid limits lookups will use so one-dimensional
    /// subspaces can be searched through a sorted index.
    pub fn set_limits(&mut self, limits: &[usize]) {
        let mut limits = limits.to_vec();
        limits.sort_unstable();
        limits.dedup();
        self.limits = limits;
        self.rebuild_indexes();
    }

    fn rebuild_indexes(&mut self) {
        self.indexes = if self.raw.is_some() {
            self.limits
                .iter()
                .filter_map(|&l| ScalarCentroidIndex::build(&self.codebooks, l))
                .collect()
        } else {
            Vec::new()
        };
    }

    /// Codes of raw row `i` restricted to centroids below `limit`.
    fn encode_row(&self, raw: &Param, i: usize, limit: usize, e: &mut Vec<f64>, out: &mut [Code]) {
        e.clear();
        e.extend(raw.row_f64(i));
        let limit = limit.min(self.centroids());
        if let Some(index) = self.indexes.iter().find(|ix| ix.limit() == limit) {
            index.quantize_into(e, out);
        } else {
            let limits = vec![limit; self.subspaces()];
            out.copy_from_slice(&quantize(e, &self.codebooks, &limits));
        }
    }

    /// Looks up `ids` (local to this table) using only the first `limit`
    /// centroids of every subspace.
    pub fn lookup_group(&self, ids: &[usize], limit: usize) -> Result<GroupLookup> {
        for &id in ids {
            if id >= self.n {
                return Err(Error::IdOutOfRange { id, size: self.n });
            }
        }
        let d_sub = self.subspaces();
        let mut output = Array2::zeros((ids.len(), self.dim));
        let mut codes = vec![0 as Code; ids.len() * d_sub];
        match (&self.raw, &self.codes) {
            (Some(raw), _) => {
                let mut raw_rows = Array2::zeros((ids.len(), self.dim));
                let mut e = Vec::with_capacity(self.dim);
                for (b, &id) in ids.iter().enumerate() {
                    let row_codes = &mut codes[b * d_sub..(b + 1) * d_sub];
                    self.encode_row(raw, id, limit, &mut e, row_codes);
                    for (dst, &v) in raw_rows.row_mut(b).iter_mut().zip(&e) {
                        *dst = v;
                    }
                    let out = output.row_mut(b).into_slice().expect("standard layout");
                    self.codebooks.decode_into(row_codes, out);
                }
                Ok(GroupLookup {
                    raw: Some(raw_rows),
                    output,
                    codes,
                })
            }
            (None, Some(stored)) => {
                for (b, &id) in ids.iter().enumerate() {
                    let row_codes = &stored[id * d_sub..(id + 1) * d_sub];
                    codes[b * d_sub..(b + 1) * d_sub].copy_from_slice(row_codes);
                    let out = output.row_mut(b).into_slice().expect("standard layout");
                    self.codebooks.decode_into(row_codes, out);
                }
                Ok(GroupLookup {
                    raw: None,
                    output,
                    codes,
                })
            }
            (None, None) => unreachable!("a DPQ table always holds raw rows or codes"),
        }
    }

    /// Caches codes for every row (row `i` restricted to `limit_of(i)`
    /// centroids) and discards the raw table. Idempotent.
    pub fn freeze(&mut self, limit_of: impl Fn(usize) -> usize) {
        let Some(raw) = self.raw.take() else {
            return;
        };
        let d_sub = self.subspaces();
        let mut codes = vec![0 as Code; self.n * d_sub];
        let mut e = Vec::with_capacity(self.dim);
        // Indexes cover the declared limits; other limits fall back to a scan.
        for i in 0..self.n {
            self.encode_row(&raw, i, limit_of(i), &mut e, &mut codes[i * d_sub..(i + 1) * d_sub]);
        }
        self.codes = Some(codes);
        self.indexes.clear();
        self.codebooks.param = Param::new(std::mem::take(&mut self.codebooks.param.value));
    }

    /// Scatters a gradient on decoded outputs into centroid rows.
    pub(crate) fn scatter_centroid_grad<'a>(
        &self,
        codes: &[Code],
        grad_rows: impl Iterator<Item = ndarray::ArrayView1<'a, f64>>,
        into: &mut Array2<f64>,
    ) {
        let d_sub = self.subspaces();
        let k_total = self.centroids();
        let w = self.codebooks.sub_dim();
        for (b, g) in grad_rows.enumerate() {
            for s in 0..d_sub {
                let k = usize::from(codes[b * d_sub + s]);
                let mut dst = into.row_mut(s * k_total + k);
                for j in 0..w {
                    dst[j] += g[s * w + j];
                }
            }
        }
    }

    pub fn zero_grad(&self) -> DpqGrad {
        DpqGrad {
            raw: RowGrad::empty(self.dim),
            codebook: Array2::zeros(self.codebooks.values().raw_dim()),
        }
    }

    pub fn apply_grad(&mut self, grad: &DpqGrad, adam: &AdamState) -> Result<()> {
        let raw = self.raw.as_mut().ok_or(Error::Frozen)?;
        adam.update_rows(raw, &grad.raw);
        adam.update_dense(&mut self.codebooks.param, grad.codebook.view());
        for index in &mut self.indexes {
            index.refresh(&self.codebooks);
        }
        Ok(())
    }
}
