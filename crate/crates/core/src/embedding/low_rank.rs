use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Param, RowGrad};

/// Factorized table `W = P Q` with `P: n x r` and `Q: r x d`.
#[derive(Debug, Clone)]
pub struct LowRankEmbedding {
    pub(crate) p: Param,
    pub(crate) q: Param,
}

impl LowRankEmbedding {
    /// Both factors are Gaussian, scaled so rows of `P Q` have per-entry
    /// standard deviation `std_dev`.
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        dim: usize,
        rank: usize,
        std_dev: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("low-rank factorization needs rank >= 1".into()));
        }
        let factor_std = (std_dev / (rank as f64).sqrt()).sqrt();
        Ok(LowRankEmbedding {
            p: Param::normal(n, rank, factor_std, rng),
            q: Param::normal(rank, dim, factor_std, rng),
        })
    }

    pub fn from_factors(p: Array2<f32>, q: Array2<f32>) -> Result<Self> {
        if p.ncols() != q.nrows() {
            return Err(Error::Config(format!(
                "factor shapes {:?} and {:?} do not chain",
                p.dim(),
                q.dim()
            )));
        }
        Ok(LowRankEmbedding {
            p: Param::new(p),
            q: Param::new(q),
        })
    }

    pub fn len(&self) -> usize {
        self.p.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.p.cols()
    }

    pub fn dim(&self) -> usize {
        self.q.cols()
    }

    pub fn p(&self) -> &Array2<f32> {
        &self.p.value
    }

    pub fn q(&self) -> &Array2<f32> {
        &self.q.value
    }

    pub fn factors_mut(&mut self) -> (&mut Array2<f32>, &mut Array2<f32>) {
        (&mut self.p.value, &mut self.q.value)
    }

    /// Returns the output rows and the gathered `P` rows needed by backward.
    pub fn lookup(&self, ids: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = self.len();
        let mut p_rows = Array2::zeros((ids.len(), self.rank()));
        for (b, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::IdOutOfRange { id, size: n });
            }
            for (o, v) in p_rows.row_mut(b).iter_mut().zip(self.p.row_f64(id)) {
                *o = v;
            }
        }
        let out = p_rows.dot(&self.q.to_f64());
        Ok((out, p_rows))
    }

    pub fn backward(
        &self,
        ids: &[usize],
        p_rows: &Array2<f64>,
        upstream: &Array2<f64>,
    ) -> (RowGrad, Array2<f64>) {
        let grad_p = upstream.dot(&self.q.to_f64().t());
        let grad_q = p_rows.t().dot(upstream);
        (RowGrad::new(ids.to_vec(), grad_p), grad_q)
    }
}
