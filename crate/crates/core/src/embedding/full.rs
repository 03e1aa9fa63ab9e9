use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Param, RowGrad};

/// One-hot embedding: a plain `n x d` table.
#[derive(Debug, Clone)]
pub struct FullEmbedding {
    pub(crate) table: Param,
}

impl FullEmbedding {
    pub fn new<R: Rng + ?Sized>(n: usize, dim: usize, std_dev: f64, rng: &mut R) -> Self {
        FullEmbedding {
            table: Param::normal(n, dim, std_dev, rng),
        }
    }

    pub fn from_table(table: Array2<f32>) -> Self {
        FullEmbedding {
            table: Param::new(table),
        }
    }

    pub fn len(&self) -> usize {
        self.table.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Array2<f32> {
        &self.table.value
    }

    /// Direct access for external gradient checks and warm starts.
    pub fn table_mut(&mut self) -> &mut Array2<f32> {
        &mut self.table.value
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Array2<f64>> {
        let n = self.len();
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (b, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::IdOutOfRange { id, size: n });
            }
            for (o, v) in out.row_mut(b).iter_mut().zip(self.table.row_f64(id)) {
                *o = v;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, ids: &[usize], upstream: &Array2<f64>) -> RowGrad {
        RowGrad::new(ids.to_vec(), upstream.clone())
    }
}
