//! Trainable tensors and sparse row gradients.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A trainable 2-d tensor stored in single precision, with its Adam moments.
///
/// All arithmetic on parameters happens in `f64`; values are rounded back to
/// `f32` after each update so that the training state is always exactly what a
/// serving artifact would store.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Array2<f32>,
    pub(crate) first_moment: Array2<f32>,
    pub(crate) second_moment: Array2<f32>,
}

impl Param {
    pub fn new(value: Array2<f32>) -> Self {
        let dim = value.raw_dim();
        Param {
            value,
            first_moment: Array2::zeros(dim.clone()),
            second_moment: Array2::zeros(dim),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std_dev: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std_dev).expect("finite std dev");
        Param::new(Array2::from_shape_fn((rows, cols), |_| {
            dist.sample(rng) as f32
        }))
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        if limit == 0.0 {
            return Param::zeros(rows, cols);
        }
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Param::new(Array2::from_shape_fn((rows, cols), |_| {
            dist.sample(rng) as f32
        }))
    }

    pub fn rows(&self) -> usize {
        self.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.value.ncols()
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.value.row(i).into_iter().map(|&v| f64::from(v))
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.value.mapv(f64::from)
    }

    /// Drops optimizer state, keeping only the values.
    pub fn into_value(self) -> Array2<f32> {
        self.value
    }
}

/// Gradient for a subset of rows of a parameter. Rows may repeat; repeated
/// rows are summed before the optimizer sees them.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    pub rows: Vec<usize>,
    pub values: Array2<f64>,
}

impl RowGrad {
    pub fn new(rows: Vec<usize>, values: Array2<f64>) -> Self {
        assert_eq!(rows.len(), values.nrows(), "one gradient row per index");
        RowGrad { rows, values }
    }

    pub fn empty(cols: usize) -> Self {
        RowGrad {
            rows: Vec::new(),
            values: Array2::zeros((0, cols)),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sums duplicate rows. Output is sorted by row index.
    pub fn coalesce(&self) -> RowGrad {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|&k| (self.rows[k], k));
        let mut rows = Vec::with_capacity(order.len());
        let mut values: Vec<f64> = Vec::with_capacity(order.len() * self.values.ncols());
        let cols = self.values.ncols();
        for k in order {
            let r = self.rows[k];
            if rows.last() != Some(&r) {
                rows.push(r);
                values.extend(std::iter::repeat_n(0.0, cols));
            }
            let start = values.len() - cols;
            for (dst, &src) in values[start..].iter_mut().zip(self.values.row(k)) {
                *dst += src;
            }
        }
        let n = rows.len();
        RowGrad {
            rows,
            values: Array2::from_shape_vec((n, cols), values).expect("shape"),
        }
    }

    /// Dense equivalent with `total_rows` rows.
    pub fn to_dense(&self, total_rows: usize) -> Array2<f64> {
        let mut dense = Array2::zeros((total_rows, self.values.ncols()));
        for (k, &r) in self.rows.iter().enumerate() {
            let mut row = dense.row_mut(r);
            row += &self.values.row(k);
        }
        dense
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}
