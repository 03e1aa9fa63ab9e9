use ndarray::ArrayView2;

use crate::param::{Param, RowGrad};

/// Adam with lazy (row-sparse) updates for embedding tables.
///
/// Dense parameters get the textbook update. Row-sparse gradients update only
/// the touched rows and their moments; bias correction always uses the global
/// step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once per mini-batch before updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    fn corrected_rate(&self) -> (f64, f64) {
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        (self.learning_rate / bc1, bc2)
    }

    #[inline]
    fn update_entry(&self, value: &mut f32, m: &mut f32, v: &mut f32, g: f64, rate: f64, bc2: f64) {
        let m_new = self.beta1 * f64::from(*m) + (1.0 - self.beta1) * g;
        let v_new = self.beta2 * f64::from(*v) + (1.0 - self.beta2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        let denom = (v_new / bc2).sqrt() + self.epsilon;
        *value = (f64::from(*value) - rate * m_new / denom) as f32;
    }

    pub fn update_dense(&self, param: &mut Param, grad: ArrayView2<'_, f64>) {
        assert_eq!(param.value.dim(), grad.dim(), "gradient shape mismatch");
        let (rate, bc2) = self.corrected_rate();
        let Param {
            value,
            first_moment,
            second_moment,
        } = param;
        for (((w, m), v), &g) in value
            .iter_mut()
            .zip(first_moment.iter_mut())
            .zip(second_moment.iter_mut())
            .zip(grad.iter())
        {
            self.update_entry(w, m, v, g, rate, bc2);
        }
    }

    pub fn update_rows(&self, param: &mut Param, grad: &RowGrad) {
        if grad.is_empty() {
            return;
        }
        assert_eq!(param.cols(), grad.values.ncols(), "gradient width mismatch");
        let merged = grad.coalesce();
        let (rate, bc2) = self.corrected_rate();
        for (k, &r) in merged.rows.iter().enumerate() {
            let g = merged.values.row(k);
            let mut w = param.value.row_mut(r);
            let mut m = param.first_moment.row_mut(r);
            let mut v = param.second_moment.row_mut(r);
            for j in 0..g.len() {
                self.update_entry(&mut w[j], &mut m[j], &mut v[j], g[j], rate, bc2);
            }
        }
    }
}
