//! Task losses and the auxiliary vector-quantization loss.

use ndarray::{Array2, ArrayView2, Zip};

/// Loss value and gradient with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean binary cross-entropy computed from logits.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> LossGrad {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    LossGrad {
        loss: loss / n,
        grad,
    }
}

/// Mean squared error.
pub fn squared_loss(preds: &[f64], targets: &[f64]) -> LossGrad {
    assert_eq!(preds.len(), targets.len());
    let n = preds.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    LossGrad {
        loss: loss / n,
        grad,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Auxiliary quantization loss and its two stop-gradient halves.
#[derive(Debug, Clone)]
pub struct VqLoss {
    pub loss: f64,
    /// Gradient reaching the raw embeddings (commitment term).
    pub grad_raw: Array2<f64>,
    /// Gradient reaching the selected centroids (codebook term).
    pub grad_quantized: Array2<f64>,
}

/// `mean ||sg(e) - q||^2 + beta * mean ||e - sg(q)||^2`, means taken over rows.
pub fn vq_loss(raw: ArrayView2<'_, f64>, quantized: ArrayView2<'_, f64>, beta: f64) -> VqLoss {
    assert_eq!(raw.dim(), quantized.dim());
    let n = raw.nrows().max(1) as f64;
    let mut sq = 0.0;
    let mut grad_raw = Array2::zeros(raw.raw_dim());
    let mut grad_quantized = Array2::zeros(raw.raw_dim());
    Zip::from(&mut grad_raw)
        .and(&mut grad_quantized)
        .and(raw)
        .and(quantized)
        .for_each(|gr, gq, &e, &q| {
            let diff = e - q;
            sq += diff * diff;
            *gr = beta * 2.0 * diff / n;
            *gq = -2.0 * diff / n;
        });
    VqLoss {
        loss: (1.0 + beta) * sq / n,
        grad_raw,
        grad_quantized,
    }
}
