use crate::dataset::RelevanceDataset;
use crate::error::{Error, Result};
use crate::models::Model;

const BATCH: usize = 4096;

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyEvalSplit);
    }
    assert_eq!(preds.len(), targets.len());
    let sq: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

/// RMSE of a frozen model over the evaluation pairs.
pub fn evaluate_rmse<M: Model>(model: &M, dataset: &RelevanceDataset) -> Result<f64> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let pairs: Vec<_> = dataset.eval_pairs().copied().collect();
    let mut preds = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(BATCH) {
        let a: Vec<usize> = chunk.iter().map(|p| p.a).collect();
        let b: Vec<usize> = chunk.iter().map(|p| p.b).collect();
        preds.extend(model.predict(&a, &b)?);
    }
    let targets: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    rmse(&preds, &targets)
}
