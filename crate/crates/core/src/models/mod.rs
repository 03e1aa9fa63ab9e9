//! Backbone recommenders: GMF, NeuMF and a GMF-style item-to-item regressor.
//!
//! Every model scores `(left, right)` id pairs: `(user, item)` for the
//! ranking models and `(item, item)` for item-to-item.

mod any;
mod dense;
mod gmf;
mod item2item;
mod neumf;

use ndarray::Array2;

pub use any::{dense_shapes, AnyContext, AnyModel};
pub use dense::Dense;
pub use gmf::{Gmf, GmfContext, GmfHead};
pub use item2item::{Item2Item, Item2ItemContext};
pub use neumf::{NeuMf, NeuMfContext};

use crate::embedding::{EmbeddingGrad, EmbeddingScheme, LookupContext};
use crate::error::{Error, Result};
use crate::param::Param;
use crate::train::AdamState;

/// Gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    /// One entry per scheme, in [`Model::schemes`] order.
    pub embeddings: Vec<EmbeddingGrad>,
    /// One entry per dense tensor, in [`Model::dense`] order.
    pub dense: Vec<Array2<f64>>,
    /// Gradient with respect to each scheme's lookup output.
    pub upstream: Vec<Array2<f64>>,
}

pub trait Model {
    type Context;

    /// One raw output per pair: a logit, or a score for regression.
    fn forward(&self, left: &[usize], right: &[usize]) -> Result<(Vec<f64>, Self::Context)>;

    fn backward(&self, context: &Self::Context, d_output: &[f64]) -> Result<ModelGrads>;

    /// Lookup contexts aligned with [`Model::schemes`].
    fn lookup_contexts<'c>(&self, context: &'c Self::Context) -> Vec<&'c LookupContext>;

    fn kind(&self) -> ModelKind;

    /// Table names aligned with [`Model::schemes`].
    fn scheme_names(&self) -> Vec<&'static str>;

    fn schemes(&self) -> Vec<&EmbeddingScheme>;

    fn schemes_mut(&mut self) -> Vec<&mut EmbeddingScheme>;

    fn dense(&self) -> Vec<&Param>;

    fn dense_mut(&mut self) -> Vec<&mut Param>;

    fn predict(&self, left: &[usize], right: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(left, right)?.0)
    }

    /// Adds every scheme's quantization loss to `grads`; returns the sum.
    fn add_vq_loss(&self, context: &Self::Context, grads: &mut ModelGrads, beta: f64) -> Result<f64> {
        let mut total = 0.0;
        for ((scheme, ctx), grad) in self
            .schemes()
            .into_iter()
            .zip(self.lookup_contexts(context))
            .zip(grads.embeddings.iter_mut())
        {
            total += scheme.add_vq_loss(ctx, grad, beta)?;
        }
        Ok(total)
    }

    fn apply_grads(&mut self, grads: &ModelGrads, adam: &AdamState) -> Result<()> {
        if grads.embeddings.len() != self.schemes().len() || grads.dense.len() != self.dense().len() {
            return Err(Error::Config("gradient does not match model layout".into()));
        }
        for (scheme, g) in self.schemes_mut().into_iter().zip(&grads.embeddings) {
            scheme.apply_grads(g, adam)?;
        }
        for (param, g) in self.dense_mut().into_iter().zip(&grads.dense) {
            adam.update_dense(param, g.view());
        }
        Ok(())
    }

    fn freeze_for_serving(&mut self) -> Result<()> {
        for scheme in self.schemes_mut() {
            scheme.freeze_for_serving()?;
        }
        Ok(())
    }

    fn is_frozen(&self) -> bool {
        self.schemes().iter().all(|s| s.is_frozen())
    }

    /// Number of dense (uncompressed) parameters.
    fn dense_len(&self) -> usize {
        self.dense().iter().map(|p| p.value.len()).sum()
    }
}

/// Models that rank the whole item vocabulary for a user.
pub trait Ranker: Model + Sync {
    fn num_items(&self) -> usize;

    /// Scores of every item for each user, `users.len() x num_items`.
    fn score_all_items(&self, users: &[usize]) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gmf,
    NeuMf,
    Item2Item,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Gmf => 0,
            ModelKind::NeuMf => 1,
            ModelKind::Item2Item => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Gmf),
            1 => Some(ModelKind::NeuMf),
            2 => Some(ModelKind::Item2Item),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gmf => "gmf",
            ModelKind::NeuMf => "neumf",
            ModelKind::Item2Item => "i2i",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmf" => Ok(ModelKind::Gmf),
            "neumf" => Ok(ModelKind::NeuMf),
            "i2i" | "item2item" => Ok(ModelKind::Item2Item),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

fn check_batch(left: &[usize], right: &[usize]) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::Config(format!(
            "batch sides differ in length: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
