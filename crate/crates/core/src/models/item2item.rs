use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use super::{ModelKind, check_batch, GmfHead, Model, ModelGrads};
use crate::embedding::{EmbeddingScheme, Lookup, LookupContext, SchemeSpec};
use crate::error::Result;
use crate::param::Param;

/// Item-to-item relevance regressor: one item table on both sides of a GMF
/// head, trained with squared loss.
#[derive(Debug, Clone)]
pub struct Item2Item {
    pub item: EmbeddingScheme,
    pub head: GmfHead,
}

/// Both sides are looked up in one call: rows `0..B` are the left items,
/// rows `B..2B` the right items.
#[derive(Debug, Clone)]
pub struct Item2ItemContext {
    pub lookup: Lookup,
    pub batch: usize,
}

impl Item2Item {
    pub fn new<R: Rng + ?Sized>(num_items: usize, dim: usize, spec: &SchemeSpec, rng: &mut R) -> Result<Self> {
        let item = spec.build(num_items, dim, rng)?;
        let head = GmfHead::new(dim, rng);
        Ok(Item2Item { item, head })
    }
}

impl Model for Item2Item {
    type Context = Item2ItemContext;

    fn forward(&self, left: &[usize], right: &[usize]) -> Result<(Vec<f64>, Item2ItemContext)> {
        check_batch(left, right)?;
        let ids: Vec<usize> = left.iter().chain(right).copied().collect();
        let lookup = self.item.lookup_forward(&ids)?;
        let batch = left.len();
        let a = lookup.output.slice(s![..batch, ..]).to_owned();
        let b = lookup.output.slice(s![batch.., ..]).to_owned();
        let scores = self.head.forward(&a, &b);
        Ok((scores, Item2ItemContext { lookup, batch }))
    }

    fn backward(&self, ctx: &Item2ItemContext, d_output: &[f64]) -> Result<ModelGrads> {
        let out = &ctx.lookup.output;
        let a = out.slice(s![..ctx.batch, ..]).to_owned();
        let b = out.slice(s![ctx.batch.., ..]).to_owned();
        let (dh, dbias, da, db) = self.head.backward(&a, &b, d_output);
        let upstream: Array2<f64> = concatenate(Axis(0), &[da.view(), db.view()]).expect("same width");
        Ok(ModelGrads {
            embeddings: vec![self.item.lookup_backward(&ctx.lookup.context, &upstream)?],
            dense: vec![dh, dbias],
            upstream: vec![upstream],
        })
    }

    fn lookup_contexts<'c>(&self, ctx: &'c Item2ItemContext) -> Vec<&'c LookupContext> {
        vec![&ctx.lookup.context]
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Item2Item
    }

    fn scheme_names(&self) -> Vec<&'static str> {
        vec!["item"]
    }

    fn schemes(&self) -> Vec<&EmbeddingScheme> {
        vec![&self.item]
    }

    fn schemes_mut(&mut self) -> Vec<&mut EmbeddingScheme> {
        vec![&mut self.item]
    }

    fn dense(&self) -> Vec<&Param> {
        vec![&self.head.h, &self.head.bias]
    }

    fn dense_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.head.h, &mut self.head.bias]
    }
}
