use ndarray::Array2;

use super::{
    Gmf, GmfContext, Item2Item, Item2ItemContext, Model, ModelGrads, ModelKind, NeuMf, NeuMfContext, Ranker,
};
use crate::embedding::{EmbeddingScheme, LookupContext};
use crate::error::{Error, Result};
use crate::param::Param;

/// Any backbone, for code that picks the model at run time.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Gmf(Gmf),
    NeuMf(NeuMf),
    Item2Item(Item2Item),
}

#[derive(Debug, Clone)]
pub enum AnyContext {
    Gmf(GmfContext),
    NeuMf(NeuMfContext),
    Item2Item(Item2ItemContext),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Gmf($m) => $body,
            AnyModel::NeuMf($m) => $body,
            AnyModel::Item2Item($m) => $body,
        }
    };
}

impl Model for AnyModel {
    type Context = AnyContext;

    fn forward(&self, left: &[usize], right: &[usize]) -> Result<(Vec<f64>, AnyContext)> {
        Ok(match self {
            AnyModel::Gmf(m) => {
                let (out, ctx) = m.forward(left, right)?;
                (out, AnyContext::Gmf(ctx))
            }
            AnyModel::NeuMf(m) => {
                let (out, ctx) = m.forward(left, right)?;
                (out, AnyContext::NeuMf(ctx))
            }
            AnyModel::Item2Item(m) => {
                let (out, ctx) = m.forward(left, right)?;
                (out, AnyContext::Item2Item(ctx))
            }
        })
    }

    fn backward(&self, context: &AnyContext, d_output: &[f64]) -> Result<ModelGrads> {
        match (self, context) {
            (AnyModel::Gmf(m), AnyContext::Gmf(c)) => m.backward(c, d_output),
            (AnyModel::NeuMf(m), AnyContext::NeuMf(c)) => m.backward(c, d_output),
            (AnyModel::Item2Item(m), AnyContext::Item2Item(c)) => m.backward(c, d_output),
            _ => Err(Error::Config("context belongs to a different model".into())),
        }
    }

    fn lookup_contexts<'c>(&self, context: &'c AnyContext) -> Vec<&'c LookupContext> {
        match (self, context) {
            (AnyModel::Gmf(m), AnyContext::Gmf(c)) => m.lookup_contexts(c),
            (AnyModel::NeuMf(m), AnyContext::NeuMf(c)) => m.lookup_contexts(c),
            (AnyModel::Item2Item(m), AnyContext::Item2Item(c)) => m.lookup_contexts(c),
            _ => Vec::new(),
        }
    }

    fn kind(&self) -> ModelKind {
        dispatch!(self, m => m.kind())
    }

    fn scheme_names(&self) -> Vec<&'static str> {
        dispatch!(self, m => m.scheme_names())
    }

    fn schemes(&self) -> Vec<&EmbeddingScheme> {
        dispatch!(self, m => m.schemes())
    }

    fn schemes_mut(&mut self) -> Vec<&mut EmbeddingScheme> {
        dispatch!(self, m => m.schemes_mut())
    }

    fn dense(&self) -> Vec<&Param> {
        dispatch!(self, m => m.dense())
    }

    fn dense_mut(&mut self) -> Vec<&mut Param> {
        dispatch!(self, m => m.dense_mut())
    }
}

impl Ranker for AnyModel {
    fn num_items(&self) -> usize {
        match self {
            AnyModel::Gmf(m) => m.num_items(),
            AnyModel::NeuMf(m) => m.num_items(),
            AnyModel::Item2Item(m) => m.item.len(),
        }
    }

    fn score_all_items(&self, users: &[usize]) -> Result<Array2<f64>> {
        match self {
            AnyModel::Gmf(m) => m.score_all_items(users),
            AnyModel::NeuMf(m) => m.score_all_items(users),
            AnyModel::Item2Item(_) => Err(Error::Config("the item-to-item model does not rank for users".into())),
        }
    }
}

/// Shapes of the dense tensors of a backbone, in [`Model::dense`] order.
pub fn dense_shapes(kind: ModelKind, d: usize) -> Vec<(usize, usize)> {
    match kind {
        ModelKind::Gmf | ModelKind::Item2Item => vec![(d, 1), (1, 1)],
        ModelKind::NeuMf => {
            let widths = [2 * d, d, d / 2, d / 4];
            let mut shapes: Vec<(usize, usize)> = widths.windows(2).flat_map(|w| [(w[0], w[1]), (1, w[1])]).collect();
            shapes.push((d + d / 4, 1));
            shapes.push((1, 1));
            shapes
        }
    }
}

impl AnyModel {
    /// Reassembles a model from its tables and dense tensors, both in
    /// [`Model`] order.
    pub fn from_parts(kind: ModelKind, schemes: Vec<EmbeddingScheme>, dense: Vec<Array2<f32>>) -> Result<Self> {
        let d = schemes
            .first()
            .map(EmbeddingScheme::dim)
            .ok_or_else(|| Error::Config("model has no embedding tables".into()))?;
        let shapes = dense_shapes(kind, d);
        if dense.len() != shapes.len() || dense.iter().zip(&shapes).any(|(a, &s)| a.dim() != s) {
            return Err(Error::Config(format!("dense tensors do not fit a {kind} model with d = {d}")));
        }
        let mut params = dense.into_iter().map(Param::new);
        let mut next = || params.next().expect("checked length");
        let expected = match kind {
            ModelKind::Gmf => 2,
            ModelKind::NeuMf => 4,
            ModelKind::Item2Item => 1,
        };
        if schemes.len() != expected {
            return Err(Error::Config(format!("{kind} needs {expected} tables, got {}", schemes.len())));
        }
        let mut tables = schemes.into_iter();
        let mut table = || tables.next().expect("checked length");
        Ok(match kind {
            ModelKind::Gmf => AnyModel::Gmf(Gmf {
                user: table(),
                item: table(),
                head: super::GmfHead { h: next(), bias: next() },
            }),
            ModelKind::Item2Item => AnyModel::Item2Item(Item2Item {
                item: table(),
                head: super::GmfHead { h: next(), bias: next() },
            }),
            ModelKind::NeuMf => {
                let (gmf_user, gmf_item, mlp_user, mlp_item) = (table(), table(), table(), table());
                let layers = (0..3)
                    .map(|_| super::Dense {
                        weight: next(),
                        bias: next(),
                    })
                    .collect();
                AnyModel::NeuMf(NeuMf {
                    gmf_user,
                    gmf_item,
                    mlp_user,
                    mlp_item,
                    layers,
                    fusion: next(),
                    fusion_bias: next(),
                })
            }
        })
    }
}
