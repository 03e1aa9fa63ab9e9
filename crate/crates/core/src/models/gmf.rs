use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{ModelKind, check_batch, Model, ModelGrads, Ranker};
use crate::embedding::{EmbeddingScheme, Lookup, LookupContext, SchemeSpec};
use crate::error::Result;
use crate::param::Param;

/// Weighted inner product `h^T (a * b) + bias`.
#[derive(Debug, Clone)]
pub struct GmfHead {
    /// `d x 1`.
    pub h: Param,
    /// `1 x 1`.
    pub bias: Param,
}

impl GmfHead {
    /// LeCun-uniform `h`, zero bias.
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        GmfHead {
            h: Param::uniform(dim, 1, (3.0 / dim as f64).sqrt(), rng),
            bias: Param::zeros(1, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    fn weights(&self) -> Array1<f64> {
        self.h.to_f64().column(0).to_owned()
    }

    fn bias_value(&self) -> f64 {
        f64::from(self.bias.value[[0, 0]])
    }

    pub fn forward(&self, a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
        let bias = self.bias_value();
        (a * b).dot(&self.weights()).iter().map(|&x| x + bias).collect()
    }

    /// Returns `(dh, dbias, da, db)`.
    pub fn backward(
        &self,
        a: &Array2<f64>,
        b: &Array2<f64>,
        d_out: &[f64],
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let d_out = Array1::from(d_out.to_vec());
        let dh = (a * b).t().dot(&d_out).insert_axis(Axis(1));
        let dbias = Array2::from_elem((1, 1), d_out.sum());
        // d(out_k)/d(a_kj) = h_j b_kj
        let scale = d_out.insert_axis(Axis(1)) * self.weights().insert_axis(Axis(0));
        let da = &scale * b;
        let db = &scale * a;
        (dh, dbias, da, db)
    }
}

/// Generalized matrix factorization over user and item tables.
#[derive(Debug, Clone)]
pub struct Gmf {
    pub user: EmbeddingScheme,
    pub item: EmbeddingScheme,
    pub head: GmfHead,
}

#[derive(Debug, Clone)]
pub struct GmfContext {
    pub user: Lookup,
    pub item: Lookup,
}

impl Gmf {
    pub fn new<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        spec: &SchemeSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let user = spec.build(num_users, dim, rng)?;
        let item = spec.build(num_items, dim, rng)?;
        let head = GmfHead::new(dim, rng);
        Ok(Gmf { user, item, head })
    }
}

impl Model for Gmf {
    type Context = GmfContext;

    fn forward(&self, left: &[usize], right: &[usize]) -> Result<(Vec<f64>, GmfContext)> {
        check_batch(left, right)?;
        let user = self.user.lookup_forward(left)?;
        let item = self.item.lookup_forward(right)?;
        let logits = self.head.forward(&user.output, &item.output);
        Ok((logits, GmfContext { user, item }))
    }

    fn backward(&self, ctx: &GmfContext, d_output: &[f64]) -> Result<ModelGrads> {
        let (dh, dbias, du, di) = self.head.backward(&ctx.user.output, &ctx.item.output, d_output);
        Ok(ModelGrads {
            embeddings: vec![
                self.user.lookup_backward(&ctx.user.context, &du)?,
                self.item.lookup_backward(&ctx.item.context, &di)?,
            ],
            dense: vec![dh, dbias],
            upstream: vec![du, di],
        })
    }

    fn lookup_contexts<'c>(&self, ctx: &'c GmfContext) -> Vec<&'c LookupContext> {
        vec![&ctx.user.context, &ctx.item.context]
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Gmf
    }

    fn scheme_names(&self) -> Vec<&'static str> {
        vec!["user", "item"]
    }

    fn schemes(&self) -> Vec<&EmbeddingScheme> {
        vec![&self.user, &self.item]
    }

    fn schemes_mut(&mut self) -> Vec<&mut EmbeddingScheme> {
        vec![&mut self.user, &mut self.item]
    }

    fn dense(&self) -> Vec<&Param> {
        vec![&self.head.h, &self.head.bias]
    }

    fn dense_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.head.h, &mut self.head.bias]
    }
}

impl Ranker for Gmf {
    fn num_items(&self) -> usize {
        self.item.len()
    }

    fn score_all_items(&self, users: &[usize]) -> Result<Array2<f64>> {
        let all: Vec<usize> = (0..self.item.len()).collect();
        let items = self.item.lookup(&all)?;
        let weighted = self.user.lookup(users)? * &self.head.weights().insert_axis(Axis(0));
        Ok(weighted.dot(&items.t()) + self.head.bias_value())
    }
}
