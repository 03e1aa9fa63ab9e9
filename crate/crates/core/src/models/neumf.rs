use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use super::{ModelKind, check_batch, Dense, Model, ModelGrads, Ranker};
use crate::embedding::{EmbeddingScheme, Lookup, LookupContext, SchemeSpec};
use crate::error::{Error, Result};
use crate::param::Param;

/// GMF and MLP towers with separate tables, fused by a linear layer.
///
/// The MLP maps `[e_u, e_i]` (width `2d`) through ReLU layers of widths `d`,
/// `d/2` and `d/4`. The fused logit is `w^T [g_u * g_i, a_3] + c`.
#[derive(Debug, Clone)]
pub struct NeuMf {
    pub gmf_user: EmbeddingScheme,
    pub gmf_item: EmbeddingScheme,
    pub mlp_user: EmbeddingScheme,
    pub mlp_item: EmbeddingScheme,
    pub layers: Vec<Dense>,
    /// `(d + d/4) x 1`.
    pub fusion: Param,
    /// `1 x 1`.
    pub fusion_bias: Param,
}

#[derive(Debug, Clone)]
pub struct NeuMfContext {
    pub gmf_user: Lookup,
    pub gmf_item: Lookup,
    pub mlp_user: Lookup,
    pub mlp_item: Lookup,
    /// Input of every MLP layer, then the last activation.
    pub activations: Vec<Array2<f64>>,
    /// Pre-activation of every MLP layer.
    pub pre_activations: Vec<Array2<f64>>,
    pub fused: Array2<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

impl NeuMf {
    pub fn new<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        spec: &SchemeSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 4 || dim % 4 != 0 {
            return Err(Error::Config(format!("NeuMF needs d divisible by 4, got {dim}")));
        }
        let gmf_user = spec.build(num_users, dim, rng)?;
        let gmf_item = spec.build(num_items, dim, rng)?;
        let mlp_user = spec.build(num_users, dim, rng)?;
        let mlp_item = spec.build(num_items, dim, rng)?;
        let widths = [2 * dim, dim, dim / 2, dim / 4];
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        let fan_in = dim + dim / 4;
        Ok(NeuMf {
            gmf_user,
            gmf_item,
            mlp_user,
            mlp_item,
            layers,
            fusion: Param::uniform(fan_in, 1, (3.0 / fan_in as f64).sqrt(), rng),
            fusion_bias: Param::zeros(1, 1),
        })
    }

    pub fn dim(&self) -> usize {
        self.gmf_user.dim()
    }

    fn fusion_weights(&self) -> Array1<f64> {
        self.fusion.to_f64().column(0).to_owned()
    }

    fn mlp(&self, input: Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut activations = vec![input];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.forward(activations.last().expect("input"));
            activations.push(relu(&z));
            pre.push(z);
        }
        (activations, pre)
    }
}

impl Model for NeuMf {
    type Context = NeuMfContext;

    fn forward(&self, left: &[usize], right: &[usize]) -> Result<(Vec<f64>, NeuMfContext)> {
        check_batch(left, right)?;
        let gmf_user = self.gmf_user.lookup_forward(left)?;
        let gmf_item = self.gmf_item.lookup_forward(right)?;
        let mlp_user = self.mlp_user.lookup_forward(left)?;
        let mlp_item = self.mlp_item.lookup_forward(right)?;
        let input = concatenate(Axis(1), &[mlp_user.output.view(), mlp_item.output.view()]).expect("same rows");
        let (activations, pre_activations) = self.mlp(input);
        let product = &gmf_user.output * &gmf_item.output;
        let fused = concatenate(Axis(1), &[product.view(), activations.last().expect("output").view()])
            .expect("same rows");
        let bias = f64::from(self.fusion_bias.value[[0, 0]]);
        // The two halves are summed separately so that a zeroed MLP half
        // leaves the GMF logit bit-identical.
        let w = self.fusion_weights();
        let d = self.dim();
        let gmf_part = product.dot(&w.slice(s![..d]));
        let mlp_part = activations.last().expect("output").dot(&w.slice(s![d..]));
        let logits = gmf_part
            .iter()
            .zip(&mlp_part)
            .map(|(&g, &m)| (g + m) + bias)
            .collect();
        Ok((
            logits,
            NeuMfContext {
                gmf_user,
                gmf_item,
                mlp_user,
                mlp_item,
                activations,
                pre_activations,
                fused,
            },
        ))
    }

    fn backward(&self, ctx: &NeuMfContext, d_output: &[f64]) -> Result<ModelGrads> {
        let d = self.dim();
        let dl = Array1::from(d_output.to_vec());
        let d_fusion = ctx.fused.t().dot(&dl).insert_axis(Axis(1));
        let d_fusion_bias = Array2::from_elem((1, 1), dl.sum());
        let d_fused = dl.insert_axis(Axis(1)) * self.fusion_weights().insert_axis(Axis(0));

        let d_product = d_fused.slice(s![.., ..d]).to_owned();
        let d_gu = &d_product * &ctx.gmf_item.output;
        let d_gi = &d_product * &ctx.gmf_user.output;

        let mut layer_grads = Vec::with_capacity(2 * self.layers.len());
        let mut d_act = d_fused.slice(s![.., d..]).to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let mask = ctx.pre_activations[k].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let dz = d_act * mask;
            let (dw, db, dx) = layer.backward(&ctx.activations[k], &dz);
            layer_grads.push(db);
            layer_grads.push(dw);
            d_act = dx;
        }
        layer_grads.reverse();
        let d_mu = d_act.slice(s![.., ..d]).to_owned();
        let d_mi = d_act.slice(s![.., d..]).to_owned();

        let mut dense = layer_grads;
        dense.push(d_fusion);
        dense.push(d_fusion_bias);
        Ok(ModelGrads {
            embeddings: vec![
                self.gmf_user.lookup_backward(&ctx.gmf_user.context, &d_gu)?,
                self.gmf_item.lookup_backward(&ctx.gmf_item.context, &d_gi)?,
                self.mlp_user.lookup_backward(&ctx.mlp_user.context, &d_mu)?,
                self.mlp_item.lookup_backward(&ctx.mlp_item.context, &d_mi)?,
            ],
            dense,
            upstream: vec![d_gu, d_gi, d_mu, d_mi],
        })
    }

    fn lookup_contexts<'c>(&self, ctx: &'c NeuMfContext) -> Vec<&'c LookupContext> {
        vec![
            &ctx.gmf_user.context,
            &ctx.gmf_item.context,
            &ctx.mlp_user.context,
            &ctx.mlp_item.context,
        ]
    }

    fn kind(&self) -> ModelKind {
        ModelKind::NeuMf
    }

    fn scheme_names(&self) -> Vec<&'static str> {
        vec!["gmf_user", "gmf_item", "mlp_user", "mlp_item"]
    }

    fn schemes(&self) -> Vec<&EmbeddingScheme> {
        vec![&self.gmf_user, &self.gmf_item, &self.mlp_user, &self.mlp_item]
    }

    fn schemes_mut(&mut self) -> Vec<&mut EmbeddingScheme> {
        vec![
            &mut self.gmf_user,
            &mut self.gmf_item,
            &mut self.mlp_user,
            &mut self.mlp_item,
        ]
    }

    /// `W1, b1, W2, b2, W3, b3, fusion, fusion_bias`.
    fn dense(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.push(&self.fusion);
        out.push(&self.fusion_bias);
        out
    }

    fn dense_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.fusion);
        out.push(&mut self.fusion_bias);
        out
    }
}

impl Ranker for NeuMf {
    fn num_items(&self) -> usize {
        self.gmf_item.len()
    }

    fn score_all_items(&self, users: &[usize]) -> Result<Array2<f64>> {
        let d = self.dim();
        let n = self.num_items();
        let all: Vec<usize> = (0..n).collect();
        let gi = self.gmf_item.lookup(&all)?;
        let mi = self.mlp_item.lookup(&all)?;
        let gu = self.gmf_user.lookup(users)?;
        let mu = self.mlp_user.lookup(users)?;
        let w = self.fusion_weights();
        let w_gmf = w.slice(s![..d]).to_owned();
        let w_mlp = w.slice(s![d..]).to_owned();
        let bias = f64::from(self.fusion_bias.value[[0, 0]]);

        // The first layer splits into a user half and an item half.
        let first = &self.layers[0];
        let w1 = first.weight.to_f64();
        let item_part = mi.dot(&w1.slice(s![d.., ..]));
        let user_part = mu.dot(&w1.slice(s![..d, ..])) + &first.bias.to_f64();
        let rest: Vec<(Array2<f64>, Array2<f64>)> = self.layers[1..]
            .iter()
            .map(|l| (l.weight.to_f64(), l.bias.to_f64()))
            .collect();

        let gmf_scores = (gu * &w_gmf.insert_axis(Axis(0))).dot(&gi.t());
        let mut scores = Array2::zeros((users.len(), n));
        for (b, mut row) in scores.outer_iter_mut().enumerate() {
            let mut a = relu(&(&item_part + &user_part.row(b)));
            for (w, bias) in &rest {
                a = relu(&(a.dot(w) + bias));
            }
            let mlp = a.dot(&w_mlp);
            for j in 0..n {
                row[j] = gmf_scores[[b, j]] + mlp[j] + bias;
            }
        }
        Ok(scores)
    }
}
