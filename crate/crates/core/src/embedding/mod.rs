//! Embedding schemes sharing one lookup-forward / lookup-backward contract.
//!
//! Quantized schemes (DPQ and every MGQE variant) output the decoded
//! centroids in the forward pass and pass the upstream gradient straight
//! through to the raw embeddings in the backward pass. Centroids are trained
//! only by the auxiliary quantization loss, see [`EmbeddingScheme::add_vq_loss`].

mod codebook;
mod dpq;
mod full;
mod low_rank;
mod mgqe;
mod scalar;
mod spec;

use ndarray::Array2;

pub use codebook::{quantize, Code, CodebookSet, MAX_CENTROIDS};
pub use dpq::{DpqEmbedding, DpqGrad, GroupLookup, CENTROID_NOISE_STD, INIT_STD};
pub use full::FullEmbedding;
pub use low_rank::LowRankEmbedding;
pub use mgqe::{GroupContext, GroupwiseLookup, MgqeEmbedding, MgqeVariant, TierPartition};
pub use scalar::{scalar_quantize_table, ScalarQuantizedEmbedding};
pub use spec::SchemeSpec;

use crate::error::{Error, Result};
use crate::param::RowGrad;
use crate::train::{vq_loss, AdamState};

/// Scalar quantization: trained as a full table, quantized at freeze time.
#[derive(Debug, Clone)]
pub enum ScalarQuantizedState {
    Training { table: FullEmbedding, bits: u32 },
    Frozen(ScalarQuantizedEmbedding),
}

#[derive(Debug, Clone)]
pub enum EmbeddingScheme {
    Full(FullEmbedding),
    LowRank(LowRankEmbedding),
    ScalarQuantized(ScalarQuantizedState),
    Dpq(DpqEmbedding),
    Mgqe(MgqeEmbedding),
}

/// Context saved by a quantized training lookup.
#[derive(Debug, Clone)]
pub struct QuantizedContext {
    /// Raw `e` rows in batch order.
    pub raw: Array2<f64>,
    /// Decoded outputs `q` in batch order.
    pub quantized: Array2<f64>,
    pub groups: Vec<GroupContext>,
}

#[derive(Debug, Clone)]
pub enum LookupContext {
    Table { ids: Vec<usize> },
    LowRank { ids: Vec<usize>, p_rows: Array2<f64> },
    Quantized(QuantizedContext),
    Serving,
}

#[derive(Debug, Clone)]
pub struct Lookup {
    pub output: Array2<f64>,
    pub context: LookupContext,
}

#[derive(Debug, Clone)]
pub enum EmbeddingGrad {
    Table(RowGrad),
    LowRank { p: RowGrad, q: Array2<f64> },
    /// One entry per DPQ instance of the scheme.
    Quantized(Vec<DpqGrad>),
}

impl EmbeddingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingScheme::Full(_) => "full",
            EmbeddingScheme::LowRank(_) => "lrf",
            EmbeddingScheme::ScalarQuantized(_) => "sq",
            EmbeddingScheme::Dpq(_) => "dpq",
            EmbeddingScheme::Mgqe(_) => "mgqe",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EmbeddingScheme::Full(t) => t.len(),
            EmbeddingScheme::LowRank(t) => t.len(),
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table, .. }) => table.len(),
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) => sq.len(),
            EmbeddingScheme::Dpq(t) => t.len(),
            EmbeddingScheme::Mgqe(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingScheme::Full(t) => t.dim(),
            EmbeddingScheme::LowRank(t) => t.dim(),
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table, .. }) => table.dim(),
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) => sq.dim(),
            EmbeddingScheme::Dpq(t) => t.dim(),
            EmbeddingScheme::Mgqe(t) => t.dim(),
        }
    }

    /// Whether the scheme is in its serving form. Full and low-rank tables
    /// are identical in both modes and always report frozen.
    pub fn is_frozen(&self) -> bool {
        match self {
            EmbeddingScheme::Full(_) | EmbeddingScheme::LowRank(_) => true,
            EmbeddingScheme::ScalarQuantized(s) => matches!(s, ScalarQuantizedState::Frozen(_)),
            EmbeddingScheme::Dpq(t) => t.is_frozen(),
            EmbeddingScheme::Mgqe(t) => t.is_frozen(),
        }
    }

    pub fn lookup_forward(&self, ids: &[usize]) -> Result<Lookup> {
        match self {
            EmbeddingScheme::Full(t)
            | EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table: t, .. }) => {
                Ok(Lookup {
                    output: t.lookup(ids)?,
                    context: LookupContext::Table { ids: ids.to_vec() },
                })
            }
            EmbeddingScheme::LowRank(t) => {
                let (output, p_rows) = t.lookup(ids)?;
                Ok(Lookup {
                    output,
                    context: LookupContext::LowRank {
                        ids: ids.to_vec(),
                        p_rows,
                    },
                })
            }
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) => Ok(Lookup {
                output: sq.lookup(ids)?,
                context: LookupContext::Serving,
            }),
            EmbeddingScheme::Dpq(t) => {
                let looked = t.lookup_group(ids, t.centroids())?;
                let group = GroupContext {
                    instance: 0,
                    tier: 0,
                    positions: (0..ids.len()).collect(),
                    local_ids: ids.to_vec(),
                    codes: looked.codes,
                };
                Ok(quantized_lookup(looked.output, looked.raw, vec![group]))
            }
            EmbeddingScheme::Mgqe(t) => {
                let looked = t.groupwise_lookup(ids)?;
                Ok(quantized_lookup(looked.output, looked.raw, looked.groups))
            }
        }
    }

    /// Serving-path output only.
    pub fn lookup(&self, ids: &[usize]) -> Result<Array2<f64>> {
        Ok(self.lookup_forward(ids)?.output)
    }

    fn dpq_instances(&self) -> &[DpqEmbedding] {
        match self {
            EmbeddingScheme::Dpq(t) => std::slice::from_ref(t),
            EmbeddingScheme::Mgqe(t) => t.instances(),
            _ => &[],
        }
    }

    /// Straight-through backward. Quantized schemes copy `upstream` onto the
    /// raw rows and give the codebooks a zero gradient.
    pub fn lookup_backward(&self, context: &LookupContext, upstream: &Array2<f64>) -> Result<EmbeddingGrad> {
        match (self, context) {
            (_, LookupContext::Serving) => Err(Error::ServingContext),
            (EmbeddingScheme::Full(t), LookupContext::Table { ids })
            | (
                EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table: t, .. }),
                LookupContext::Table { ids },
            ) => Ok(EmbeddingGrad::Table(t.backward(ids, upstream))),
            (EmbeddingScheme::LowRank(t), LookupContext::LowRank { ids, p_rows }) => {
                let (p, q) = t.backward(ids, p_rows, upstream);
                Ok(EmbeddingGrad::LowRank { p, q })
            }
            (EmbeddingScheme::Dpq(_) | EmbeddingScheme::Mgqe(_), LookupContext::Quantized(ctx)) => {
                let instances = self.dpq_instances();
                let mut grads: Vec<DpqGrad> = instances.iter().map(DpqEmbedding::zero_grad).collect();
                let mut rows: Vec<Vec<usize>> = vec![Vec::new(); grads.len()];
                let mut values: Vec<Vec<f64>> = vec![Vec::new(); grads.len()];
                for group in &ctx.groups {
                    for (&pos, &local) in group.positions.iter().zip(&group.local_ids) {
                        rows[group.instance].push(local);
                        values[group.instance].extend(upstream.row(pos).iter());
                    }
                }
                for ((g, r), v) in grads.iter_mut().zip(rows).zip(values) {
                    let width = g.raw.values.ncols();
                    let len = r.len();
                    g.raw = RowGrad::new(r, Array2::from_shape_vec((len, width), v).expect("shape"));
                }
                Ok(EmbeddingGrad::Quantized(grads))
            }
            _ => Err(Error::Config(format!(
                "lookup context does not belong to a {} scheme",
                self.name()
            ))),
        }
    }

    /// Adds the auxiliary quantization loss of a training lookup to `grad`
    /// and returns its value. Non-quantized schemes contribute zero.
    pub fn add_vq_loss(&self, context: &LookupContext, grad: &mut EmbeddingGrad, beta: f64) -> Result<f64> {
        let (LookupContext::Quantized(ctx), EmbeddingGrad::Quantized(grads)) = (context, grad) else {
            return Ok(0.0);
        };
        let vq = vq_loss(ctx.raw.view(), ctx.quantized.view(), beta);
        let instances = self.dpq_instances();
        // (group, index within group) for every batch row.
        let mut owner = vec![(0usize, 0usize); ctx.raw.nrows()];
        for (gi, group) in ctx.groups.iter().enumerate() {
            for (k, &pos) in group.positions.iter().enumerate() {
                owner[pos] = (gi, k);
            }
        }
        // Raw rows were laid out group by group in `lookup_backward`.
        let mut offsets = Vec::with_capacity(ctx.groups.len());
        let mut next = vec![0usize; grads.len()];
        for group in &ctx.groups {
            offsets.push(next[group.instance]);
            next[group.instance] += group.positions.len();
        }
        // Batch order keeps centroid sums independent of the grouping.
        for (pos, &(gi, k)) in owner.iter().enumerate() {
            let group = &ctx.groups[gi];
            let g = &mut grads[group.instance];
            let mut row = g.raw.values.row_mut(offsets[gi] + k);
            row += &vq.grad_raw.row(pos);
            let inst = &instances[group.instance];
            let d_sub = inst.subspaces();
            inst.scatter_centroid_grad(
                &group.codes[k * d_sub..(k + 1) * d_sub],
                std::iter::once(vq.grad_quantized.row(pos)),
                &mut g.codebook,
            );
        }
        Ok(vq.loss)
    }

    pub fn apply_grads(&mut self, grad: &EmbeddingGrad, adam: &AdamState) -> Result<()> {
        match (self, grad) {
            (EmbeddingScheme::Full(t), EmbeddingGrad::Table(g))
            | (
                EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table: t, .. }),
                EmbeddingGrad::Table(g),
            ) => {
                adam.update_rows(&mut t.table, g);
                Ok(())
            }
            (EmbeddingScheme::LowRank(t), EmbeddingGrad::LowRank { p, q }) => {
                adam.update_rows(&mut t.p, p);
                adam.update_dense(&mut t.q, q.view());
                Ok(())
            }
            (EmbeddingScheme::Dpq(t), EmbeddingGrad::Quantized(grads)) if grads.len() == 1 => {
                t.apply_grad(&grads[0], adam)
            }
            (EmbeddingScheme::Mgqe(t), EmbeddingGrad::Quantized(grads))
                if grads.len() == t.instances().len() =>
            {
                for (inst, g) in t.instances_mut().iter_mut().zip(grads) {
                    inst.apply_grad(g, adam)?;
                }
                Ok(())
            }
            (EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(_)), _) => Err(Error::Frozen),
            (scheme, _) => Err(Error::Config(format!(
                "gradient does not match a {} scheme",
                scheme.name()
            ))),
        }
    }

    /// Switches to serving form. Quantized schemes cache codes and drop the
    /// raw table; scalar quantization is applied to the learned table.
    pub fn freeze_for_serving(&mut self) -> Result<()> {
        match self {
            EmbeddingScheme::Full(_) | EmbeddingScheme::LowRank(_) => {}
            EmbeddingScheme::ScalarQuantized(state) => {
                if let ScalarQuantizedState::Training { table, bits } = state {
                    let sq = scalar_quantize_table(table.table(), *bits)?;
                    *state = ScalarQuantizedState::Frozen(sq);
                }
            }
            EmbeddingScheme::Dpq(t) => {
                let k = t.centroids();
                t.freeze(|_| k);
            }
            EmbeddingScheme::Mgqe(t) => t.freeze(),
        }
        Ok(())
    }

    /// Per-item discrete codes of a frozen scheme, when comparable across
    /// items: DPQ, shared MGQE, and scalar quantization buckets.
    pub fn item_codes(&self) -> Option<Vec<Vec<u32>>> {
        match self {
            EmbeddingScheme::Dpq(t) => {
                let codes = t.stored_codes()?;
                Some(codes.chunks(t.subspaces()).map(|c| c.iter().map(|&x| u32::from(x)).collect()).collect())
            }
            EmbeddingScheme::Mgqe(t) if t.partition().variant() == MgqeVariant::SharedVarK => (0..t.len())
                .map(|i| t.item_codes(i).map(|c| c.iter().map(|&x| u32::from(x)).collect()))
                .collect(),
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) => Some(
                sq.codes()
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|&x| u32::from(x)).collect())
                    .collect(),
            ),
            _ => None,
        }
    }
}

fn quantized_lookup(output: Array2<f64>, raw: Option<Array2<f64>>, groups: Vec<GroupContext>) -> Lookup {
    match raw {
        Some(raw) => Lookup {
            context: LookupContext::Quantized(QuantizedContext {
                raw,
                quantized: output.clone(),
                groups,
            }),
            output,
        },
        None => Lookup {
            output,
            context: LookupContext::Serving,
        },
    }
}

#[cfg(test)]
mod tests;
