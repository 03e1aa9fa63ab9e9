//! Multi-granular quantized embeddings: frequency tiers with per-tier
//! capacities, looked up group by group.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use super::codebook::Code;
use super::dpq::{DpqEmbedding, GroupLookup};
use crate::error::{Error, Result};

/// How capacity varies across tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MgqeVariant {
    /// One codebook; tier `i` may only address its first `K_i` centroids.
    SharedVarK,
    /// A private codebook per tier with `K_i` centroids, fixed `D`.
    UnsharedVarK,
    /// A private codebook per tier with `D_i` subspaces, fixed `K`.
    UnsharedVarD,
}

impl MgqeVariant {
    pub fn tag(self) -> u8 {
        match self {
            MgqeVariant::SharedVarK => 0,
            MgqeVariant::UnsharedVarK => 1,
            MgqeVariant::UnsharedVarD => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(MgqeVariant::SharedVarK),
            1 => Some(MgqeVariant::UnsharedVarK),
            2 => Some(MgqeVariant::UnsharedVarD),
            _ => None,
        }
    }
}

impl fmt::Display for MgqeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MgqeVariant::SharedVarK => "shared-vark",
            MgqeVariant::UnsharedVarK => "unshared-vark",
            MgqeVariant::UnsharedVarD => "unshared-vard",
        })
    }
}

impl FromStr for MgqeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shared-vark" | "shared" => Ok(MgqeVariant::SharedVarK),
            "unshared-vark" => Ok(MgqeVariant::UnsharedVarK),
            "unshared-vard" => Ok(MgqeVariant::UnsharedVarD),
            other => Err(Error::Config(format!("unknown MGQE variant {other:?}"))),
        }
    }
}

/// Contiguous tiers over frequency-ordered ids with per-tier capacities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierPartition {
    /// `m + 1` ascending offsets; tier `i` is `boundaries[i]..boundaries[i + 1]`.
    boundaries: Vec<usize>,
    centroids: Vec<usize>,
    subspaces: Vec<usize>,
    variant: MgqeVariant,
}

impl TierPartition {
    pub fn new(
        boundaries: Vec<usize>,
        centroids: Vec<usize>,
        subspaces: Vec<usize>,
        variant: MgqeVariant,
    ) -> Result<Self> {
        let m = centroids.len();
        if m == 0 || subspaces.len() != m || boundaries.len() != m + 1 {
            return Err(Error::Config(format!(
                "partition needs m+1 boundaries and m capacities (got {} boundaries, {} K, {} D)",
                boundaries.len(),
                centroids.len(),
                subspaces.len()
            )));
        }
        if boundaries[0] != 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "tier boundaries {boundaries:?} must start at 0 and strictly increase"
            )));
        }
        if centroids.windows(2).any(|w| w[0] < w[1]) || centroids.contains(&0) {
            return Err(Error::Config(format!(
                "centroid counts {centroids:?} must be positive and non-increasing"
            )));
        }
        if subspaces.windows(2).any(|w| w[0] < w[1]) || subspaces.contains(&0) {
            return Err(Error::Config(format!(
                "subspace counts {subspaces:?} must be positive and non-increasing"
            )));
        }
        match variant {
            MgqeVariant::SharedVarK | MgqeVariant::UnsharedVarK => {
                if subspaces.iter().any(|&d| d != subspaces[0]) {
                    return Err(Error::Config(format!(
                        "{variant} requires one subspace count for all tiers, got {subspaces:?}"
                    )));
                }
            }
            MgqeVariant::UnsharedVarD => {
                if centroids.iter().any(|&k| k != centroids[0]) {
                    return Err(Error::Config(format!(
                        "{variant} requires one centroid count for all tiers, got {centroids:?}"
                    )));
                }
            }
        }
        Ok(TierPartition {
            boundaries,
            centroids,
            subspaces,
            variant,
        })
    }

    /// Splits `n` ids at cumulative fractions, e.g. `[0.1]` for a 10% head tier.
    /// Each boundary is `ceil(fraction * n)`.
    pub fn from_fractions(
        n: usize,
        fractions: &[f64],
        centroids: Vec<usize>,
        subspaces: Vec<usize>,
        variant: MgqeVariant,
    ) -> Result<Self> {
        let mut boundaries = vec![0];
        for &f in fractions {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("tier fraction {f} outside (0, 1)")));
            }
            boundaries.push((f * n as f64).ceil() as usize);
        }
        boundaries.push(n);
        TierPartition::new(boundaries, centroids, subspaces, variant)
    }

    pub fn num_tiers(&self) -> usize {
        self.centroids.len()
    }

    pub fn len(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn centroids(&self) -> &[usize] {
        &self.centroids
    }

    pub fn subspaces(&self) -> &[usize] {
        &self.subspaces
    }

    pub fn variant(&self) -> MgqeVariant {
        self.variant
    }

    pub fn tier_len(&self, tier: usize) -> usize {
        self.boundaries[tier + 1] - self.boundaries[tier]
    }

    pub fn tier_of(&self, id: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= id) - 1
    }
}

#[derive(Debug, Clone)]
enum Tables {
    Shared(DpqEmbedding),
    Unshared(Vec<DpqEmbedding>),
}

/// One batch group produced by the group-wise lookup.
#[derive(Debug, Clone)]
pub struct GroupContext {
    /// Which DPQ instance served the group (always 0 when shared).
    pub instance: usize,
    pub tier: usize,
    /// Row positions of the group's items in the original batch.
    pub positions: Vec<usize>,
    /// Ids within the serving instance.
    pub local_ids: Vec<usize>,
    pub codes: Vec<Code>,
}

/// Output of a group-wise lookup, rows in the caller's order.
#[derive(Debug, Clone)]
pub struct GroupwiseLookup {
    pub output: Array2<f64>,
    pub raw: Option<Array2<f64>>,
    pub groups: Vec<GroupContext>,
}

#[derive(Debug, Clone)]
pub struct MgqeEmbedding {
    partition: TierPartition,
    dim: usize,
    tables: Tables,
}

impl MgqeEmbedding {
    pub fn new<R: Rng + ?Sized>(dim: usize, partition: TierPartition, rng: &mut R) -> Result<Self> {
        let n = partition.len();
        let tables = match partition.variant() {
            MgqeVariant::SharedVarK => {
                let mut dpq = DpqEmbedding::new(
                    n,
                    dim,
                    partition.subspaces()[0],
                    partition.centroids()[0],
                    rng,
                )?;
                dpq.set_limits(partition.centroids());
                Tables::Shared(dpq)
            }
            MgqeVariant::UnsharedVarK | MgqeVariant::UnsharedVarD => Tables::Unshared(
                (0..partition.num_tiers())
                    .map(|t| {
                        DpqEmbedding::new(
                            partition.tier_len(t),
                            dim,
                            partition.subspaces()[t],
                            partition.centroids()[t],
                            rng,
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(MgqeEmbedding {
            partition,
            dim,
            tables,
        })
    }

    /// Assembles from existing DPQ instances (one for shared, one per tier
    /// otherwise).
    pub fn from_instances(partition: TierPartition, instances: Vec<DpqEmbedding>) -> Result<Self> {
        let dim = instances
            .first()
            .map(DpqEmbedding::dim)
            .ok_or_else(|| Error::Config("no DPQ instances".into()))?;
        let tables = match partition.variant() {
            MgqeVariant::SharedVarK => {
                let [mut dpq]: [DpqEmbedding; 1] = instances
                    .try_into()
                    .map_err(|_| Error::Config("shared variant takes one instance".into()))?;
                if dpq.len() != partition.len() || dpq.centroids() != partition.centroids()[0] {
                    return Err(Error::Config("shared instance does not match partition".into()));
                }
                dpq.set_limits(partition.centroids());
                Tables::Shared(dpq)
            }
            _ => {
                if instances.len() != partition.num_tiers() {
                    return Err(Error::Config("need one instance per tier".into()));
                }
                for (t, inst) in instances.iter().enumerate() {
                    if inst.len() != partition.tier_len(t)
                        || inst.centroids() != partition.centroids()[t]
                        || inst.subspaces() != partition.subspaces()[t]
                        || inst.dim() != dim
                    {
                        return Err(Error::Config(format!("instance {t} does not match its tier")));
                    }
                }
                Tables::Unshared(instances)
            }
        };
        Ok(MgqeEmbedding {
            partition,
            dim,
            tables,
        })
    }

    pub fn partition(&self) -> &TierPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    pub fn instances(&self) -> &[DpqEmbedding] {
        match &self.tables {
            Tables::Shared(dpq) => std::slice::from_ref(dpq),
            Tables::Unshared(v) => v,
        }
    }

    pub(crate) fn instances_mut(&mut self) -> &mut [DpqEmbedding] {
        match &mut self.tables {
            Tables::Shared(dpq) => std::slice::from_mut(dpq),
            Tables::Unshared(v) => v,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.instances().iter().all(DpqEmbedding::is_frozen)
    }

    /// `(instance, local id, centroid limit)` serving item `id`.
    fn route(&self, id: usize, tier: usize) -> (usize, usize, usize) {
        match &self.tables {
            Tables::Shared(_) => (0, id, self.partition.centroids()[tier]),
            Tables::Unshared(_) => (
                tier,
                id - self.partition.boundaries()[tier],
                self.partition.centroids()[tier],
            ),
        }
    }

    /// Group-wise lookup: split the batch by tier, run one batched DPQ
    /// lookup per tier, concatenate, then restore the input order.
    pub fn groupwise_lookup(&self, ids: &[usize]) -> Result<GroupwiseLookup> {
        let n = self.len();
        let m = self.partition.num_tiers();
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (b, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::IdOutOfRange { id, size: n });
            }
            positions[self.partition.tier_of(id)].push(b);
        }

        let mut pieces: Vec<(GroupLookup, GroupContext)> = Vec::with_capacity(m);
        for (tier, pos) in positions.into_iter().enumerate() {
            if pos.is_empty() {
                continue;
            }
            let (instance, _, limit) = self.route(ids[pos[0]], tier);
            let local_ids: Vec<usize> = pos.iter().map(|&b| self.route(ids[b], tier).1).collect();
            let looked = self.instances()[instance].lookup_group(&local_ids, limit)?;
            let ctx = GroupContext {
                instance,
                tier,
                positions: pos,
                local_ids,
                codes: looked.codes.clone(),
            };
            pieces.push((looked, ctx));
        }

        // Concatenate group outputs in tier order.
        let total: usize = pieces.iter().map(|(g, _)| g.output.nrows()).sum();
        let mut concat = Array2::zeros((total, self.dim));
        let mut concat_raw = pieces
            .iter()
            .all(|(g, _)| g.raw.is_some())
            .then(|| Array2::zeros((total, self.dim)));
        let mut order = Vec::with_capacity(total);
        let mut row = 0;
        for (looked, ctx) in &pieces {
            for k in 0..looked.output.nrows() {
                concat.row_mut(row).assign(&looked.output.row(k));
                if let (Some(dst), Some(src)) = (concat_raw.as_mut(), looked.raw.as_ref()) {
                    dst.row_mut(row).assign(&src.row(k));
                }
                order.push(ctx.positions[k]);
                row += 1;
            }
        }

        // Reorder so row b corresponds to ids[b].
        let mut output = Array2::zeros((ids.len(), self.dim));
        let mut raw = concat_raw.as_ref().map(|_| Array2::zeros((ids.len(), self.dim)));
        for (src_row, &dst_row) in order.iter().enumerate() {
            output.row_mut(dst_row).assign(&concat.row(src_row));
            if let (Some(dst), Some(src)) = (raw.as_mut(), concat_raw.as_ref()) {
                dst.row_mut(dst_row).assign(&src.row(src_row));
            }
        }
        Ok(GroupwiseLookup {
            output,
            raw,
            groups: pieces.into_iter().map(|(_, ctx)| ctx).collect(),
        })
    }

    /// Stored code tuple of item `id` (frozen tables only).
    pub fn item_codes(&self, id: usize) -> Option<&[Code]> {
        let tier = self.partition.tier_of(id);
        let (instance, local, _) = self.route(id, tier);
        let inst = &self.instances()[instance];
        let d_sub = inst.subspaces();
        inst.stored_codes().map(|c| &c[local * d_sub..(local + 1) * d_sub])
    }

    pub fn freeze(&mut self) {
        let partition = self.partition.clone();
        match &mut self.tables {
            Tables::Shared(dpq) => {
                dpq.freeze(|id| partition.centroids()[partition.tier_of(id)]);
            }
            Tables::Unshared(tables) => {
                for (t, dpq) in tables.iter_mut().enumerate() {
                    let k = partition.centroids()[t];
                    dpq.freeze(|_| k);
                }
            }
        }
    }
}
