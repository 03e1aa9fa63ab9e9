use std::fmt;

use crate::embedding::{EmbeddingScheme, MgqeVariant, ScalarQuantizedState, SchemeSpec, TierPartition};
use crate::error::Result;
use crate::models::{Model, ModelKind};

/// Closed-form serving sizes in bits. `log2 K` is real-valued here; packed
/// streams round it up per code.
pub mod formula {
    pub fn full(n: usize, d: usize) -> f64 {
        32.0 * n as f64 * d as f64
    }

    pub fn low_rank(n: usize, d: usize, r: usize) -> f64 {
        32.0 * n as f64 * r as f64 + 32.0 * r as f64 * d as f64
    }

    /// `n d b` codes plus a 32-bit minimum and maximum per dimension.
    pub fn scalar(n: usize, d: usize, b: u32) -> f64 {
        n as f64 * d as f64 * f64::from(b) + 64.0 * d as f64
    }

    pub fn codes(n: usize, subspaces: usize, centroids: usize) -> f64 {
        n as f64 * subspaces as f64 * (centroids as f64).log2()
    }

    pub fn dpq(n: usize, d: usize, subspaces: usize, centroids: usize) -> f64 {
        codes(n, subspaces, centroids) + 32.0 * centroids as f64 * d as f64
    }

    /// Tier sizes `|V_i|` with per-tier `D_i` and `K_i`. A shared codebook
    /// holds `K_1` centroids; unshared tiers each hold their own.
    pub fn mgqe(tier_sizes: &[usize], subspaces: &[usize], centroids: &[usize], d: usize, shared: bool) -> f64 {
        let code_bits: f64 = tier_sizes
            .iter()
            .zip(subspaces)
            .zip(centroids)
            .map(|((&n, &dd), &k)| codes(n, dd, k))
            .sum();
        let books: f64 = if shared {
            32.0 * centroids[0] as f64 * d as f64
        } else {
            centroids.iter().map(|&k| 32.0 * k as f64 * d as f64).sum()
        };
        code_bits + books
    }
}

/// Bits per packed code for `K` centroids.
pub(crate) fn code_width(centroids: usize) -> u64 {
    u64::from(usize::BITS - centroids.saturating_sub(1).leading_zeros())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBits {
    pub name: &'static str,
    pub formula_bits: f64,
    pub packed_bits: u64,
}

impl ComponentBits {
    fn exact(name: &'static str, bits: u64) -> Self {
        ComponentBits {
            name,
            formula_bits: bits as f64,
            packed_bits: bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSize {
    pub table: String,
    pub scheme: String,
    pub rows: usize,
    pub dim: usize,
    pub components: Vec<ComponentBits>,
}

impl TableSize {
    pub fn formula_bits(&self) -> f64 {
        self.components.iter().map(|c| c.formula_bits).sum()
    }

    pub fn packed_bits(&self) -> u64 {
        self.components.iter().map(|c| c.packed_bits).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    pub tables: Vec<TableSize>,
    pub dense_params: usize,
    /// The same model with every table stored in full.
    pub full_bits: u64,
}

impl SizeReport {
    pub fn dense_bits(&self) -> u64 {
        32 * self.dense_params as u64
    }

    pub fn embedding_formula_bits(&self) -> f64 {
        self.tables.iter().map(TableSize::formula_bits).sum()
    }

    pub fn total_formula_bits(&self) -> f64 {
        self.embedding_formula_bits() + self.dense_bits() as f64
    }

    pub fn total_packed_bits(&self) -> u64 {
        self.tables.iter().map(TableSize::packed_bits).sum::<u64>() + self.dense_bits()
    }

    /// Total serving size relative to the full-embedding model.
    pub fn ratio(&self) -> f64 {
        self.total_formula_bits() / self.full_bits as f64
    }

    pub fn packed_ratio(&self) -> f64 {
        self.total_packed_bits() as f64 / self.full_bits as f64
    }

    /// Baseline-model report: every table stored in full.
    fn with_tables(tables: Vec<TableSize>, dense_params: usize) -> Self {
        let full_bits = tables.iter().map(|t| 32 * (t.rows * t.dim) as u64).sum::<u64>() + 32 * dense_params as u64;
        SizeReport {
            tables,
            dense_params,
            full_bits,
        }
    }

    /// Report for a model built from `spec`, without building it.
    pub fn from_spec(kind: ModelKind, spec: &SchemeSpec, num_users: usize, num_items: usize, d: usize) -> Result<Self> {
        let tables: Vec<(&str, usize)> = match kind {
            ModelKind::Gmf => vec![("user", num_users), ("item", num_items)],
            ModelKind::NeuMf => vec![
                ("gmf_user", num_users),
                ("gmf_item", num_items),
                ("mlp_user", num_users),
                ("mlp_item", num_items),
            ],
            ModelKind::Item2Item => vec![("item", num_items)],
        };
        let tables = tables
            .into_iter()
            .map(|(name, n)| spec_size(name, spec, n, d))
            .collect::<Result<_>>()?;
        Ok(Self::with_tables(tables, dense_param_count(kind, d)))
    }

    /// Writes `table,scheme,component,formula_bits,packed_bits` rows plus
    /// dense and total lines.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["table", "scheme", "component", "formula_bits", "packed_bits"])?;
        for t in &self.tables {
            for c in &t.components {
                w.write_record([
                    t.table.clone(),
                    t.scheme.clone(),
                    c.name.to_string(),
                    format!("{}", c.formula_bits),
                    c.packed_bits.to_string(),
                ])?;
            }
        }
        let dense = self.dense_bits().to_string();
        w.write_record(["dense", "", "weights", &dense, &dense])?;
        w.write_record([
            "total",
            "",
            "",
            &format!("{}", self.total_formula_bits()),
            &self.total_packed_bits().to_string(),
        ])?;
        w.write_record(["full", "", "", &self.full_bits.to_string(), &self.full_bits.to_string()])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:<28} {:<10} {:>16} {:>16}", "table", "scheme", "component", "formula", "packed")?;
        for t in &self.tables {
            for c in &t.components {
                writeln!(
                    f,
                    "{:<10} {:<28} {:<10} {:>16.1} {:>16}",
                    t.table, t.scheme, c.name, c.formula_bits, c.packed_bits
                )?;
            }
        }
        writeln!(f, "{:<10} {:<28} {:<10} {:>16} {:>16}", "dense", "", "weights", self.dense_bits(), self.dense_bits())?;
        writeln!(
            f,
            "{:<10} {:<28} {:<10} {:>16.1} {:>16}",
            "total",
            "",
            "",
            self.total_formula_bits(),
            self.total_packed_bits()
        )?;
        write!(
            f,
            "ratio vs full: {:.2}% (formula), {:.2}% (packed)",
            100.0 * self.ratio(),
            100.0 * self.packed_ratio()
        )
    }
}

/// Dense weights of a backbone with embedding width `d`.
pub fn dense_param_count(kind: ModelKind, d: usize) -> usize {
    match kind {
        ModelKind::Gmf | ModelKind::Item2Item => d + 1,
        ModelKind::NeuMf => {
            let widths = [2 * d, d, d / 2, d / 4];
            let mlp: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            mlp + d + d / 4 + 1
        }
    }
}

fn partition_components(partition: &TierPartition, d: usize) -> Vec<ComponentBits> {
    let sizes: Vec<usize> = (0..partition.num_tiers()).map(|t| partition.tier_len(t)).collect();
    let shared = partition.variant() == MgqeVariant::SharedVarK;
    let ks = partition.centroids();
    let ds = partition.subspaces();
    let code_formula: f64 = sizes
        .iter()
        .zip(ds)
        .zip(ks)
        .map(|((&n, &dd), &k)| formula::codes(n, dd, k))
        .sum();
    let code_packed: u64 = sizes
        .iter()
        .zip(ds)
        .zip(ks)
        .map(|((&n, &dd), &k)| (n * dd) as u64 * code_width(k))
        .sum();
    let book_bits: u64 = if shared {
        32 * (ks[0] * d) as u64
    } else {
        ks.iter().map(|&k| 32 * (k * d) as u64).sum()
    };
    vec![
        ComponentBits {
            name: "codes",
            formula_bits: code_formula,
            packed_bits: code_packed,
        },
        ComponentBits::exact("codebooks", book_bits),
    ]
}

fn dpq_components(n: usize, d: usize, subspaces: usize, centroids: usize) -> Vec<ComponentBits> {
    vec![
        ComponentBits {
            name: "codes",
            formula_bits: formula::codes(n, subspaces, centroids),
            packed_bits: (n * subspaces) as u64 * code_width(centroids),
        },
        ComponentBits::exact("codebooks", 32 * (centroids * d) as u64),
    ]
}

fn sq_components(n: usize, d: usize, bits: u32) -> Vec<ComponentBits> {
    vec![
        ComponentBits::exact("codes", (n * d) as u64 * u64::from(bits)),
        ComponentBits::exact("min_max", 64 * d as u64),
    ]
}

fn low_rank_components(n: usize, d: usize, r: usize) -> Vec<ComponentBits> {
    vec![
        ComponentBits::exact("p", 32 * (n * r) as u64),
        ComponentBits::exact("q", 32 * (r * d) as u64),
    ]
}

/// Serving size of an existing table.
pub fn scheme_size(table: &str, scheme: &EmbeddingScheme) -> TableSize {
    let n = scheme.len();
    let d = scheme.dim();
    let (label, components) = match scheme {
        EmbeddingScheme::Full(_) => ("full".to_string(), vec![ComponentBits::exact("table", 32 * (n * d) as u64)]),
        EmbeddingScheme::LowRank(t) => (format!("lrf(r={})", t.rank()), low_rank_components(n, d, t.rank())),
        EmbeddingScheme::ScalarQuantized(s) => {
            let bits = match s {
                ScalarQuantizedState::Training { bits, .. } => *bits,
                ScalarQuantizedState::Frozen(sq) => sq.bits(),
            };
            (format!("sq(b={bits})"), sq_components(n, d, bits))
        }
        EmbeddingScheme::Dpq(t) => (
            format!("dpq(D={},K={})", t.subspaces(), t.centroids()),
            dpq_components(n, d, t.subspaces(), t.centroids()),
        ),
        EmbeddingScheme::Mgqe(t) => {
            let p = t.partition();
            (
                format!("mgqe-{}(D={:?},K={:?})", p.variant(), p.subspaces(), p.centroids()),
                partition_components(p, d),
            )
        }
    };
    TableSize {
        table: table.to_string(),
        scheme: label,
        rows: n,
        dim: d,
        components,
    }
}

/// Serving size of a table `spec` would build.
pub fn spec_size(table: &str, spec: &SchemeSpec, n: usize, d: usize) -> Result<TableSize> {
    let components = match spec {
        SchemeSpec::Full => vec![ComponentBits::exact("table", 32 * (n * d) as u64)],
        SchemeSpec::LowRank { rank } => low_rank_components(n, d, *rank),
        SchemeSpec::ScalarQuantized { bits } => sq_components(n, d, *bits),
        SchemeSpec::Dpq { subspaces, centroids } => dpq_components(n, d, *subspaces, *centroids),
        SchemeSpec::Mgqe {
            variant,
            tier_fractions,
            centroids,
            subspaces,
        } => {
            let p = TierPartition::from_fractions(n, tier_fractions, centroids.clone(), subspaces.clone(), *variant)?;
            partition_components(&p, d)
        }
    };
    Ok(TableSize {
        table: table.to_string(),
        scheme: spec.to_string(),
        rows: n,
        dim: d,
        components,
    })
}

/// Serving size of a model, against the same model with full tables.
pub fn size_report<M: Model>(model: &M) -> SizeReport {
    let tables = model
        .scheme_names()
        .into_iter()
        .zip(model.schemes())
        .map(|(name, s)| scheme_size(name, s))
        .collect();
    SizeReport::with_tables(tables, model.dense_len())
}
