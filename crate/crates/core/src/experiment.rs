//! Experiment configuration and the train / freeze / evaluate pipeline.
//!
//! Configuration files are flat UTF-8 `key = value` lines; `#` starts a
//! comment. Every key of [`ExperimentConfig::KEYS`] may appear at most once.
//! Lists are comma separated.

use std::collections::HashSet;
use std::env;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    generate_synthetic_interactions, generate_synthetic_relevance, load_movielens, GenreTable, InteractionDataset,
    LoadOptions, RelevanceDataset, SplitOptions, SyntheticInteractionConfig,
};
use crate::embedding::{MgqeVariant, SchemeSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ranking, evaluate_rmse, size_report, RankingReport, SizeReport};
use crate::models::{AnyModel, Gmf, Item2Item, Model, ModelKind, NeuMf};
use crate::train::{EpochStats, NegativeSampler, TrainConfig, Trainer};

/// Environment variable naming the default data root.
pub const DATA_DIR_VAR: &str = "MGQE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ItemRec,
    Item2Item,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ItemRec => "item-rec",
            Task::Item2Item => "item2item",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item-rec" => Ok(Task::ItemRec),
            "item2item" => Ok(Task::Item2Item),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Full,
    LowRank,
    Scalar,
    Dpq,
    Mgqe,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Full => "full",
            SchemeKind::LowRank => "lrf",
            SchemeKind::Scalar => "sq",
            SchemeKind::Dpq => "dpq",
            SchemeKind::Mgqe => "mgqe",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SchemeKind::Full),
            "lrf" => Ok(SchemeKind::LowRank),
            "sq" => Ok(SchemeKind::Scalar),
            "dpq" => Ok(SchemeKind::Dpq),
            "mgqe" => Ok(SchemeKind::Mgqe),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Where item-recommendation data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// `ratings.dat` and `movies.dat` under the data directory.
    MovieLens,
    /// Generated from the `synth_*` keys.
    Synthetic,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::MovieLens => "movielens",
            DataSource::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens" => Ok(DataSource::MovieLens),
            "synthetic" => Ok(DataSource::Synthetic),
            other => Err(Error::Config(format!("unknown data source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelKind,
    pub scheme: SchemeKind,
    pub mgqe_variant: MgqeVariant,
    pub dim: usize,
    pub subspaces: usize,
    pub centroids: usize,
    /// Per-tier centroid counts; the variant's default when `None`.
    pub tier_centroids: Option<Vec<usize>>,
    /// Per-tier subspace counts; the variant's default when `None`.
    pub tier_subspaces: Option<Vec<usize>>,
    pub rank: usize,
    pub bits: u32,
    pub head_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub vq_beta: f64,
    pub seed: u64,
    pub top_k: usize,
    pub data: DataSource,
    /// MovieLens directory; falls back to `$MGQE_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    pub min_item_interactions: usize,
    /// Seed of generated datasets, kept apart from `seed` so repeats share data.
    pub data_seed: u64,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_mean_actions: usize,
    pub synth_zipf: f64,
    /// Relevance pairs CSV for item2item; generated when `None`.
    pub pairs: Option<PathBuf>,
    pub pair_items: usize,
    pub pair_count: usize,
    pub pair_zipf: f64,
    pub out: PathBuf,
    /// Write a frozen snapshot every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticInteractionConfig::default();
        ExperimentConfig {
            task: Task::ItemRec,
            model: ModelKind::Gmf,
            scheme: SchemeKind::Full,
            mgqe_variant: MgqeVariant::SharedVarK,
            dim: 64,
            subspaces: 64,
            centroids: 256,
            tier_centroids: None,
            tier_subspaces: None,
            rank: 48,
            bits: 8,
            head_fraction: 0.1,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.001,
            negatives: 4,
            vq_beta: 0.25,
            seed: 0,
            top_k: 10,
            data: DataSource::MovieLens,
            data_dir: None,
            min_item_interactions: 0,
            data_seed: 0,
            synth_users: synth.num_users,
            synth_items: synth.num_items,
            synth_mean_actions: synth.mean_actions,
            synth_zipf: synth.zipf_exponent,
            pairs: None,
            pair_items: 10_000,
            pair_count: 200_000,
            pair_zipf: 1.0,
            out: PathBuf::from("runs"),
            checkpoint_every: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 33] = [
        "task",
        "model",
        "scheme",
        "mgqe_variant",
        "d",
        "D",
        "K",
        "tier_K",
        "tier_D",
        "r",
        "b",
        "head_fraction",
        "epochs",
        "batch",
        "lr",
        "negatives",
        "vq_beta",
        "seed",
        "k",
        "data",
        "data_dir",
        "min_item_interactions",
        "data_seed",
        "synth_users",
        "synth_items",
        "synth_mean_actions",
        "synth_zipf",
        "pairs",
        "pair_items",
        "pair_count",
        "pair_zipf",
        "out",
        "checkpoint_every",
    ];

    /// Sets one key. The model follows the task when only the task changes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => {
                self.task = v.parse()?;
                self.model = match self.task {
                    Task::Item2Item => ModelKind::Item2Item,
                    Task::ItemRec if self.model == ModelKind::Item2Item => ModelKind::Gmf,
                    Task::ItemRec => self.model,
                };
            }
            "model" => {
                self.model = v.parse()?;
                self.task = if self.model == ModelKind::Item2Item {
                    Task::Item2Item
                } else {
                    Task::ItemRec
                };
            }
            "scheme" => self.scheme = v.parse()?,
            "mgqe_variant" => self.mgqe_variant = v.parse()?,
            "d" => self.dim = parse_value(key, v)?,
            "D" => self.subspaces = parse_value(key, v)?,
            "K" => self.centroids = parse_value(key, v)?,
            "tier_K" => self.tier_centroids = Some(parse_list(key, v)?),
            "tier_D" => self.tier_subspaces = Some(parse_list(key, v)?),
            "r" => self.rank = parse_value(key, v)?,
            "b" => self.bits = parse_value(key, v)?,
            "head_fraction" => self.head_fraction = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch" => self.batch_size = parse_value(key, v)?,
            "lr" => self.learning_rate = parse_value(key, v)?,
            "negatives" => self.negatives = parse_value(key, v)?,
            "vq_beta" => self.vq_beta = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "k" => self.top_k = parse_value(key, v)?,
            "data" => self.data = v.parse()?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "min_item_interactions" => self.min_item_interactions = parse_value(key, v)?,
            "data_seed" => self.data_seed = parse_value(key, v)?,
            "synth_users" => self.synth_users = parse_value(key, v)?,
            "synth_items" => self.synth_items = parse_value(key, v)?,
            "synth_mean_actions" => self.synth_mean_actions = parse_value(key, v)?,
            "synth_zipf" => self.synth_zipf = parse_value(key, v)?,
            "pairs" => self.pairs = Some(PathBuf::from(v)),
            "pair_items" => self.pair_items = parse_value(key, v)?,
            "pair_count" => self.pair_count = parse_value(key, v)?,
            "pair_zipf" => self.pair_zipf = parse_value(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(parse_err(format!("duplicate key {key:?}")));
            }
            self.set(key, value).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "not UTF-8".into(),
        })?;
        let mut config = Self::default();
        config.apply_text(&text, path)?;
        Ok(config)
    }

    /// Serializes every key, so that `apply_text` on the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let opt_list = |l: &Option<Vec<usize>>| l.as_deref().map(join).unwrap_or_default();
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            self.task.to_string(),
            self.model.to_string(),
            self.scheme.to_string(),
            self.mgqe_variant.to_string(),
            self.dim.to_string(),
            self.subspaces.to_string(),
            self.centroids.to_string(),
            opt_list(&self.tier_centroids),
            opt_list(&self.tier_subspaces),
            self.rank.to_string(),
            self.bits.to_string(),
            self.head_fraction.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.negatives.to_string(),
            self.vq_beta.to_string(),
            self.seed.to_string(),
            self.top_k.to_string(),
            self.data.to_string(),
            opt_path(&self.data_dir),
            self.min_item_interactions.to_string(),
            self.data_seed.to_string(),
            self.synth_users.to_string(),
            self.synth_items.to_string(),
            self.synth_mean_actions.to_string(),
            self.synth_zipf.to_string(),
            opt_path(&self.pairs),
            self.pair_items.to_string(),
            self.pair_count.to_string(),
            self.pair_zipf.to_string(),
            self.out.display().to_string(),
            self.checkpoint_every.to_string(),
        ];
        let mut text = String::new();
        for (key, value) in Self::KEYS.iter().zip(values) {
            // Unset optional keys are left out rather than written empty.
            if !value.is_empty() {
                text.push_str(&format!("{key} = {value}\n"));
            }
        }
        text
    }

    /// Per-tier centroid and subspace counts.
    pub fn tiers(&self) -> (Vec<usize>, Vec<usize>) {
        let (k, d) = (self.centroids, self.subspaces);
        let (default_k, default_d) = match self.mgqe_variant {
            MgqeVariant::SharedVarK | MgqeVariant::UnsharedVarK => (vec![k, 64.min(k)], vec![d, d]),
            MgqeVariant::UnsharedVarD => (vec![k, k], vec![d, (d / 2).max(1)]),
        };
        (
            self.tier_centroids.clone().unwrap_or(default_k),
            self.tier_subspaces.clone().unwrap_or(default_d),
        )
    }

    pub fn scheme_spec(&self) -> SchemeSpec {
        match self.scheme {
            SchemeKind::Full => SchemeSpec::Full,
            SchemeKind::LowRank => SchemeSpec::LowRank { rank: self.rank },
            SchemeKind::Scalar => SchemeSpec::ScalarQuantized { bits: self.bits },
            SchemeKind::Dpq => SchemeSpec::Dpq {
                subspaces: self.subspaces,
                centroids: self.centroids,
            },
            SchemeKind::Mgqe => {
                let (centroids, subspaces) = self.tiers();
                // Tiers after the head split the rest of the vocabulary evenly.
                let m = centroids.len();
                let h = self.head_fraction;
                let mut tier_fractions = vec![h];
                tier_fractions.extend((1..m.saturating_sub(1)).map(|i| h + (1.0 - h) * i as f64 / (m - 1) as f64));
                SchemeSpec::Mgqe {
                    variant: self.mgqe_variant,
                    tier_fractions,
                    centroids,
                    subspaces,
                }
            }
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            negatives_per_positive: self.negatives,
            vq_beta: self.vq_beta,
            seed: self.seed,
        }
    }

    /// Cross-key checks that single `set` calls cannot make.
    pub fn validate(&self) -> Result<()> {
        match (self.task, self.model) {
            (Task::Item2Item, ModelKind::Item2Item) => {}
            (Task::ItemRec, ModelKind::Gmf | ModelKind::NeuMf) => {}
            (task, model) => return Err(Error::Config(format!("model {model} does not fit task {task}"))),
        }
        if self.dim == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return Err(Error::Config(format!("head_fraction must lie in (0, 1), got {}", self.head_fraction)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.scheme == SchemeKind::Mgqe {
            let (k, d) = self.tiers();
            if k.len() != d.len() || k.len() < 2 {
                return Err(Error::Config("tier_K and tier_D need the same length, at least 2".into()));
            }
        }
        self.train_config().validate()
    }

    /// Resolved MovieLens directory.
    pub fn movielens_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Ok(dir.clone());
        }
        env::var_os(DATA_DIR_VAR).map(PathBuf::from).ok_or_else(|| {
            Error::DataUnavailable(format!("MovieLens needs data_dir or ${DATA_DIR_VAR} pointing at ratings.dat"))
        })
    }

    pub fn synthetic_interactions(&self) -> SyntheticInteractionConfig {
        SyntheticInteractionConfig {
            num_users: self.synth_users,
            num_items: self.synth_items,
            mean_actions: self.synth_mean_actions,
            zipf_exponent: self.synth_zipf,
            seed: self.data_seed,
            ..SyntheticInteractionConfig::default()
        }
    }
}

/// Item-recommendation data with item genres.
pub fn load_interactions(config: &ExperimentConfig) -> Result<(InteractionDataset, GenreTable)> {
    let split = SplitOptions {
        min_item_interactions: config.min_item_interactions,
    };
    match config.data {
        DataSource::MovieLens => {
            let dir = config.movielens_dir()?;
            let ratings = dir.join("ratings.dat");
            if !ratings.is_file() {
                return Err(Error::DataUnavailable(format!("{} not found", ratings.display())));
            }
            load_movielens(&ratings, &dir.join("movies.dat"), &LoadOptions { split })
        }
        DataSource::Synthetic => Ok(generate_synthetic_interactions(&config.synthetic_interactions())?.dataset(&split)),
    }
}

pub fn load_relevance(config: &ExperimentConfig) -> Result<RelevanceDataset> {
    match &config.pairs {
        Some(path) => RelevanceDataset::read_csv(path),
        None => Ok(generate_synthetic_relevance(config.pair_items, config.pair_count, config.pair_zipf, config.data_seed)?
            .dataset),
    }
}

/// A freshly initialized model; initialization draws from `seed`.
pub fn build_model(config: &ExperimentConfig, num_users: usize, num_items: usize) -> Result<AnyModel> {
    let spec = config.scheme_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(match config.model {
        ModelKind::Gmf => AnyModel::Gmf(Gmf::new(num_users, num_items, config.dim, &spec, &mut rng)?),
        ModelKind::NeuMf => AnyModel::NeuMf(NeuMf::new(num_users, num_items, config.dim, &spec, &mut rng)?),
        ModelKind::Item2Item => AnyModel::Item2Item(Item2Item::new(num_items, config.dim, &spec, &mut rng)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metrics {
    Ranking(RankingReport),
    Rmse(f64),
}

impl Metrics {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        match self {
            Metrics::Ranking(r) => {
                w.write_record([format!("hr@{}", r.k), format!("{:.6}", r.hr_at_k)])?;
                w.write_record([format!("ndcg@{}", r.k), format!("{:.6}", r.ndcg_at_k)])?;
                w.write_record([format!("recall@{}", r.k), format!("{:.6}", r.recall_at_k)])?;
                w.write_record(["users".to_string(), r.users.to_string()])?;
            }
            Metrics::Rmse(v) => w.write_record(["rmse".to_string(), format!("{v:.6}")])?,
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metrics::Ranking(r) => write!(
                f,
                "HR@{k} {:.3}  NDCG@{k} {:.3}  ({} users)",
                r.hr_at_k,
                r.ndcg_at_k,
                r.users,
                k = r.k
            ),
            Metrics::Rmse(v) => write!(f, "RMSE {v:.4}"),
        }
    }
}

/// Outcome of one configuration: the frozen model and what it scored.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: AnyModel,
    pub epochs: Vec<EpochStats>,
    pub metrics: Metrics,
    pub size: SizeReport,
}

/// Loaded data for either task.
#[derive(Debug, Clone)]
pub enum TaskData {
    ItemRec(InteractionDataset, GenreTable),
    Item2Item(RelevanceDataset),
}

pub fn load_task_data(config: &ExperimentConfig) -> Result<TaskData> {
    match config.task {
        Task::ItemRec => {
            let (ds, genres) = load_interactions(config)?;
            Ok(TaskData::ItemRec(ds, genres))
        }
        Task::Item2Item => Ok(TaskData::Item2Item(load_relevance(config)?)),
    }
}

/// Trains for `config.epochs`, calling `on_epoch` after each epoch with the
/// still-trainable model, then freezes it.
pub fn train_model(
    config: &ExperimentConfig,
    data: &TaskData,
    mut on_epoch: impl FnMut(&EpochStats, &AnyModel) -> Result<()>,
) -> Result<(AnyModel, Vec<EpochStats>)> {
    config.validate()?;
    let mut trainer = Trainer::new(config.train_config())?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut model = match data {
        TaskData::ItemRec(ds, _) => {
            if config.task != Task::ItemRec {
                return Err(Error::Config(format!("task {} given interaction data", config.task)));
            }
            let mut model = build_model(config, ds.num_users, ds.num_items)?;
            let sampler = NegativeSampler::new(ds);
            for _ in 0..config.epochs {
                let stats = trainer.epoch(&mut model, ds, &sampler)?;
                on_epoch(&stats, &model)?;
                epochs.push(stats);
            }
            model
        }
        TaskData::Item2Item(pairs) => {
            if config.task != Task::Item2Item {
                return Err(Error::Config(format!("task {} given relevance data", config.task)));
            }
            let mut model = build_model(config, 0, pairs.num_items)?;
            for _ in 0..config.epochs {
                let stats = trainer.epoch_pairs(&mut model, pairs)?;
                on_epoch(&stats, &model)?;
                epochs.push(stats);
            }
            model
        }
    };
    model.freeze_for_serving()?;
    Ok((model, epochs))
}

/// Test-split metrics of a frozen model.
pub fn evaluate(config: &ExperimentConfig, model: &AnyModel, data: &TaskData) -> Result<Metrics> {
    match data {
        TaskData::ItemRec(ds, _) => Ok(Metrics::Ranking(evaluate_ranking(model, ds, config.top_k)?)),
        TaskData::Item2Item(pairs) => Ok(Metrics::Rmse(evaluate_rmse(model, pairs)?)),
    }
}

/// Train, freeze, evaluate and size one configuration.
pub fn run(
    config: &ExperimentConfig,
    data: &TaskData,
    on_epoch: impl FnMut(&EpochStats, &AnyModel) -> Result<()>,
) -> Result<RunOutcome> {
    let (model, epochs) = train_model(config, data, on_epoch)?;
    let metrics = evaluate(config, &model, data)?;
    let size = size_report(&model);
    Ok(RunOutcome {
        model,
        epochs,
        metrics,
        size,
    })
}

/// Groups of configurations reported together as one results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultTable {
    /// GMF and NeuMF with every embedding scheme.
    Table2,
    /// Item-to-item regression with full, scalar, DPQ and MGQE tables.
    Table4,
    /// The three MGQE variants on GMF and NeuMF.
    Table5,
}

impl FromStr for ResultTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(ResultTable::Table2),
            "table4" => Ok(ResultTable::Table4),
            "table5" => Ok(ResultTable::Table5),
            other => Err(Error::Config(format!("unknown table {other:?}; expected table2, table4 or table5"))),
        }
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResultTable::Table2 => "table2",
            ResultTable::Table4 => "table4",
            ResultTable::Table5 => "table5",
        })
    }
}

impl ResultTable {
    /// Row configurations derived from `base`, which supplies data, training
    /// and size settings.
    pub fn rows(self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let with = |model: ModelKind, scheme: SchemeKind, variant: MgqeVariant| {
            let mut c = base.clone();
            c.model = model;
            c.task = if model == ModelKind::Item2Item {
                Task::Item2Item
            } else {
                Task::ItemRec
            };
            c.scheme = scheme;
            c.mgqe_variant = variant;
            c
        };
        let shared = MgqeVariant::SharedVarK;
        match self {
            ResultTable::Table2 => [ModelKind::Gmf, ModelKind::NeuMf]
                .into_iter()
                .flat_map(|m| {
                    [
                        SchemeKind::Full,
                        SchemeKind::LowRank,
                        SchemeKind::Scalar,
                        SchemeKind::Dpq,
                        SchemeKind::Mgqe,
                    ]
                    .map(|s| with(m, s, shared))
                })
                .collect(),
            ResultTable::Table4 => [SchemeKind::Full, SchemeKind::Scalar, SchemeKind::Dpq, SchemeKind::Mgqe]
                .into_iter()
                .map(|s| with(ModelKind::Item2Item, s, shared))
                .collect(),
            ResultTable::Table5 => [ModelKind::Gmf, ModelKind::NeuMf]
                .into_iter()
                .flat_map(|m| {
                    [MgqeVariant::SharedVarK, MgqeVariant::UnsharedVarK, MgqeVariant::UnsharedVarD]
                        .map(|v| with(m, SchemeKind::Mgqe, v))
                })
                .collect(),
        }
    }
}

/// Mean results of one table row over all repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub table: ResultTable,
    pub model: ModelKind,
    pub scheme: String,
    pub repeats: usize,
    pub hr_at_k: Option<f64>,
    pub ndcg_at_k: Option<f64>,
    pub rmse: Option<f64>,
    pub size_ratio: f64,
    pub packed_ratio: f64,
}

fn row_label(config: &ExperimentConfig) -> String {
    match config.scheme {
        SchemeKind::Mgqe => format!("mgqe-{}", config.mgqe_variant),
        other => other.to_string(),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Runs every row of `table` `repeats` times with seeds `base.seed + i` and
/// averages. `progress` sees each finished run.
pub fn repro_table(
    table: ResultTable,
    base: &ExperimentConfig,
    data: &TaskData,
    repeats: usize,
    mut progress: impl FnMut(&ExperimentConfig, &RunOutcome),
) -> Result<Vec<TableRow>> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let mut rows = Vec::new();
    for row in table.rows(base) {
        let (mut hr, mut ndcg, mut rmse) = (Vec::new(), Vec::new(), Vec::new());
        let mut size = None;
        for r in 0..repeats {
            let mut config = row.clone();
            config.seed = base.seed.wrapping_add(r as u64);
            let outcome = run(&config, data, |_, _| Ok(()))?;
            match &outcome.metrics {
                Metrics::Ranking(rep) => {
                    hr.push(rep.hr_at_k);
                    ndcg.push(rep.ndcg_at_k);
                }
                Metrics::Rmse(v) => rmse.push(*v),
            }
            progress(&config, &outcome);
            size = Some(outcome.size);
        }
        let size = size.expect("repeats > 0");
        rows.push(TableRow {
            table,
            model: row.model,
            scheme: row_label(&row),
            repeats,
            hr_at_k: mean(&hr),
            ndcg_at_k: mean(&ndcg),
            rmse: mean(&rmse),
            size_ratio: size.ratio(),
            packed_ratio: size.packed_ratio(),
        });
    }
    Ok(rows)
}

/// `table,model,scheme,repeats,hr_at_k,ndcg_at_k,rmse,size_pct,packed_size_pct`;
/// metrics that do not apply are left empty.
pub fn write_table_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "table",
        "model",
        "scheme",
        "repeats",
        "hr_at_k",
        "ndcg_at_k",
        "rmse",
        "size_pct",
        "packed_size_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.table.to_string(),
            r.model.to_string(),
            r.scheme.clone(),
            r.repeats.to_string(),
            opt(r.hr_at_k),
            opt(r.ndcg_at_k),
            opt(r.rmse),
            format!("{:.2}", 100.0 * r.size_ratio),
            format!("{:.2}", 100.0 * r.packed_ratio),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_configuration() {
        let c = ExperimentConfig::default();
        assert_eq!((c.dim, c.subspaces, c.centroids, c.rank, c.bits), (64, 64, 256, 48, 8));
        assert_eq!(c.head_fraction, 0.1);
        assert_eq!(c.tiers(), (vec![256, 64], vec![64, 64]));
        let mut vard = c.clone();
        vard.mgqe_variant = MgqeVariant::UnsharedVarD;
        assert_eq!(vard.tiers(), (vec![256, 256], vec![64, 32]));
        let mut m = c.clone();
        m.scheme = SchemeKind::Mgqe;
        assert_eq!(m.scheme_spec(), SchemeSpec::mgqe_default(MgqeVariant::SharedVarK));
        vard.scheme = SchemeKind::Mgqe;
        assert_eq!(vard.scheme_spec(), SchemeSpec::mgqe_default(MgqeVariant::UnsharedVarD));
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.apply_text(
            "# comment\nmodel = neumf\nscheme=mgqe\ntier_K = 128, 32\n\nlr = 0.005 # inline\ndata_dir = /tmp/ml\n",
            Path::new("c.txt"),
        )
        .unwrap();
        assert_eq!(c.model, ModelKind::NeuMf);
        assert_eq!(c.tier_centroids, Some(vec![128, 32]));
        assert_eq!(c.learning_rate, 0.005);
        let mut back = ExperimentConfig::default();
        back.apply_text(&c.to_text(), Path::new("round")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = ExperimentConfig::default();
        let err = c.apply_text("d = 32\n\nnope = 1\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = c.apply_text("d = 32\nd = 16\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = c.apply_text("epochs\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn model_and_task_must_agree() {
        let mut c = ExperimentConfig::default();
        c.task = Task::Item2Item;
        assert!(c.validate().is_err());
        c.set("model", "i2i").unwrap();
        assert!(c.validate().is_ok());
        c.set("task", "item-rec").unwrap();
        assert_eq!(c.model, ModelKind::Gmf);
    }

    #[test]
    fn table_rows() {
        let base = ExperimentConfig::default();
        let labels: Vec<String> = ResultTable::Table2
            .rows(&base)
            .iter()
            .map(|c| format!("{}/{}", c.model, row_label(c)))
            .collect();
        assert_eq!(labels.len(), 10);
        assert_eq!(labels[0], "gmf/full");
        assert_eq!(labels[9], "neumf/mgqe-shared-vark");
        assert_eq!(ResultTable::Table4.rows(&base).len(), 4);
        assert!(ResultTable::Table4.rows(&base).iter().all(|c| c.validate().is_ok()));
        assert_eq!(ResultTable::Table5.rows(&base).len(), 6);
    }

    #[test]
    fn missing_movielens_is_reported_as_unavailable() {
        let mut c = ExperimentConfig::default();
        c.data_dir = Some(PathBuf::from("/definitely/not/here"));
        assert!(matches!(load_interactions(&c), Err(Error::DataUnavailable(_))));
    }
}
