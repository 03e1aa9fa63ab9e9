use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mgqe::codec;
use mgqe::dataset::{
    frequency_histogram, generate_synthetic_interactions, generate_synthetic_relevance, split_counts,
    write_histogram_csv,
};
use mgqe::eval::{code_similarity_matrix, size_report, spec_size, SizeReport, FIGURE_CATEGORIES};
use mgqe::experiment::{
    evaluate, load_task_data, repro_table, run, write_table_csv, ExperimentConfig, ResultTable,
    SchemeKind, Task, TaskData,
};
use mgqe::models::{Model, ModelKind};
use mgqe::Error;

#[derive(Parser, Debug)]
#[command(name = "mgqe", version, about = "Train, size and export recommenders with quantized embeddings")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, applied in order: defaults, `--config`, typed
/// flags, then `--set`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any configuration key, e.g. `--set lr=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Embedding width.
    #[arg(long = "d", global = true)]
    dim: Option<usize>,
    /// Subspaces per code.
    #[arg(long = "D", global = true)]
    subspaces: Option<usize>,
    /// Centroids per subspace.
    #[arg(long = "K", global = true)]
    centroids: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `movielens` or `synthetic`.
    #[arg(long, global = true)]
    data: Option<String>,
    /// MovieLens directory; defaults to $MGQE_DATA_DIR.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the dataset and write its item-frequency histogram.
    PrepareData,
    /// Write a synthetic dataset to disk.
    SynthData {
        #[arg(long, value_enum, default_value_t = SynthKind::Interactions)]
        kind: SynthKind,
    },
    /// Train, freeze and evaluate; writes the packed model, epoch log,
    /// metrics and size report under the output directory.
    Train,
    /// Evaluate a packed model on the configured test split.
    Evaluate {
        checkpoint: PathBuf,
        /// Metrics CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serving size of a packed model, of a single table, or of a model
    /// configuration.
    SizeReport {
        /// Size of this packed model.
        #[arg(long, conflicts_with_all = ["n", "users", "items"])]
        checkpoint: Option<PathBuf>,
        /// Size of a single table with `n` rows.
        #[arg(long, conflicts_with_all = ["users", "items"])]
        n: Option<usize>,
        #[arg(long, requires = "items")]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        /// Write the report as CSV here as well.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Re-encode a packed model to a new path after validating it.
    Export {
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode a packed model and check that re-encoding reproduces it.
    ImportCheck {
        file: PathBuf,
        /// Also require byte equality with this file.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Category-by-category code similarity of a packed model's item table.
    CodeSimilarity {
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
        #[arg(long, default_value_t = 200)]
        sample: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every configuration of a result table and average over repeats.
    ReproTable {
        table: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Interactions,
    Relevance,
}

/// Exit statuses.
const USAGE: u8 = 1;
const DATA: u8 = 2;
const RUNTIME: u8 = 3;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn exit_status(failure: &Failure) -> u8 {
    match failure {
        Failure::Usage(_) => USAGE,
        Failure::Check(_) => RUNTIME,
        Failure::Lib(e) => match e {
            Error::Config(_) => USAGE,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::DataUnavailable(_)
            | Error::InfeasiblePairs { .. }
            | Error::EmptyEvalSplit
            | Error::SparseCategory(_)
            | Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Checksum { .. }
            | Error::Truncated { .. }
            | Error::Malformed(_) => DATA,
            _ => RUNTIME,
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(m) | Failure::Check(m) => eprintln!("error: {m}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_status(&failure))
        }
    }
}

fn build_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let typed: [(&str, Option<String>); 12] = [
        ("task", args.task.clone()),
        ("model", args.model.clone()),
        ("scheme", args.scheme.clone()),
        ("mgqe_variant", args.variant.clone()),
        ("d", args.dim.map(|v| v.to_string())),
        ("D", args.subspaces.map(|v| v.to_string())),
        ("K", args.centroids.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("data", args.data.clone()),
        ("data_dir", args.data_dir.as_ref().map(|p| p.display().to_string())),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in typed {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(key.trim(), value)?;
    }
    Ok(config)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn make_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_out(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        make_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = build_config(&cli.config)?;
    match cli.command {
        Command::PrepareData => prepare_data(&config),
        Command::SynthData { kind } => synth_data(&config, kind),
        Command::Train => train(&config),
        Command::Evaluate { checkpoint, output } => evaluate_checkpoint(&config, &checkpoint, output.as_deref()),
        Command::SizeReport {
            checkpoint,
            n,
            users,
            items,
            csv,
        } => size(&config, checkpoint.as_deref(), n, users, items, csv.as_deref()),
        Command::Export { checkpoint, output } => {
            let model = codec::import(&checkpoint)?;
            let bytes = codec::export(&model, &output)?;
            println!(
                "{}: {} bytes, {} payload bits",
                output.display(),
                bytes,
                codec::packed_size_bits(&model)?
            );
            Ok(())
        }
        Command::ImportCheck { file, against } => import_check(&file, against.as_deref()),
        Command::CodeSimilarity {
            checkpoint,
            categories,
            sample,
            output,
        } => code_similarity(&config, &checkpoint, categories, sample, output.as_deref()),
        Command::ReproTable { table, repeats, output } => {
            let table: ResultTable = table.parse()?;
            if repeats == 0 {
                return Err(Failure::Usage("--repeats must be positive".into()));
            }
            reproduce(&config, table, repeats, output.as_deref())
        }
    }
}

fn prepare_data(config: &ExperimentConfig) -> CliResult<()> {
    make_dir(&config.out)?;
    let path = config.out.join("histogram.csv");
    match load_task_data(config)? {
        TaskData::ItemRec(ds, genres) => {
            write_histogram_csv(&split_counts(&ds), create(&path)?)?;
            println!(
                "users {}  items {}  interactions {}  sparsity {:.2}%  items without genres {}",
                ds.num_users,
                ds.num_items,
                ds.num_interactions(),
                100.0 * ds.sparsity(),
                genres.missing()
            );
        }
        TaskData::Item2Item(pairs) => {
            write_histogram_csv(&frequency_histogram(&pairs.item_frequency), create(&path)?)?;
            println!(
                "items {}  pairs {}  train {}  eval {}",
                pairs.num_items,
                pairs.pairs.len(),
                pairs.train_pairs().count(),
                pairs.eval_pairs().count()
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn synth_data(config: &ExperimentConfig, kind: SynthKind) -> CliResult<()> {
    make_dir(&config.out)?;
    match kind {
        SynthKind::Interactions => {
            generate_synthetic_interactions(&config.synthetic_interactions())?.write_movielens(&config.out)?;
            println!("wrote ratings.dat and movies.dat to {}", config.out.display());
        }
        SynthKind::Relevance => {
            let data =
                generate_synthetic_relevance(config.pair_items, config.pair_count, config.pair_zipf, config.data_seed)?;
            let path = config.out.join("pairs.csv");
            data.dataset.write_csv(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn train(config: &ExperimentConfig) -> CliResult<()> {
    config.validate()?;
    let data = load_task_data(config)?;
    let out = &config.out;
    make_dir(out)?;
    write_out(&out.join("config.txt"), config.to_text().as_bytes())?;
    let mut log = mgqe::train::EpochLog::new(create(&out.join("epochs.csv"))?)?;
    let checkpoints = out.join("checkpoints");
    let outcome = run(config, &data, |stats, model| {
        info!(
            "epoch {:>3}  task loss {:.6}  vq loss {:.6}  {} ms",
            stats.epoch, stats.task_loss, stats.vq_loss, stats.wall_ms
        );
        log.record(stats)?;
        if config.checkpoint_every > 0 && stats.epoch % config.checkpoint_every == 0 {
            fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
            let mut snapshot = model.clone();
            snapshot.freeze_for_serving()?;
            let path = checkpoints.join(format!("epoch_{:03}.{}", stats.epoch, codec::EXTENSION));
            codec::export(&snapshot, &path)?;
        }
        Ok(())
    })?;
    let model_path = out.join(format!("model.{}", codec::EXTENSION));
    codec::export(&outcome.model, &model_path)?;
    outcome.metrics.write_csv(create(&out.join("metrics.csv"))?)?;
    outcome.size.write_csv(create(&out.join("size.csv"))?)?;
    println!("{}", outcome.metrics);
    println!("{}", outcome.size);
    println!("wrote {}", model_path.display());
    Ok(())
}

fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path, output: Option<&Path>) -> CliResult<()> {
    let model = codec::import(checkpoint)?;
    let mut config = config.clone();
    config.set("model", &model.kind().to_string())?;
    let data = load_task_data(&config)?;
    let metrics = evaluate(&config, &model, &data)?;
    match output {
        Some(path) => metrics.write_csv(create(path)?)?,
        None => metrics.write_csv(io::stdout().lock())?,
    }
    eprintln!("{metrics}");
    Ok(())
}

fn size(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    n: Option<usize>,
    users: Option<usize>,
    items: Option<usize>,
    csv: Option<&Path>,
) -> CliResult<()> {
    let spec = config.scheme_spec();
    let report = if let Some(path) = checkpoint {
        size_report(&codec::import(path)?)
    } else if let Some(n) = n {
        let table = spec_size("table", &spec, n, config.dim)?;
        println!("{:<12} {:>16} {:>16}", "component", "formula", "packed");
        for c in &table.components {
            println!("{:<12} {:>16.1} {:>16}", c.name, c.formula_bits, c.packed_bits);
        }
        println!("{:<12} {:>16.1} {:>16}", "total", table.formula_bits(), table.packed_bits());
        println!("embedding bits: {}", table.packed_bits());
        let full = 32 * (n * config.dim) as u64;
        println!("ratio vs full: {:.2}%", 100.0 * table.formula_bits() / full as f64);
        if let Some(path) = csv {
            let report = SizeReport {
                tables: vec![table],
                dense_params: 0,
                full_bits: full,
            };
            report.write_csv(create(path)?)?;
        }
        return Ok(());
    } else {
        let (users, items) = match (users, items) {
            (Some(u), Some(i)) => (u, i),
            (None, Some(i)) if config.model == ModelKind::Item2Item => (0, i),
            _ => {
                return Err(Failure::Usage(
                    "size-report needs --checkpoint, --n, or --items (and --users for gmf/neumf)".into(),
                ))
            }
        };
        SizeReport::from_spec(config.model, &spec, users, items, config.dim)?
    };
    println!("{report}");
    if let Some(path) = csv {
        report.write_csv(create(path)?)?;
    }
    Ok(())
}

fn import_check(file: &Path, against: Option<&Path>) -> CliResult<()> {
    let original = fs::read(file).map_err(|e| Error::io(file, e))?;
    let model = codec::decode(&original)?;
    let again = codec::encode(&model)?;
    if again != original {
        return Err(Failure::Check(format!("{} does not re-encode to the same bytes", file.display())));
    }
    if let Some(other) = against {
        let other_bytes = fs::read(other).map_err(|e| Error::io(other, e))?;
        if other_bytes != original {
            return Err(Failure::Check(format!("{} and {} differ", file.display(), other.display())));
        }
    }
    let report = size_report(&model);
    println!("{}: {} model, {} bytes, round trip ok", file.display(), model.kind(), original.len());
    for t in &report.tables {
        println!("  {:<10} {:<28} {:>8} x {}", t.table, t.scheme, t.rows, t.dim);
    }
    println!("  payload bits {}", codec::packed_size_bits(&model)?);
    Ok(())
}

fn code_similarity(
    config: &ExperimentConfig,
    checkpoint: &Path,
    categories: Option<Vec<String>>,
    sample: usize,
    output: Option<&Path>,
) -> CliResult<()> {
    let model = codec::import(checkpoint)?;
    if model.kind() == ModelKind::Item2Item {
        return Err(Failure::Usage("code-similarity needs a gmf or neumf model with genre data".into()));
    }
    let mut config = config.clone();
    config.set("model", &model.kind().to_string())?;
    let TaskData::ItemRec(ds, genres) = load_task_data(&config)? else {
        unreachable!("item-rec task loads interactions")
    };
    // GMF's item table, or NeuMF's GMF-tower item table.
    let item_table = &model.schemes()[1];
    if item_table.len() != ds.num_items {
        return Err(Failure::Usage(format!(
            "model has {} items but the configured dataset has {}",
            item_table.len(),
            ds.num_items
        )));
    }
    let codes = item_table
        .item_codes()
        .ok_or_else(|| Failure::Usage(format!("the item table ({}) has no codes", item_table.name())))?;
    let categories = categories.unwrap_or_else(|| FIGURE_CATEGORIES.iter().map(|s| s.to_string()).collect());
    let names: Vec<&str> = categories.iter().map(String::as_str).collect();
    let matrix = code_similarity_matrix(&codes, &genres, &names, sample, config.seed)?;
    match output {
        Some(path) => matrix.write_csv(create(path)?)?,
        None => matrix.write_csv(io::stdout().lock())?,
    }
    for (name, dominant) in names.iter().zip(matrix.diagonal_dominance()) {
        eprintln!("{name}: same-category similarity {}", if dominant { "dominates" } else { "does not dominate" });
    }
    Ok(())
}

fn reproduce(config: &ExperimentConfig, table: ResultTable, repeats: usize, output: Option<&Path>) -> CliResult<()> {
    let mut base = config.clone();
    if table == ResultTable::Table4 {
        base.set("task", "item2item")?;
    } else if base.task == Task::Item2Item {
        base.set("task", "item-rec")?;
    }
    let data = load_task_data(&base)?;
    let rows = repro_table(table, &base, &data, repeats, |c, outcome| {
        let scheme = match c.scheme {
            SchemeKind::Mgqe => format!("mgqe-{}", c.mgqe_variant),
            s => s.to_string(),
        };
        info!(
            "{table} {} {scheme} seed {}: {}, size {:.2}%",
            c.model,
            c.seed,
            outcome.metrics,
            100.0 * outcome.size.ratio()
        );
    })?;
    match output {
        Some(path) => write_table_csv(&rows, create(path)?)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_table_csv(&rows, &mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
