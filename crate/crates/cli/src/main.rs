use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use symword::config::ExperimentConfig;
use symword::datagen::{write_dataset, DataGenConfig, Dataset, Split, WindowMode, DEFAULT_MIN_PART, FORMAT_VERSION};
use symword::eval::{
    evaluate_ood, export_heatmap, position_similarity, swapped_pair_similarity, token_similarity, write_report,
};
use symword::model::{Checkpoint, Transformer, CHECKPOINT_VERSION};
use symword::selfcheck;
use symword::trainer::Trainer;
use symword::{Error, SchemeKind, TokenScheme};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Training data, training and evaluation for transformers that learn to
/// multiply transpositions in the symmetric group.
#[derive(Parser, Debug)]
#[command(name = "symword", disable_version_flag = true)]
struct Cli {
    /// Print the program, dataset-format and checkpoint-format versions.
    #[arg(short = 'V', long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one dataset split.
    GenData(GenDataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set and write a JSON report.
    Eval(EvalArgs),
    /// Export an embedding self-similarity matrix as CSV and PNG.
    Heatmap(HeatmapArgs),
    /// Read words (one per line, whitespace-separated tokens) from stdin and
    /// print the permutation each one evaluates to.
    Oracle(OracleArgs),
    /// Run the group-relation and attention-mask invariant suites.
    Selfcheck,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    General,
    Adjacent,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::General => SchemeKind::General,
            SchemeArg::Adjacent => SchemeKind::Adjacent,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    #[value(alias = "val")]
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WindowArg {
    Partitioned,
    Naive,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Experiment file supplying defaults for every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` overrides applied to the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Subgroup degree.
    #[arg(long)]
    m: Option<usize>,
    /// Number of rows.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    split: SplitArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum window size for the adjacent scheme.
    #[arg(long)]
    min_part: Option<usize>,
    #[arg(long, value_enum)]
    windows: Option<WindowArg>,
    /// Output path; the JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for metrics.csv and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run every parallel section on one thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Support threshold separating in-subgroup rows; defaults to the
    /// dataset's recorded m.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Token,
    Position,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    which: Which,
    /// Writes PREFIX.csv and PREFIX.png.
    #[arg(long)]
    out: PathBuf,
    /// Keep the Δ and PAD rows in the token matrix.
    #[arg(long)]
    include_special: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    #[arg(long)]
    n: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.version {
        println!("symword {}", env!("CARGO_PKG_VERSION"));
        println!("dataset format {FORMAT_VERSION}");
        println!("checkpoint format {CHECKPOINT_VERSION}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(EXIT_USAGE);
    };
    let result = match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Oracle(a) => oracle(a),
        Command::Selfcheck => return run_selfcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Toml(_) => EXIT_USAGE,
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn gen_data(a: GenDataArgs) -> symword::Result<()> {
    let split: Split = a.split.into();
    let exp = a
        .config
        .as_deref()
        .map(|p| ExperimentConfig::load(p, &a.overrides))
        .transpose()?;
    let mut cfg = match &exp {
        Some(e) => e.data_config(split)?,
        None => {
            let missing = |flag: &str| usage(format!("--{flag} is required without --config"));
            let scheme = TokenScheme::new(a.scheme.ok_or_else(|| missing("scheme"))?.into(), a.n.ok_or_else(|| missing("n"))?)?;
            DataGenConfig::new(
                scheme,
                a.m.ok_or_else(|| missing("m"))?,
                a.count.ok_or_else(|| missing("count"))?,
                a.seed.ok_or_else(|| missing("seed"))?,
                split,
            )
        }
    };
    if let Some(kind) = a.scheme {
        cfg.scheme = TokenScheme::new(kind.into(), a.n.unwrap_or(cfg.scheme.n))?;
    } else if let Some(n) = a.n {
        cfg.scheme = TokenScheme::new(cfg.scheme.kind, n)?;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(count) = a.count {
        cfg.count = count;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.min_part = a.min_part.unwrap_or(if exp.is_some() { cfg.min_part } else { DEFAULT_MIN_PART });
    if let Some(w) = a.windows {
        cfg.windows = match w {
            WindowArg::Partitioned => WindowMode::Partitioned,
            WindowArg::Naive => WindowMode::Naive,
        };
    }
    let out = match (a.out, &exp) {
        (Some(p), _) => p,
        (None, Some(e)) => e.dataset_path(split),
        (None, None) => return Err(usage("--out is required without --config")),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let header = write_dataset(&cfg, &out)?;
    println!(
        "wrote {} rows ({} {} n={} m={} seed={}) to {}",
        header.count,
        cfg.split,
        cfg.scheme.kind,
        cfg.scheme.n,
        cfg.m,
        cfg.seed,
        out.display()
    );
    Ok(())
}

fn open_dataset(path: &Path) -> symword::Result<Dataset> {
    Dataset::open(path)
}

fn train(a: TrainArgs) -> symword::Result<()> {
    if a.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    let exp = ExperimentConfig::load(&a.config, &a.overrides)?;
    let train_set = open_dataset(&a.data)?;
    let val_set = open_dataset(&a.val)?;
    let scheme = exp.scheme()?;
    for (name, d) in [("training", &train_set), ("validation", &val_set)] {
        if *d.scheme() != scheme {
            return Err(usage(format!(
                "{name} data uses {:?} but the config describes {:?}",
                d.scheme(),
                scheme
            )));
        }
    }
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(&Checkpoint::load(path)?, exp.train.clone())?,
        None => Trainer::new(Transformer::new(exp.model_config()?, exp.experiment.seed)?, exp.train.clone())?,
    };
    println!(
        "{}: {} parameters, {} training rows, {} validation rows",
        exp.experiment.name,
        trainer.model().parameter_count(),
        train_set.len(),
        val_set.len()
    );
    println!("epoch  train_loss  val_loss  train_err  val_err  lr  seconds");
    let outcome = trainer.run(&train_set, &val_set, Some(&a.out), |r| {
        println!(
            "{:>5}  {:.5}  {:.5}  {:.4}  {:.4}  {:.1e}  {:.0}",
            r.epoch, r.train_loss, r.val_loss, r.train_error, r.val_error, r.lr, r.seconds
        );
        let _ = io::stdout().flush();
    })?;
    println!(
        "stopped ({:?}) after {} epochs; best validation loss {:.5}; outputs in {}",
        outcome.stop,
        outcome.history.len(),
        outcome.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> symword::Result<()> {
    let model: Transformer<f32> = Checkpoint::load(&a.model)?.model()?;
    let test_set = open_dataset(&a.data)?;
    let m = a.m.unwrap_or(test_set.header().m);
    let report = evaluate_ood(&model, &test_set, m)?;
    write_report(&report, &a.report)?;
    println!(
        "rows {}  full-permutation error {:.6}  single-token error {:.6}",
        report.counts.rows, report.full_permutation_error, report.single_token_error
    );
    println!(
        "support ≤ {m}: {:.4}% of rows, error {:.6}; support > {m}: error {:.6}",
        100.0 * report.subgroup_fraction,
        report.within_support_m.error,
        report.beyond_support_m.error
    );
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> symword::Result<()> {
    let model: Transformer<f32> = Checkpoint::load(&a.model)?.model()?;
    let matrix = match a.which {
        Which::Token => token_similarity(&model, a.include_special),
        Which::Position => position_similarity(&model),
    };
    let (csv, png) = export_heatmap(&matrix, &a.out)?;
    println!("{}×{} matrix written to {} and {}", matrix.size(), matrix.size(), csv.display(), png.display());
    if matches!(a.which, Which::Token) && model.scheme().kind == SchemeKind::General {
        println!("mean cosine similarity of s(i,j) and s(j,i): {:.4}", swapped_pair_similarity(&model)?);
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> symword::Result<()> {
    let scheme = TokenScheme::new(a.scheme.into(), a.n).map_err(|e| usage(e.to_string()))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens = line
            .split_whitespace()
            .map(|t| match t.parse::<usize>() {
                Ok(v) => u16::try_from(v).map_err(|_| Error::TokenOutOfRange {
                    token: v,
                    limit: scheme.transposition_tokens(),
                }),
                Err(_) => Err(Error::Config(format!("{t:?} is not a token"))),
            })
            .collect::<symword::Result<Vec<_>>>()?;
        let word = scheme.decode_word(&tokens)?;
        writeln!(out, "{}", word.evaluate(scheme.n)?)?;
    }
    Ok(())
}

fn run_selfcheck() -> ExitCode {
    let mut ok = true;
    for r in selfcheck::run_all() {
        ok &= r.passed;
        let status = if r.passed { "PASS" } else { "FAIL" };
        if r.detail.is_empty() {
            println!("{status}  {} ({} cases)", r.name, r.cases);
        } else {
            println!("{status}  {} ({} cases): {}", r.name, r.cases, r.detail);
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}
