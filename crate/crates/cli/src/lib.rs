//! Command-line front end: configuration layering, subcommand dispatch and
//! artifact emission.

mod selftest;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use bee::bandit::{arm_score_distribution, histogram};
use bee::baselines::BaselineType;
use bee::harness::io;
use bee::harness::snapshot;
use bee::harness::{Pretrained, RunConfig, Workbench};
use bee::model::{Classifier, ContextModel};
use bee::rng::{derive, derive_seed};
use bee::{BeeError, Tensor};
use clap::{Parser, Subcommand};

pub use selftest::{run_selftest, Check};

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "BEE_SEED";

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const WIN_RATES_FILE: &str = "win_rates.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const MAP_CSV_FILE: &str = "map.csv";
pub const MAP_PGM_FILE: &str = "map.pgm";
pub const TRIALS_FILE: &str = "trials.csv";
pub const ARM_SCORES_FILE: &str = "arm_scores.csv";

const ARM_SAMPLES: usize = 1000;
const ARM_BINS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "bee", version, about = "Bandit-selected baselines for path-integrated explanation maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON run configuration; absent fields take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `key=value` override (dotted keys reach nested fields); repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory receiving every artifact.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SnapshotArg {
    /// Pretrained snapshot; defaults to `<out>/snapshot.json`.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain one bandit per metric; writes the snapshot and training log.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Explain one instance; writes the map (CSV and PGM) and the per-trial log.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        snapshot: SnapshotArg,
        /// Headerless CSV image of `channels x height` rows by `width` columns.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Class to explain for `--input`; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Evaluate every configured method under every configured metric.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        snapshot: SnapshotArg,
    },
    /// Mean best-so-far curves for the configured strategies.
    Curves {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        snapshot: SnapshotArg,
    },
    /// Check the core invariants and report pass/fail per property.
    Selftest,
}

/// Failure category, mapped to the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, input or snapshot (exit 1).
    Validation(String),
    /// Failure while computing or writing artifacts (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

fn validation(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Defaults, then the config file, then `BEE_SEED`, then `--set` overrides.
pub fn resolve_config(common: &Common, env_seed: Option<&str>) -> CliResult<RunConfig> {
    let base = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json_str(&text).map_err(validation)?
        }
        None => RunConfig::default(),
    };
    let mut layered = Vec::new();
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| validation(format!("{SEED_ENV} must be an unsigned integer, got '{seed}'")))?;
        layered.push(format!("seed={seed}"));
    }
    layered.extend(common.overrides.iter().cloned());
    let cfg = base.with_overrides(&layered).map_err(validation)?;
    cfg.validate().map_err(validation)?;
    Ok(cfg)
}

/// Sink that only writes fixed file names inside the output directory.
struct OutDir(PathBuf);

impl OutDir {
    fn create(path: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self(path.to_path_buf()))
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.0.join(name);
        std::fs::write(&path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

fn workbench(cfg: RunConfig) -> CliResult<Workbench> {
    Workbench::new(cfg).map_err(|e| match e {
        BeeError::Config(_) | BeeError::InvalidArgument(_) => validation(e),
        other => runtime(other),
    })
}

fn load_snapshot(wb: &Workbench, common: &Common, arg: &SnapshotArg) -> CliResult<Pretrained> {
    let path = arg.snapshot.clone().unwrap_or_else(|| common.out.join(SNAPSHOT_FILE));
    if !path.is_file() {
        return Err(validation(format!("snapshot {} not found; run `bee pretrain` first", path.display())));
    }
    let p = snapshot::load(&path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    wb.check_pretrained(&p).map_err(validation)?;
    Ok(p)
}

fn needs_snapshot(methods: &[bee::harness::Method]) -> bool {
    methods.iter().any(|m| m.needs_snapshot())
}

fn pretrain(common: &Common, env_seed: Option<&str>) -> CliResult<String> {
    let wb = workbench(resolve_config(common, env_seed)?)?;
    let out = OutDir::create(&common.out)?;
    let (p, log) = wb.pretrain().map_err(runtime)?;
    let snap = out.write(SNAPSHOT_FILE, &snapshot::to_json(&p).map_err(runtime)?)?;
    out.write(TRAINING_LOG_FILE, &io::training_csv(&log).map_err(runtime)?)?;
    Ok(format!("wrote {}", snap.display()))
}

fn read_input(path: &Path, shape: &[usize]) -> CliResult<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let grid = io::parse_grid_csv(&text).map_err(validation)?;
    let [c, h, w] = shape else {
        return Err(validation("model input is not an image"));
    };
    if grid.shape() != [c * h, *w] {
        return Err(validation(format!("input grid is {:?}, expected {} rows of {} values", grid.shape(), c * h, w)));
    }
    grid.reshape(shape).map_err(validation)
}

fn arm_scores_csv(p: &Pretrained, metric: bee::metrics::MetricId, c: &[f64], seed: u64) -> CliResult<String> {
    let state = &p.states[&metric];
    let samples = arm_score_distribution(state, c, ARM_SAMPLES, &mut derive(seed, "arm-scores", 0)).map_err(runtime)?;
    let mut out = String::from("baseline,bin_low,bin_high,count\n");
    for (kind, values) in BaselineType::ALL.iter().zip(&samples) {
        for (b, count) in histogram(values, ARM_BINS).into_iter().enumerate() {
            let lo = b as f64 / ARM_BINS as f64;
            let hi = (b + 1) as f64 / ARM_BINS as f64;
            out.push_str(&format!("{kind},{lo},{hi},{count}\n"));
        }
    }
    Ok(out)
}

fn explain(
    common: &Common,
    arg: &SnapshotArg,
    input: Option<&Path>,
    class: Option<usize>,
    env_seed: Option<&str>,
) -> CliResult<String> {
    let wb = workbench(resolve_config(common, env_seed)?)?;
    let cfg = &wb.cfg;
    let p = if cfg.strategy.needs_snapshot() { Some(load_snapshot(&wb, common, arg)?) } else { None };
    let (x, label) = match input {
        Some(path) => {
            let x = read_input(path, wb.model.input_shape())?;
            let y = match class {
                Some(y) if y < wb.model.class_count() => y,
                Some(y) => return Err(validation(format!("class {y} out of range"))),
                None => wb.model.predict(&x).map_err(runtime)?,
            };
            (x, Some(y))
        }
        None => {
            let item = &wb.test.items[cfg.instance];
            (item.input.clone(), None)
        }
    };
    let y = match label {
        Some(y) => y,
        None => wb.class_of(&x, wb.test.items[cfg.instance].label).map_err(runtime)?,
    };
    let seed = derive_seed(cfg.seed, "explain", cfg.instance as u64);
    let out = OutDir::create(&common.out)?;
    let e = wb.explain(cfg.strategy, p.as_ref(), cfg.metric, &x, y, cfg.draws, seed).map_err(runtime)?;
    out.write(MAP_CSV_FILE, &io::grid_csv(&e.map.map).map_err(runtime)?)?;
    out.write(MAP_PGM_FILE, &io::pgm(&e.map.map).map_err(runtime)?)?;
    out.write(TRIALS_FILE, &io::trials_csv(&e.trials).map_err(runtime)?)?;
    if let Some(p) = &p {
        let c = wb.restore_context(&p.theta).map_err(runtime)?.embed(&x).map_err(runtime)?;
        out.write(ARM_SCORES_FILE, &arm_scores_csv(p, cfg.metric, &c, seed)?)?;
    }
    Ok(format!(
        "{} {} score {} from {} trial(s)",
        cfg.strategy,
        cfg.metric,
        e.map.score.unwrap_or(f64::NAN),
        e.trials.len()
    ))
}

fn win_rates_csv(rates: &std::collections::BTreeMap<bee::metrics::MetricId, [f64; 5]>) -> String {
    let mut out = String::from("metric");
    for t in BaselineType::ALL {
        out.push(',');
        out.push_str(t.name());
    }
    out.push('\n');
    for (m, row) in rates {
        out.push_str(m.name());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn eval(common: &Common, arg: &SnapshotArg, env_seed: Option<&str>) -> CliResult<String> {
    let wb = workbench(resolve_config(common, env_seed)?)?;
    let p = if needs_snapshot(&wb.cfg.methods) { Some(load_snapshot(&wb, common, arg)?) } else { None };
    let out = OutDir::create(&common.out)?;
    let rows = wb.evaluate_suite(p.as_ref()).map_err(runtime)?;
    let path = out.write(RESULTS_FILE, &io::results_csv(&rows).map_err(runtime)?)?;
    if let Some(p) = &p {
        out.write(WIN_RATES_FILE, &win_rates_csv(&wb.win_rates(p).map_err(runtime)?))?;
    }
    Ok(format!("wrote {} ({} rows)", path.display(), rows.len()))
}

fn curves(common: &Common, arg: &SnapshotArg, env_seed: Option<&str>) -> CliResult<String> {
    let wb = workbench(resolve_config(common, env_seed)?)?;
    let p = if needs_snapshot(&wb.cfg.strategies) { Some(load_snapshot(&wb, common, arg)?) } else { None };
    let out = OutDir::create(&common.out)?;
    let series = wb.convergence_experiment(p.as_ref(), wb.cfg.metric).map_err(runtime)?;
    let path = out.write(CURVES_FILE, &io::curves_csv(&series).map_err(runtime)?)?;
    Ok(format!("wrote {}", path.display()))
}

/// Execute a parsed invocation; `env_seed` is the raw `BEE_SEED` value, if set.
pub fn execute(cli: &Cli, env_seed: Option<&str>) -> CliResult<String> {
    match &cli.command {
        Command::Pretrain { common } => pretrain(common, env_seed),
        Command::Explain { common, snapshot, input, class } => {
            explain(common, snapshot, input.as_deref(), *class, env_seed)
        }
        Command::Eval { common, snapshot } => eval(common, snapshot, env_seed),
        Command::Curves { common, snapshot } => curves(common, snapshot, env_seed),
        Command::Selftest => {
            let checks = run_selftest();
            let mut report = String::new();
            for c in &checks {
                match &c.outcome {
                    Ok(()) => report.push_str(&format!("PASS {}\n", c.name)),
                    Err(why) => report.push_str(&format!("FAIL {}: {why}\n", c.name)),
                }
            }
            if checks.iter().all(|c| c.outcome.is_ok()) {
                Ok(report.trim_end().to_string())
            } else {
                Err(CliError::Runtime(format!("selftest failures\n{}", report.trim_end())))
            }
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
