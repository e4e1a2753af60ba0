//! `batchot` command-line runner for budget sweeps and rotation drift tests.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use batchot::experiment::{run_bound_sweep, run_drift_test, write_drift, write_sweep, ExperimentConfig};
use batchot::io::DataFormat;
use batchot::ot::{Kernel, SinkhornParams};
use batchot::upper::Method;
use batchot::{Error, GroundCost};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "batchot", version, about = "Mini-batch bounds on optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, budget, seed) cell and compare with the exact cost.
    Sweep(Common),
    /// Permutation tests between a sample and rotated copies of another sample.
    Drift(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Exact,
    Sinkhorn,
    SinkhornDivergence,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    SquaredEuclidean,
    L1,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Idx,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; its fields take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_x: Option<PathBuf>,
    /// Second dataset; without it X and Y are disjoint slices of the first.
    #[arg(long)]
    dataset_y: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Resize Y images to ROWSxCOLS (e.g. 28x28).
    #[arg(long)]
    resize_y: Option<String>,
    /// Sample size drawn for each of X and Y.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    angles: Option<Vec<f64>>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Largest N·M for which the exact reference is solved.
    #[arg(long)]
    exact_cap: Option<usize>,
    /// Also compute the dual lower bound in sweeps.
    #[arg(long)]
    lower_bound: bool,
    /// Leave wall times out so reruns produce identical files.
    #[arg(long)]
    omit_timings: bool,
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; JSON goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_shape(s: &str) -> Result<(usize, usize), Error> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| config_error(format!("shape '{s}' is not ROWSxCOLS")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| config_error(format!("shape '{s}' is not ROWSxCOLS")))
    };
    Ok((num(r)?, num(c)?))
}

impl Common {
    /// Flags become a JSON object; the config file, if any, is laid on top.
    fn to_config(&self) -> Result<ExperimentConfig, Error> {
        let mut m = Map::new();
        // without --format, .csv files are CSV and everything else IDX
        let format = |p: &Path| match self.format {
            Some(FormatArg::Csv) => DataFormat::Csv,
            Some(FormatArg::Idx) => DataFormat::Idx,
            None if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => DataFormat::Csv,
            None => DataFormat::Idx,
        };
        if let Some(p) = &self.dataset_x {
            m.insert("dataset_x".into(), json!({"path": p, "format": format(p)}));
        }
        if let Some(p) = &self.dataset_y {
            let resize = self.resize_y.as_deref().map(parse_shape).transpose()?;
            m.insert("dataset_y".into(), json!({"path": p, "format": format(p), "resize": resize}));
        }
        if let Some(n) = self.n {
            m.insert("n".into(), json!(n));
        }
        if let Some(k) = self.k {
            m.insert("k".into(), json!(k));
        }
        if let Some(ms) = &self.methods {
            let parsed = ms.iter().map(|s| s.parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
            m.insert("methods".into(), serde_json::to_value(parsed)?);
        }
        if let Some(b) = &self.budgets {
            m.insert("budgets".into(), json!(b));
        }
        if self.kernel.is_some() || self.epsilon.is_some() {
            let eps = self.epsilon.unwrap_or(0.1);
            let kernel = match self.kernel.unwrap_or(KernelArg::Sinkhorn) {
                KernelArg::Exact => Kernel::Exact,
                KernelArg::Sinkhorn => Kernel::Sinkhorn(SinkhornParams::new(eps)),
                KernelArg::SinkhornDivergence => Kernel::SinkhornDivergence(SinkhornParams::new(eps)),
            };
            m.insert("kernel".into(), serde_json::to_value(kernel)?);
        }
        if let Some(s) = &self.seeds {
            m.insert("seeds".into(), json!(s));
        }
        if let Some(metric) = self.metric {
            let g = match metric {
                MetricArg::Euclidean => GroundCost::Euclidean,
                MetricArg::SquaredEuclidean => GroundCost::SquaredEuclidean,
                MetricArg::L1 => GroundCost::L1,
            };
            m.insert("metric".into(), serde_json::to_value(g)?);
        }
        for (key, v) in [("alpha", self.alpha), ("rho", self.rho)] {
            if let Some(v) = v {
                m.insert(key.into(), json!(v));
            }
        }
        if let Some(a) = &self.angles {
            m.insert("angles".into(), json!(a));
        }
        for (key, v) in [("resamples", self.resamples), ("exact_cap", self.exact_cap), ("jobs", self.jobs)] {
            if let Some(v) = v {
                m.insert(key.into(), json!(v));
            }
        }
        if self.lower_bound {
            m.insert("lower_bound".into(), json!(true));
        }
        if self.omit_timings {
            m.insert("omit_timings".into(), json!(true));
        }
        if let Some(o) = &self.out {
            m.insert("output".into(), json!(o));
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            let Value::Object(obj) = file else {
                return Err(config_error(format!("{} must hold a JSON object", path.display())));
            };
            m.extend(obj);
        }
        serde_json::from_value(Value::Object(m)).map_err(|e| config_error(e.to_string()))
    }
}

fn emit<T: serde::Serialize>(
    report: &T,
    out: Option<&Path>,
    write: impl FnOnce(&Path) -> batchot::Result<(PathBuf, PathBuf)>,
) -> Result<(), Error> {
    match out {
        Some(dir) => {
            let (json, csv) = write(dir)?;
            eprintln!("wrote {} and {}", json.display(), csv.display());
        }
        None => println!("{}", serde_json::to_string_pretty(report)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = args.to_config()?;
            let report = run_bound_sweep(&cfg)?;
            for c in report.cells.iter().filter(|c| c.error.is_some()) {
                log::warn!("{} {:?} seed {}: {}", c.method, c.budget, c.seed, c.error.as_deref().unwrap_or(""));
            }
            emit(&report, cfg.output.as_deref(), |d| write_sweep(&report, d))
        }
        Command::Drift(args) => {
            let cfg = args.to_config()?;
            let report = run_drift_test(&cfg)?;
            for s in &report.summary {
                eprintln!(
                    "{:<16} budget {:>5} angle {:>6.1}: rejected {}/{}",
                    s.method,
                    s.budget.map_or("-".to_string(), |b| b.to_string()),
                    s.angle,
                    s.rejections,
                    s.trials
                );
            }
            emit(&report, cfg.output.as_deref(), |d| write_drift(&report, d))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Budget(_) | Error::Json(_) => 2,
        Error::Io(_) | Error::Format { .. } | Error::Parse { .. } | Error::Csv(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
