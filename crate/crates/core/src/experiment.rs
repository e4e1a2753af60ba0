//! Experiment runners: budget sweeps against an exact reference, and rotation
//! drift tests on image datasets.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::image::{resize_all, rotate_all};
use crate::io::{read_dataset, DataFormat, Dataset};
use crate::lower::dual_lower_bound;
use crate::measures::{cost_matrix, partition_contiguous, EmpiricalMeasure, GroundCost};
use crate::methods::MethodConfig;
use crate::ot::{solve_exact, Kernel};
use crate::testing::{permutation_test, Statistic};
use crate::upper::{BatchProblem, Method};

pub const DEFAULT_EXACT_CAP: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DataFormat,
    /// Bilinear resize of every image to (rows, cols) after loading.
    #[serde(default)]
    pub resize: Option<(usize, usize)>,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        let mut data = read_dataset(&self.path, self.format)?;
        if let Some((nr, nc)) = self.resize {
            let (r, c) = data.image_shape.ok_or_else(|| {
                Error::Config(format!("{} has no image shape to resize", self.path.display()))
            })?;
            data.points = resize_all(data.points.view(), r, c, nr, nc)?;
            data.image_shape = Some((nr, nc));
        }
        Ok(data)
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_cap() -> usize {
    DEFAULT_EXACT_CAP
}
fn default_rho() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_resamples() -> usize {
    200
}

/// Settings shared by the sweep and the drift test. JSON field names match
/// the struct fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_x: DatasetSpec,
    /// When absent, X and Y are disjoint random slices of `dataset_x`.
    #[serde(default)]
    pub dataset_y: Option<DatasetSpec>,
    pub n: usize,
    pub k: usize,
    pub methods: Vec<Method>,
    /// Budgets B for the budgeted methods; each such method runs once per budget.
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric: GroundCost,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Largest N·M for which the exact reference is computed.
    #[serde(default = "default_cap")]
    pub exact_cap: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Adds the dual lower bound as an extra sweep cell.
    #[serde(default)]
    pub lower_bound: bool,
    /// Leaves wall times out of the reports so reruns are byte-identical.
    #[serde(default)]
    pub omit_timings: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub angles: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    /// Worker threads for concurrent cells; `None` uses all cores.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.n < k {
            return Err(Error::Config(format!("need 1 ≤ k ≤ n, got k = {k}, n = {}", self.n)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if let Some(&b) = self.budgets.iter().find(|&&b| b < k || b > k * k) {
            return Err(Error::Config(format!("budget {b} outside [{k}, {}]", k * k)));
        }
        if let Some(m) = self.methods.iter().find(|m| m.is_budgeted()) {
            if self.budgets.is_empty() {
                return Err(Error::Config(format!("method {m} needs at least one budget")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.resamples == 0 {
            return Err(Error::Config("resamples must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }

    /// (method config, budget column) pairs in report order.
    fn method_cells(&self) -> Result<Vec<(MethodConfig, Option<usize>)>> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m.is_budgeted() {
                for &b in &self.budgets {
                    out.push((MethodConfig::from_method(m, Some(b), self.k, self.rho)?, Some(b)));
                }
            } else {
                out.push((MethodConfig::from_method(m, None, self.k, self.rho)?, None));
            }
        }
        Ok(out)
    }

    fn execution(&self) -> Execution {
        if self.jobs == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// Runs `f` on a pool of `jobs` threads when the parallel feature is on.
fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} worker threads: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = jobs;
    Ok(f())
}

/// Draws n rows for X and n for Y. With a single dataset the two draws are
/// disjoint slices of one random selection of 2n rows.
fn subsample(x: &Dataset, y: Option<&Dataset>, n: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let too_small = |len: usize, need: usize| {
        Error::Config(format!("subsample of {need} rows requested from a dataset of {len}"))
    };
    match y {
        None => {
            if 2 * n > x.len() {
                return Err(too_small(x.len(), 2 * n));
            }
            let idx = sample(&mut rng, x.len(), 2 * n).into_vec();
            Ok((x.points.select(Axis(0), &idx[..n]), x.points.select(Axis(0), &idx[n..])))
        }
        Some(y) => {
            if n > x.len() {
                return Err(too_small(x.len(), n));
            }
            if n > y.len() {
                return Err(too_small(y.len(), n));
            }
            let ix = sample(&mut rng, x.len(), n).into_vec();
            let iy = sample(&mut rng, y.len(), n).into_vec();
            Ok((x.points.select(Axis(0), &ix), y.points.select(Axis(0), &iy)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub seed: u64,
    pub exact: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

/// One (method, budget, seed) cell of a sweep. Failed cells keep the error
/// text and no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: String,
    pub budget: Option<usize>,
    pub seed: u64,
    pub value: Option<f64>,
    pub relative_error: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub budget_used: Option<usize>,
    pub declared_budget: usize,
    /// Batch OT solves counted while running the cell.
    pub solves: usize,
    pub feasibility_margin: Option<f64>,
    pub matching: Option<Vec<(usize, usize, f64)>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n: usize,
    pub k: usize,
    pub references: Vec<Reference>,
    pub cells: Vec<CellRecord>,
    pub total_solves: usize,
    pub declared_solves: usize,
}

/// The CSV view of a sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub method: String,
    pub budget: Option<usize>,
    pub seed: u64,
    pub value: Option<f64>,
    pub relative_error: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

pub fn relative_error(value: f64, exact: f64) -> Option<f64> {
    (exact > 0.0).then(|| (value - exact).abs() / exact)
}

const LOWER_BOUND: &str = "lower_bound";

enum CellKind {
    Bound(MethodConfig),
    Lower,
}

struct SeedData {
    seed: u64,
    x: EmpiricalMeasure,
    y: EmpiricalMeasure,
    exact: Option<f64>,
}

pub fn run_bound_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let x = cfg.dataset_x.load()?;
    let y = cfg.dataset_y.as_ref().map(DatasetSpec::load).transpose()?;
    if let Some(y) = &y {
        if y.points.ncols() != x.points.ncols() {
            return Err(Error::Config(format!(
                "datasets have dimensions {} and {}",
                x.points.ncols(),
                y.points.ncols()
            )));
        }
    }
    let mut cells = Vec::new();
    for (m, b) in cfg.method_cells()? {
        cells.push((CellKind::Bound(m), b));
    }
    if cfg.lower_bound {
        cells.push((CellKind::Lower, None));
    }
    let exec = cfg.execution();
    with_jobs(cfg.jobs, || -> Result<SweepReport> {
        let seeds: Vec<u64> = cfg.seeds.clone();
        let data: Vec<SeedData> = exec.try_map(&seeds, |&seed| -> Result<SeedData> {
            let (xs, ys) = subsample(&x, y.as_ref(), cfg.n, seed)?;
            let xm = EmpiricalMeasure::uniform(xs)?;
            let ym = EmpiricalMeasure::uniform(ys)?;
            let exact = if cfg.n * cfg.n <= cfg.exact_cap {
                let c = cost_matrix(xm.points(), ym.points(), cfg.metric)?;
                Some(solve_exact(c.view(), xm.weights().view(), ym.weights().view())?.value)
            } else {
                log::info!("skipping the exact reference for seed {seed}: N·M above the cap");
                None
            };
            Ok(SeedData { seed, x: xm, y: ym, exact })
        })?;
        let references = data
            .iter()
            .map(|d| Reference {
                seed: d.seed,
                exact: d.exact,
                wall_time_ms: None,
            })
            .collect();

        let jobs: Vec<(usize, usize)> = (0..data.len())
            .flat_map(|s| (0..cells.len()).map(move |c| (s, c)))
            .collect();
        let records = exec.try_map(&jobs, |&(si, ci)| -> Result<CellRecord> {
            let d = &data[si];
            let (kind, budget) = &cells[ci];
            let px = partition_contiguous(&d.x, cfg.k)?;
            let py = partition_contiguous(&d.y, cfg.k)?;
            let p = BatchProblem::new(d.x.clone(), d.y.clone(), px, py)?
                .with_kernel(cfg.kernel)
                .with_metric(cfg.metric)
                .with_execution(Execution::Sequential);
            let mut rec = CellRecord {
                method: String::new(),
                budget: *budget,
                seed: d.seed,
                value: None,
                relative_error: None,
                wall_time_ms: None,
                budget_used: None,
                declared_budget: cfg.k * cfg.k,
                solves: 0,
                feasibility_margin: None,
                matching: None,
                error: None,
            };
            match kind {
                CellKind::Bound(m) => {
                    rec.method = m.method().name().to_string();
                    rec.declared_budget = m.declared_budget(cfg.k);
                    match m.run(&p, d.seed) {
                        Ok(r) => {
                            rec.value = Some(r.value);
                            rec.wall_time_ms = Some(r.wall_time_ms);
                            rec.budget_used = Some(r.budget_used);
                            rec.matching = Some(r.matching.triples());
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
                CellKind::Lower => {
                    rec.method = LOWER_BOUND.to_string();
                    let start = std::time::Instant::now();
                    match dual_lower_bound(&p) {
                        Ok(r) => {
                            rec.value = Some(r.value);
                            rec.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                            rec.budget_used = Some(cfg.k * cfg.k);
                            rec.feasibility_margin = Some(r.feasibility_margin);
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
            }
            rec.solves = p.solve_count();
            rec.relative_error = rec.value.zip(d.exact).and_then(|(v, e)| relative_error(v, e));
            if cfg.omit_timings {
                rec.wall_time_ms = None;
            }
            Ok(rec)
        })?;
        for r in records.iter().filter(|r| r.error.is_some()) {
            log::warn!("cell {} budget {:?} seed {} failed: {}", r.method, r.budget, r.seed, r.error.as_deref().unwrap_or(""));
        }
        Ok(SweepReport {
            n: cfg.n,
            k: cfg.k,
            references,
            total_solves: records.iter().map(|r| r.solves).sum(),
            declared_solves: records.iter().map(|r| r.declared_budget).sum(),
            cells: records,
        })
    })?
}

impl SweepReport {
    pub fn csv_rows(&self) -> Vec<SweepCsvRow> {
        self.cells
            .iter()
            .map(|c| SweepCsvRow {
                method: c.method.clone(),
                budget: c.budget,
                seed: c.seed,
                value: c.value,
                relative_error: c.relative_error,
                wall_time_ms: c.wall_time_ms,
            })
            .collect()
    }

    pub fn exact(&self, seed: u64) -> Option<f64> {
        self.references.iter().find(|r| r.seed == seed).and_then(|r| r.exact)
    }

    /// Values of one method column, ordered by seed as configured.
    pub fn values(&self, method: &str, budget: Option<usize>) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.budget == budget)
            .map(|c| c.value)
            .collect()
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_report<T: Serialize, R: Serialize>(dir: &Path, stem: &str, report: &T, rows: &[R]) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&json, serde_json::to_string_pretty(report)?)?;
    write_csv(rows, fs::File::create(&csv)?)?;
    Ok((json, csv))
}

/// Writes `sweep.json` and `sweep.csv` into `dir`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    write_report(dir, "sweep", report, &report.csv_rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub method: String,
    pub budget: Option<usize>,
    pub angle: f64,
    pub trial: usize,
    pub seed: u64,
    pub observed: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub method: String,
    pub budget: Option<usize>,
    pub angle: f64,
    pub trials: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub median_p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub resamples: usize,
    pub records: Vec<DriftRecord>,
    pub summary: Vec<RejectionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCsvRow {
    pub method: String,
    pub budget: Option<usize>,
    pub angle: f64,
    pub trial: usize,
    pub observed: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// For every trial seed, takes two disjoint random slices of n images, rotates
/// the second by each angle, and runs the permutation test for every method.
pub fn run_drift_test(cfg: &ExperimentConfig) -> Result<DriftReport> {
    cfg.validate()?;
    if cfg.angles.is_empty() {
        return Err(Error::Config("no rotation angles given".into()));
    }
    let data = cfg.dataset_x.load()?;
    let (rows, cols) = data.image_shape.ok_or_else(|| Error::Format {
        offset: 0,
        message: format!("{} holds no images to rotate", cfg.dataset_x.path.display()),
    })?;
    if rows != cols {
        return Err(Error::Format {
            offset: 0,
            message: format!("rotation needs square images, got {rows}x{cols}"),
        });
    }
    let methods = cfg.method_cells()?;
    let exec = cfg.execution();
    with_jobs(cfg.jobs, || -> Result<DriftReport> {
        let slices = cfg
            .seeds
            .iter()
            .map(|&s| subsample(&data, None, cfg.n, s))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for (mi, _) in methods.iter().enumerate() {
            for (ai, _) in cfg.angles.iter().enumerate() {
                for trial in 0..cfg.seeds.len() {
                    cells.push((mi, ai, trial));
                }
            }
        }
        let records = exec.try_map(&cells, |&(mi, ai, trial)| -> Result<DriftRecord> {
            let (m, budget) = methods[mi];
            let angle = cfg.angles[ai];
            let seed = cfg.seeds[trial];
            let (xs, ys) = &slices[trial];
            let ys = rotate_all(ys.view(), rows, cols, angle)?;
            let x = EmpiricalMeasure::uniform(xs.clone())?;
            let y = EmpiricalMeasure::uniform(ys)?;
            let stat = Statistic {
                method: m,
                k: cfg.k,
                kernel: cfg.kernel,
                metric: cfg.metric,
            };
            let mut rec = DriftRecord {
                method: m.method().name().to_string(),
                budget,
                angle,
                trial,
                seed,
                observed: None,
                p_value: None,
                reject: None,
                error: None,
            };
            match permutation_test(&x, &y, &stat, cfg.resamples, seed, Execution::Parallel) {
                Ok(r) => {
                    rec.observed = Some(r.observed);
                    rec.p_value = Some(r.p_value);
                    rec.reject = Some(r.p_value <= cfg.alpha);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            Ok(rec)
        })?;
        let mut summary = Vec::new();
        for (m, budget) in &methods {
            let name = m.method().name();
            for &angle in &cfg.angles {
                let group: Vec<&DriftRecord> = records
                    .iter()
                    .filter(|r| r.method == name && r.budget == *budget && r.angle == angle)
                    .collect();
                let rejections = group.iter().filter(|r| r.reject == Some(true)).count();
                summary.push(RejectionSummary {
                    method: name.to_string(),
                    budget: *budget,
                    angle,
                    trials: group.len(),
                    rejections,
                    rejection_rate: rejections as f64 / group.len().max(1) as f64,
                    median_p_value: median(group.iter().filter_map(|r| r.p_value).collect()),
                });
            }
        }
        Ok(DriftReport {
            n: cfg.n,
            k: cfg.k,
            alpha: cfg.alpha,
            resamples: cfg.resamples,
            records,
            summary,
        })
    })?
}

impl DriftReport {
    pub fn csv_rows(&self) -> Vec<DriftCsvRow> {
        self.records
            .iter()
            .map(|r| DriftCsvRow {
                method: r.method.clone(),
                budget: r.budget,
                angle: r.angle,
                trial: r.trial,
                observed: r.observed,
                p_value: r.p_value,
                reject: r.reject,
            })
            .collect()
    }

    pub fn summary_for(&self, method: &str, budget: Option<usize>, angle: f64) -> Option<&RejectionSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.budget == budget && s.angle == angle)
    }
}

/// Writes `drift.json` and `drift.csv` into `dir`.
pub fn write_drift(report: &DriftReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    write_report(dir, "drift", report, &report.csv_rows())
}
