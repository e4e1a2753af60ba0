//! Upper bounds on the full OT cost assembled from batch-to-batch solves.

mod proxy;
mod strategies;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array1;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::batch_matrix::{BatchCostMatrix, BatchMatching};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measures::{normalized_batch_measure, BatchPartition, EmpiricalMeasure, GroundCost};
use crate::ot::{Kernel, OtSolution};

pub use proxy::{bures_wasserstein_squared, bures_wasserstein_squared_dense, proxy_bound, proxy_matrix, Proxy};
pub use strategies::{
    assemble_full_plan, bhot, bhot_with_plans, greedy_allocation, greedy_matching, greedy_matching_with,
    missing_costs, missing_costs_with, missing_greedy, naive_average, BaseCover, RowOrder, SubPlans,
};

/// Two partitioned measures plus the kernel used for every batch-to-batch solve.
///
/// Every batch solve goes through [`BatchProblem::solve_cells`], which counts it.
#[derive(Debug)]
pub struct BatchProblem {
    x: EmpiricalMeasure,
    y: EmpiricalMeasure,
    px: BatchPartition,
    py: BatchPartition,
    xb: Vec<EmpiricalMeasure>,
    yb: Vec<EmpiricalMeasure>,
    kernel: Kernel,
    metric: GroundCost,
    exec: Execution,
    solves: AtomicUsize,
}

impl BatchProblem {
    /// Checks both partitions for uniform batch mass and equal batch counts.
    pub fn new(x: EmpiricalMeasure, y: EmpiricalMeasure, px: BatchPartition, py: BatchPartition) -> Result<Self> {
        if px.total() != x.len() || py.total() != y.len() {
            return Err(Error::Dimension("partition does not match its measure".into()));
        }
        if px.k() != py.k() {
            return Err(Error::InvalidPartition(format!(
                "X has {} batches but Y has {}",
                px.k(),
                py.k()
            )));
        }
        if x.dim() != y.dim() {
            return Err(Error::Dimension(format!("point dimensions {} and {}", x.dim(), y.dim())));
        }
        px.check_uniform_mass()?;
        py.check_uniform_mass()?;
        let xb = (0..px.k())
            .map(|s| normalized_batch_measure(&x, &px, s))
            .collect::<Result<Vec<_>>>()?;
        let yb = (0..py.k())
            .map(|t| normalized_batch_measure(&y, &py, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x,
            y,
            px,
            py,
            xb,
            yb,
            kernel: Kernel::Exact,
            metric: GroundCost::default(),
            exec: Execution::default(),
            solves: AtomicUsize::new(0),
        })
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_metric(mut self, metric: GroundCost) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn k(&self) -> usize {
        self.px.k()
    }

    pub fn x(&self) -> &EmpiricalMeasure {
        &self.x
    }

    pub fn y(&self) -> &EmpiricalMeasure {
        &self.y
    }

    pub fn partition_x(&self) -> &BatchPartition {
        &self.px
    }

    pub fn partition_y(&self) -> &BatchPartition {
        &self.py
    }

    pub fn batch_x(&self, s: usize) -> &EmpiricalMeasure {
        &self.xb[s]
    }

    pub fn batch_y(&self, t: usize) -> &EmpiricalMeasure {
        &self.yb[t]
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn metric(&self) -> GroundCost {
        self.metric
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn a_tilde(&self) -> Array1<f64> {
        Array1::from(self.px.aggregated_mass().to_vec())
    }

    pub fn b_tilde(&self) -> Array1<f64> {
        Array1::from(self.py.aggregated_mass().to_vec())
    }

    /// Number of batch-to-batch solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn reset_solve_count(&self) {
        self.solves.store(0, Ordering::Relaxed);
    }

    /// Solves the listed batch pairs, concurrently under a parallel policy.
    pub fn solve_cells(&self, cells: &[(usize, usize)]) -> Result<Vec<OtSolution>> {
        let k = self.k();
        for &(s, t) in cells {
            if s >= k || t >= k {
                return Err(Error::Index { index: s.max(t), len: k });
            }
        }
        self.exec.try_map(cells, |&(s, t)| {
            self.solves.fetch_add(1, Ordering::Relaxed);
            self.kernel.solve(&self.xb[s], &self.yb[t], self.metric)
        })
    }

    /// Solves `cells` and records them in `d`. Rejects cells that are already
    /// solved or repeated before doing any work.
    pub fn fill(&self, d: &mut BatchCostMatrix, cells: &[(usize, usize)]) -> Result<Vec<OtSolution>> {
        let mut seen = std::collections::HashSet::with_capacity(cells.len());
        for &(s, t) in cells {
            if d.is_solved(s, t) || !seen.insert((s, t)) {
                return Err(Error::DoubleSolve { s, t });
            }
        }
        let sols = self.solve_cells(cells)?;
        for (&(s, t), sol) in cells.iter().zip(&sols) {
            d.set(s, t, sol.value)?;
        }
        Ok(sols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Bhot,
    Greedy,
    Missing,
    MissingGreedy,
    Tree,
    Star,
    ProxyMeans,
    ProxyAvgDist,
    ProxyBures,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Naive,
        Method::Bhot,
        Method::Greedy,
        Method::Missing,
        Method::MissingGreedy,
        Method::Tree,
        Method::Star,
        Method::ProxyMeans,
        Method::ProxyAvgDist,
        Method::ProxyBures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Bhot => "bhot",
            Method::Greedy => "greedy",
            Method::Missing => "missing",
            Method::MissingGreedy => "missing_greedy",
            Method::Tree => "tree",
            Method::Star => "star",
            Method::ProxyMeans => "proxy_means",
            Method::ProxyAvgDist => "proxy_avg_dist",
            Method::ProxyBures => "proxy_bures",
        }
    }

    /// Whether the method takes a budget B in [k, k²].
    pub fn is_budgeted(self) -> bool {
        matches!(self, Method::Greedy | Method::Missing | Method::MissingGreedy | Method::Tree)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Number of batch solves a method may spend, k ≤ B ≤ k².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget(usize);

impl Budget {
    pub fn new(b: usize, k: usize) -> Result<Self> {
        if b < k || b > k * k {
            return Err(Error::Budget(format!("budget {b} outside [{k}, {}]", k * k)));
        }
        Ok(Self(b))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub method: Method,
    pub value: f64,
    pub budget_used: usize,
    pub wall_time_ms: f64,
    pub matching: BatchMatching,
}

#[derive(Serialize, Deserialize)]
struct BoundReportRepr {
    method: Method,
    value: f64,
    budget_used: usize,
    wall_time_ms: f64,
    matching: Vec<(usize, usize, f64)>,
    k: usize,
}

impl Serialize for BoundReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BoundReportRepr {
            method: self.method,
            value: self.value,
            budget_used: self.budget_used,
            wall_time_ms: self.wall_time_ms,
            matching: self.matching.triples(),
            k: self.matching.k(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundReport {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = BoundReportRepr::deserialize(deserializer)?;
        let matching = BatchMatching::from_triples(r.k, &r.matching).map_err(D::Error::custom)?;
        Ok(BoundReport {
            method: r.method,
            value: r.value,
            budget_used: r.budget_used,
            wall_time_ms: r.wall_time_ms,
            matching,
        })
    }
}

pub(crate) struct Stopwatch(std::time::Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self(std::time::Instant::now())
    }

    pub(crate) fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}
