//! Exact and entropic discrete OT solvers.

mod network_simplex;
mod sinkhorn;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{cost_matrix_unchecked, EmpiricalMeasure, GroundCost};

pub use sinkhorn::{sinkhorn_divergence, solve_sinkhorn, SinkhornParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
}

impl TransportPlan {
    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    /// Largest L1 deviation of the row or column sums from the prescribed marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows: f64 = self
            .entries
            .rows()
            .into_iter()
            .zip(self.row_marginal.iter())
            .map(|(r, a)| (r.sum() - a).abs())
            .sum();
        let cols: f64 = self
            .entries
            .columns()
            .into_iter()
            .zip(self.col_marginal.iter())
            .map(|(c, b)| (c.sum() - b).abs())
            .sum();
        rows.max(cols)
    }
}

/// Whether potentials come from an exact LP solve or from Sinkhorn scalings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualKind {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub kind: DualKind,
}

impl DualPotentials {
    pub fn objective(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        self.f.dot(&a) + self.g.dot(&b)
    }

    /// min over (i,j) of C_ij - f_i - g_j; nonnegative iff the pair is feasible.
    pub fn feasibility_margin(&self, c: ArrayView2<f64>) -> f64 {
        let mut margin = f64::INFINITY;
        for ((i, j), &cij) in c.indexed_iter() {
            margin = margin.min(cij - self.f[i] - self.g[j]);
        }
        margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Exact,
    Sinkhorn,
    SinkhornDivergence,
}

#[derive(Debug, Clone)]
pub struct OtSolution {
    pub value: f64,
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub iterations: usize,
    pub solver_kind: SolverKind,
}

pub(crate) fn check_problem(c: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    let (n, m) = c.dim();
    if n == 0 || m == 0 {
        return Err(Error::Dimension("empty cost matrix".into()));
    }
    if a.len() != n || b.len() != m {
        return Err(Error::Dimension(format!(
            "cost matrix is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("cost matrix".into()));
    }
    check_marginal("a", a)?;
    check_marginal("b", b)?;
    Ok(())
}

fn check_marginal(name: &str, w: ArrayView1<f64>) -> Result<()> {
    if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::InvalidWeights(format!("marginal {name} must be strictly positive")));
    }
    let s = w.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("marginal {name} sums to {s}")));
    }
    Ok(())
}

/// Exact OT by network simplex.
pub fn solve_exact(c: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<OtSolution> {
    check_problem(c, a, b)?;
    let (n, m) = c.dim();
    let arcs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let costs: Vec<f64> = c.iter().copied().collect();
    run_simplex(c, a, b, &arcs, &costs)
}

/// Exact OT restricted to the cells where `mask` is true. Raises
/// [`Error::InfeasibleMask`] when no plan in U(a, b) fits on the mask.
pub fn solve_exact_masked(
    c: ArrayView2<f64>,
    mask: ArrayView2<bool>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> Result<OtSolution> {
    if mask.dim() != c.dim() {
        return Err(Error::Dimension(format!(
            "mask is {:?} but cost is {:?}",
            mask.dim(),
            c.dim()
        )));
    }
    let (n, m) = c.dim();
    let mut arcs = Vec::new();
    let mut costs = Vec::new();
    let mut masked = c.to_owned();
    for ((i, j), &on) in mask.indexed_iter() {
        if on {
            arcs.push((i, j));
            costs.push(c[(i, j)]);
        } else {
            // unsolved cells may hold placeholders; they must not trip the finiteness check
            masked[(i, j)] = 0.0;
        }
    }
    check_problem(masked.view(), a, b)?;
    for i in 0..n {
        if !(0..m).any(|j| mask[(i, j)]) {
            return Err(Error::InfeasibleMask(format!("row {i} has no admissible cell")));
        }
    }
    for j in 0..m {
        if !(0..n).any(|i| mask[(i, j)]) {
            return Err(Error::InfeasibleMask(format!("column {j} has no admissible cell")));
        }
    }
    run_simplex(masked.view(), a, b, &arcs, &costs)
}

fn run_simplex(
    c: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    arcs: &[(usize, usize)],
    costs: &[f64],
) -> Result<OtSolution> {
    let (n, m) = c.dim();
    let supply = a.to_vec();
    let demand = b.to_vec();
    let problem = network_simplex::Transport {
        n,
        m,
        arcs,
        costs,
        supply: &supply,
        demand: &demand,
    };
    let cap = 50 * n * m;
    let out = match network_simplex::solve(&problem, cap) {
        Ok(out) => out,
        Err(network_simplex::SimplexFailure::Stalled { iterations }) => {
            return Err(Error::SolverStalled {
                iterations,
                detail: format!("{n}x{m} problem with {} arcs, cap {cap}", arcs.len()),
            })
        }
        Err(network_simplex::SimplexFailure::Infeasible { residual }) => {
            return Err(Error::InfeasibleMask(format!(
                "mass {residual:.3e} cannot be routed over the admissible cells"
            )))
        }
    };

    let mut entries = Array2::zeros((n, m));
    let mut value = 0.0;
    for ((&(i, j), &fl), &cost) in arcs.iter().zip(&out.flows).zip(costs) {
        entries[(i, j)] = fl;
        value += fl * cost;
    }
    // potentials are defined up to a constant; pin f_0 = 0
    let shift = out.f[0];
    let f = Array1::from_iter(out.f.iter().map(|v| v - shift));
    let g = Array1::from_iter(out.g.iter().map(|v| v + shift));
    Ok(OtSolution {
        value,
        plan: TransportPlan {
            entries,
            row_marginal: a.to_owned(),
            col_marginal: b.to_owned(),
        },
        duals: DualPotentials {
            f,
            g,
            kind: DualKind::Exact,
        },
        iterations: out.iterations,
        solver_kind: SolverKind::Exact,
    })
}

/// ⟨C, P⟩.
pub fn evaluate_plan(c: ArrayView2<f64>, plan: &TransportPlan) -> Result<f64> {
    if c.dim() != plan.entries.dim() {
        return Err(Error::Dimension(format!(
            "cost is {:?} but plan is {:?}",
            c.dim(),
            plan.entries.dim()
        )));
    }
    Ok(c.iter().zip(plan.entries.iter()).map(|(x, p)| x * p).sum())
}

/// Which OT functional is used for the batch-to-batch entries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Exact,
    Sinkhorn(SinkhornParams),
    SinkhornDivergence(SinkhornParams),
}

impl Kernel {
    /// Solves the kernel between two measures under the given ground cost.
    pub fn solve(&self, x: &EmpiricalMeasure, y: &EmpiricalMeasure, metric: GroundCost) -> Result<OtSolution> {
        if x.dim() != y.dim() {
            return Err(Error::Dimension(format!("point dimensions {} and {}", x.dim(), y.dim())));
        }
        let cxy = cost_matrix_unchecked(x.points(), y.points(), metric);
        let (a, b) = (x.weights().view(), y.weights().view());
        match *self {
            Kernel::Exact => solve_exact(cxy.view(), a, b),
            Kernel::Sinkhorn(p) => solve_sinkhorn(cxy.view(), a, b, &p),
            Kernel::SinkhornDivergence(p) => {
                let cxx = cost_matrix_unchecked(x.points(), x.points(), metric);
                let cyy = cost_matrix_unchecked(y.points(), y.points(), metric);
                let mut sol = solve_sinkhorn(cxy.view(), a, b, &p)?;
                sol.value = sinkhorn_divergence(cxy.view(), cxx.view(), cyy.view(), a, b, &p)?;
                sol.solver_kind = SolverKind::SinkhornDivergence;
                Ok(sol)
            }
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Kernel::Exact)
    }
}
