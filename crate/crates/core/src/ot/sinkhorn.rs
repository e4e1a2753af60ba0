//! Log-domain Sinkhorn iterations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_problem, DualKind, DualPotentials, OtSolution, SolverKind, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    10_000
}

impl SinkhornParams {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

struct Scalings {
    f: Array1<f64>,
    g: Array1<f64>,
    plan: Array2<f64>,
    iterations: usize,
}

fn is_symmetric(c: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> bool {
    let (n, m) = c.dim();
    n == m && a == b && (0..n).all(|i| (0..i).all(|j| c[(i, j)] == c[(j, i)]))
}

fn iterate(c: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>, p: &SinkhornParams) -> Result<Scalings> {
    p.validate()?;
    check_problem(c, a, b)?;
    let (n, m) = c.dim();
    let symmetric = is_symmetric(c, a, b);
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let mut plan = Array2::zeros((n, m));

    // epsilon-scaling: anneal from the cost scale down to the target, warm-starting potentials
    let scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut stages = Vec::new();
    let mut e = scale;
    while e > p.epsilon {
        stages.push(e);
        e *= 0.5;
    }
    stages.push(p.epsilon);

    let mut it = 0;
    let mut err = f64::INFINITY;
    for (stage, &eps) in stages.iter().enumerate() {
        let last = stage + 1 == stages.len();
        let (budget, target) = if last { (p.max_iter - it, p.tol) } else { (50.min(p.max_iter - it), 1e-3) };
        for _ in 0..budget {
            it += 1;
            if symmetric {
                let t: Vec<f64> = (0..n)
                    .map(|i| {
                        let row = c.row(i);
                        -eps * log_sum_exp((0..n).map(|j| log_a[j] + (f[j] - row[j]) / eps))
                    })
                    .collect();
                for i in 0..n {
                    f[i] = 0.5 * (f[i] + t[i]);
                }
                g.assign(&f);
            } else {
                for i in 0..n {
                    let row = c.row(i);
                    f[i] = -eps * log_sum_exp((0..m).map(|j| log_b[j] + (g[j] - row[j]) / eps));
                }
                for j in 0..m {
                    let col = c.column(j);
                    g[j] = -eps * log_sum_exp((0..n).map(|i| log_a[i] + (f[i] - col[i]) / eps));
                }
            }
            // after the g-update columns are exact; in the symmetric case rows and columns agree
            err = 0.0;
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..m {
                    let v = (log_a[i] + log_b[j] + (f[i] + g[j] - c[(i, j)]) / eps).exp();
                    plan[(i, j)] = v;
                    s += v;
                }
                err += (s - a[i]).abs();
            }
            if err <= target {
                break;
            }
        }
        if last && err <= p.tol {
            return Ok(Scalings {
                f,
                g,
                plan,
                iterations: it,
            });
        }
        if it >= p.max_iter {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: it,
        marginal_error: err,
    })
}

/// Entropic OT. The reported value is the linear cost ⟨C, P⟩ of the returned plan.
pub fn solve_sinkhorn(
    c: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    params: &SinkhornParams,
) -> Result<OtSolution> {
    let Scalings {
        mut f,
        g,
        plan,
        iterations,
    } = iterate(c, a, b, params)?;
    let value: f64 = c.iter().zip(plan.iter()).map(|(x, p)| x * p).sum();
    let shift = value - f.dot(&a) - g.dot(&b);
    f.mapv_inplace(|v| v + shift);
    Ok(OtSolution {
        value,
        plan: TransportPlan {
            entries: plan,
            row_marginal: a.to_owned(),
            col_marginal: b.to_owned(),
        },
        duals: DualPotentials {
            f,
            g,
            kind: DualKind::Entropic,
        },
        iterations,
        solver_kind: SolverKind::Sinkhorn,
    })
}

/// ⟨C,P⟩ + ε Σ P (log P − 1) at the Sinkhorn optimum.
fn entropic_objective(c: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>, p: &SinkhornParams) -> Result<f64> {
    let s = iterate(c, a, b, p)?;
    let mut total = 0.0;
    for (&x, &pij) in c.iter().zip(s.plan.iter()) {
        if pij > 0.0 {
            total += x * pij + p.epsilon * pij * (pij.ln() - 1.0);
        }
    }
    Ok(total)
}

/// OT_ε(α,β) − ½(OT_ε(α,α) + OT_ε(β,β)) with the entropic objective.
pub fn sinkhorn_divergence(
    cxy: ArrayView2<f64>,
    cxx: ArrayView2<f64>,
    cyy: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    params: &SinkhornParams,
) -> Result<f64> {
    let xy = entropic_objective(cxy, a, b, params)?;
    let xx = entropic_objective(cxx, a, a, params)?;
    let yy = entropic_objective(cyy, b, b, params)?;
    Ok(xy - 0.5 * (xx + yy))
}
