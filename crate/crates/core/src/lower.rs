//! Dual lower bound built from diagonal batch duals and the meta dual.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::batch_matrix::{compute_k, DualTable};
use crate::error::{Error, Result};
use crate::ot::solve_exact;
use crate::upper::BatchProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub value: f64,
    pub feasibility_margin: f64,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    #[serde(skip)]
    pub k_matrix: Array2<f64>,
    /// Full-problem potentials f̃ in the original index order of X.
    #[serde(skip)]
    pub f_tilde: Array1<f64>,
    #[serde(skip)]
    pub g_tilde: Array1<f64>,
}

/// Solves all k² batch problems for their duals, forms K, solves the meta dual
/// and lifts it to potentials (f̃, g̃) feasible for the full problem.
pub fn dual_lower_bound(p: &BatchProblem) -> Result<LowerBoundReport> {
    if !p.kernel().is_exact() {
        return Err(Error::DualKind("the lower bound needs exact batch duals".into()));
    }
    let k = p.k();
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|s| (0..k).map(move |t| (s, t))).collect();
    let sols = p.solve_cells(&cells)?;
    let mut table = DualTable::new(k);
    let mut diag = vec![0.0; k];
    for (&(s, t), sol) in cells.iter().zip(&sols) {
        if s == t {
            diag[s] = sol.value;
        }
        table.insert(s, t, sol.duals.clone())?;
    }
    let kmat = compute_k(&table)?;
    let (a_t, b_t) = (p.a_tilde(), p.b_tilde());
    let meta = solve_exact(kmat.view(), a_t.view(), b_t.view())?;
    let (u, v) = (meta.duals.f, meta.duals.g);
    let value = u.dot(&a_t) + v.dot(&b_t) + a_t.iter().zip(&diag).map(|(a, d)| a * d).sum::<f64>();

    let mut f_tilde = Array1::zeros(p.x().len());
    for s in 0..k {
        let f = &table.get(s, s).expect("filled").f;
        for (local, &i) in p.partition_x().batch(s)?.iter().enumerate() {
            f_tilde[i] = f[local] + u[s];
        }
    }
    let mut g_tilde = Array1::zeros(p.y().len());
    for t in 0..k {
        let g = &table.get(t, t).expect("filled").g;
        for (local, &j) in p.partition_y().batch(t)?.iter().enumerate() {
            g_tilde[j] = g[local] + v[t];
        }
    }
    let feasibility_margin = margin_on_the_fly(p, f_tilde.view(), g_tilde.view());
    Ok(LowerBoundReport {
        value,
        feasibility_margin,
        u,
        v,
        k_matrix: kmat,
        f_tilde,
        g_tilde,
    })
}

// min_ij c(x_i, y_j) − f̃_i − g̃_j without materializing the N×M cost matrix
fn margin_on_the_fly(p: &BatchProblem, f: ArrayView1<f64>, g: ArrayView1<f64>) -> f64 {
    let (x, y, metric) = (p.x(), p.y(), p.metric());
    let rows: Vec<usize> = (0..x.len()).collect();
    p.execution()
        .map(&rows, |&i| {
            let xi = x.point(i);
            (0..y.len())
                .map(|j| metric.eval(xi, y.point(j)) - f[i] - g[j])
                .fold(f64::INFINITY, f64::min)
        })
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// min_ij (C_ij − f_i − g_j).
pub fn verify_dual_feasibility(f: ArrayView1<f64>, g: ArrayView1<f64>, c: ArrayView2<f64>) -> Result<f64> {
    if c.dim() != (f.len(), g.len()) {
        return Err(Error::Dimension(format!(
            "cost is {:?} but potentials have lengths {} and {}",
            c.dim(),
            f.len(),
            g.len()
        )));
    }
    Ok(c
        .indexed_iter()
        .map(|((i, j), &cij)| cij - f[i] - g[j])
        .fold(f64::INFINITY, f64::min))
}
