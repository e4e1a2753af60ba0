use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{BatchProblem, BoundReport, Method, Stopwatch};
use crate::batch_matrix::{solve_meta, BatchCostMatrix};
use crate::error::{Error, Result};
use crate::measures::{cost_matrix_unchecked, EmpiricalMeasure};

/// Cheap batch-to-batch dissimilarity used to pick the matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proxy {
    Means,
    AvgDist,
    Bures,
}

impl Proxy {
    pub fn method(self) -> Method {
        match self {
            Proxy::Means => Method::ProxyMeans,
            Proxy::AvgDist => Method::ProxyAvgDist,
            Proxy::Bures => Method::ProxyBures,
        }
    }
}

fn weighted_mean(m: &EmpiricalMeasure) -> Array1<f64> {
    m.points().t().dot(m.weights())
}

/// Rows (x_i − μ)·sqrt(w_i), so that XcᵀXc is the biased covariance.
fn centered_scaled(m: &EmpiricalMeasure, mu: &Array1<f64>) -> Array2<f64> {
    let mut xc = m.points().to_owned();
    for (mut row, &w) in xc.axis_iter_mut(Axis(0)).zip(m.weights().iter()) {
        row -= mu;
        row *= w.sqrt();
    }
    xc
}

fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn sym_sqrt_trace(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

/// ‖μ_α − μ_β‖² + tr(Σ_α + Σ_β − 2(Σ_α^{1/2} Σ_β Σ_α^{1/2})^{1/2}) with biased covariances.
///
/// The cross term is the nuclear norm of Yc·Xcᵀ, so only an n×n (or m×m)
/// eigenproblem is needed regardless of the ambient dimension.
pub fn bures_wasserstein_squared(x: &EmpiricalMeasure, y: &EmpiricalMeasure) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("point dimensions {} and {}", x.dim(), y.dim())));
    }
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::DegenerateCovariance(format!(
            "batch sizes {} and {}; covariance needs at least 2 points",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (weighted_mean(x), weighted_mean(y));
    let (xc, yc) = (centered_scaled(x, &mx), centered_scaled(y, &my));
    let mean_term: f64 = (&mx - &my).mapv(|v| v * v).sum();
    let tr_x: f64 = xc.mapv(|v| v * v).sum();
    let tr_y: f64 = yc.mapv(|v| v * v).sum();
    let g = yc.dot(&xc.t());
    let gram = if g.nrows() >= g.ncols() { g.t().dot(&g) } else { g.dot(&g.t()) };
    let cross = sym_sqrt_trace(to_dmatrix(gram.view()));
    Ok((mean_term + tr_x + tr_y - 2.0 * cross).max(0.0))
}

fn sym_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Bures–Wasserstein² from explicit means and d×d covariances.
pub fn bures_wasserstein_squared_dense(
    mu_a: ArrayView1<f64>,
    cov_a: ArrayView2<f64>,
    mu_b: ArrayView1<f64>,
    cov_b: ArrayView2<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.dim() != (d, d) || cov_b.dim() != (d, d) {
        return Err(Error::Dimension("means and covariances disagree in dimension".into()));
    }
    let a = to_dmatrix(cov_a);
    let b = to_dmatrix(cov_b);
    let ra = sym_sqrt(a.clone());
    let mid = &ra * b.clone() * &ra;
    let mid = (&mid + mid.transpose()) * 0.5;
    let cross = sym_sqrt_trace(mid);
    let mean_term: f64 = mu_a.iter().zip(mu_b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((mean_term + a.trace() + b.trace() - 2.0 * cross).max(0.0))
}

fn proxy_value(proxy: Proxy, p: &BatchProblem, s: usize, t: usize) -> Result<f64> {
    let (x, y) = (p.batch_x(s), p.batch_y(t));
    match proxy {
        Proxy::Means => {
            let diff = weighted_mean(x) - weighted_mean(y);
            Ok(diff.mapv(|v| v * v).sum().sqrt())
        }
        Proxy::AvgDist => {
            let c = cost_matrix_unchecked(x.points(), y.points(), p.metric());
            Ok(x.weights().dot(&c.dot(y.weights())))
        }
        Proxy::Bures => bures_wasserstein_squared(x, y),
    }
}

/// The k×k proxy matrix D̃.
pub fn proxy_matrix(p: &BatchProblem, proxy: Proxy) -> Result<Array2<f64>> {
    let k = p.k();
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|s| (0..k).map(move |t| (s, t))).collect();
    let vals = p.execution().try_map(&cells, |&(s, t)| proxy_value(proxy, p, s, t))?;
    Ok(Array2::from_shape_vec((k, k), vals).expect("k*k values"))
}

/// Matches batches by the meta problem on D̃, then solves only the k matched pairs.
pub fn proxy_bound(p: &BatchProblem, proxy: Proxy) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let dt = BatchCostMatrix::from_dense(proxy_matrix(p, proxy)?.view())?;
    let (_, proxy_matching) = solve_meta(&dt, p.a_tilde().view(), p.b_tilde().view())?;
    let perm = proxy_matching
        .as_permutation()
        .ok_or_else(|| Error::InfeasibleMask("proxy meta problem returned a non-permutation".into()))?;
    let cells: Vec<_> = perm.iter().enumerate().map(|(s, &t)| (s, t)).collect();
    let mut d = BatchCostMatrix::new(k);
    p.fill(&mut d, &cells)?;
    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    Ok(BoundReport {
        method: proxy.method(),
        value,
        budget_used: k,
        wall_time_ms: clock.ms(),
        matching,
    })
}
