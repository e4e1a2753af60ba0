//! The k×k batch-to-batch cost matrix and the meta problem over batches.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, GroundCost};
use crate::ot::{solve_exact, solve_exact_masked, DualKind, DualPotentials, Kernel, OtSolution};

/// Matching weights below this are treated as absent when listing pairs.
const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchCostMatrix {
    values: Array2<f64>,
    solved: Array2<bool>,
}

impl BatchCostMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            values: Array2::from_elem((k, k), f64::NAN),
            solved: Array2::from_elem((k, k), false),
        }
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    fn check_index(&self, s: usize, t: usize) -> Result<()> {
        let k = self.k();
        if s >= k {
            return Err(Error::Index { index: s, len: k });
        }
        if t >= k {
            return Err(Error::Index { index: t, len: k });
        }
        Ok(())
    }

    pub fn is_solved(&self, s: usize, t: usize) -> bool {
        s < self.k() && t < self.k() && self.solved[(s, t)]
    }

    pub fn get(&self, s: usize, t: usize) -> Option<f64> {
        self.is_solved(s, t).then(|| self.values[(s, t)])
    }

    pub fn solved_count(&self) -> usize {
        self.solved.iter().filter(|&&b| b).count()
    }

    /// Raw values; unsolved cells hold NaN.
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.solved.view()
    }

    pub fn is_full(&self) -> bool {
        self.solved.iter().all(|&b| b)
    }

    /// Records an already computed entry.
    pub fn set(&mut self, s: usize, t: usize, value: f64) -> Result<()> {
        self.check_index(s, t)?;
        if self.solved[(s, t)] {
            return Err(Error::DoubleSolve { s, t });
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteInput(format!("batch cost ({s}, {t}) = {value}")));
        }
        self.values[(s, t)] = value;
        self.solved[(s, t)] = true;
        Ok(())
    }

    /// Solves the kernel between two normalized batch measures and stores the value.
    pub fn fill_entry(
        &mut self,
        s: usize,
        t: usize,
        xs: &EmpiricalMeasure,
        ys: &EmpiricalMeasure,
        kernel: &Kernel,
        metric: GroundCost,
    ) -> Result<OtSolution> {
        self.check_index(s, t)?;
        if self.solved[(s, t)] {
            return Err(Error::DoubleSolve { s, t });
        }
        let sol = kernel.solve(xs, ys, metric)?;
        self.set(s, t, sol.value)?;
        Ok(sol)
    }

    /// Builds a fully solved matrix from dense values.
    pub fn from_dense(values: ArrayView2<f64>) -> Result<Self> {
        let (k, m) = values.dim();
        if k != m {
            return Err(Error::Dimension(format!("batch matrix must be square, got {k}x{m}")));
        }
        let mut d = Self::new(k);
        for ((s, t), &v) in values.indexed_iter() {
            d.set(s, t, v)?;
        }
        Ok(d)
    }
}

#[derive(Serialize, Deserialize)]
struct BatchCostMatrixRepr {
    k: usize,
    values: Vec<Vec<Option<f64>>>,
    solved: Vec<Vec<bool>>,
}

impl Serialize for BatchCostMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let k = self.k();
        let repr = BatchCostMatrixRepr {
            k,
            values: (0..k).map(|s| (0..k).map(|t| self.get(s, t)).collect()).collect(),
            solved: (0..k).map(|s| (0..k).map(|t| self.solved[(s, t)]).collect()).collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BatchCostMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = BatchCostMatrixRepr::deserialize(deserializer)?;
        let k = repr.k;
        if repr.values.len() != k || repr.solved.len() != k {
            return Err(D::Error::custom("row count does not match k"));
        }
        let mut d = BatchCostMatrix::new(k);
        for s in 0..k {
            if repr.values[s].len() != k || repr.solved[s].len() != k {
                return Err(D::Error::custom(format!("row {s} has the wrong length")));
            }
            for t in 0..k {
                match (repr.solved[s][t], repr.values[s][t]) {
                    (true, Some(v)) => d.set(s, t, v).map_err(D::Error::custom)?,
                    (false, None) => {}
                    _ => return Err(D::Error::custom(format!("mask and value disagree at ({s}, {t})"))),
                }
            }
        }
        Ok(d)
    }
}

/// A coupling W between batches, with its support listed as pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMatching {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Array2<f64>,
}

impl BatchMatching {
    pub fn from_weights(weights: Array2<f64>) -> Self {
        let pairs = weights
            .indexed_iter()
            .filter(|(_, &w)| w > SUPPORT_TOL)
            .map(|(ix, _)| ix)
            .collect();
        Self { pairs, weights }
    }

    /// Uniform-weight matching along `perm` (row s matched to column perm[s]).
    pub fn from_permutation(perm: &[usize]) -> Self {
        let k = perm.len();
        let mut weights = Array2::zeros((k, k));
        for (s, &t) in perm.iter().enumerate() {
            weights[(s, t)] = 1.0 / k as f64;
        }
        Self::from_weights(weights)
    }

    pub fn diagonal(k: usize) -> Self {
        Self::from_permutation(&(0..k).collect::<Vec<_>>())
    }

    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    /// Column matched to each row when the matching is a permutation.
    pub fn as_permutation(&self) -> Option<Vec<usize>> {
        let k = self.k();
        if self.pairs.len() != k {
            return None;
        }
        let mut perm = vec![usize::MAX; k];
        let mut seen = vec![false; k];
        for &(s, t) in &self.pairs {
            if perm[s] != usize::MAX || seen[t] {
                return None;
            }
            perm[s] = t;
            seen[t] = true;
        }
        Some(perm)
    }

    /// ⟨W, D⟩ over the support; errors if the support touches an unsolved cell.
    pub fn cost(&self, d: &BatchCostMatrix) -> Result<f64> {
        let mut total = 0.0;
        for &(s, t) in &self.pairs {
            let v = d
                .get(s, t)
                .ok_or_else(|| Error::InfeasibleMask(format!("matching uses unsolved cell ({s}, {t})")))?;
            total += self.weights[(s, t)] * v;
        }
        Ok(total)
    }

    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        self.pairs.iter().map(|&(s, t)| (s, t, self.weights[(s, t)])).collect()
    }

    pub fn from_triples(k: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut weights = Array2::zeros((k, k));
        for &(s, t, w) in triples {
            if s >= k || t >= k {
                return Err(Error::Index { index: s.max(t), len: k });
            }
            weights[(s, t)] = w;
        }
        Ok(Self::from_weights(weights))
    }
}

/// min over W ∈ U(ã, b̃) of ⟨W, D⟩, restricted to solved cells.
pub fn solve_meta(d: &BatchCostMatrix, a_tilde: ArrayView1<f64>, b_tilde: ArrayView1<f64>) -> Result<(f64, BatchMatching)> {
    let k = d.k();
    if a_tilde.len() != k || b_tilde.len() != k {
        return Err(Error::Dimension(format!(
            "meta marginals have lengths {} and {}, matrix is {k}x{k}",
            a_tilde.len(),
            b_tilde.len()
        )));
    }
    let sol = if d.is_full() {
        solve_exact(d.values(), a_tilde, b_tilde)?
    } else {
        solve_exact_masked(d.values(), d.mask(), a_tilde, b_tilde)?
    };
    Ok((sol.value, BatchMatching::from_weights(sol.plan.entries)))
}

/// Exact dual pairs for all k² batch problems, indexed by (s, t).
#[derive(Debug, Clone)]
pub struct DualTable {
    k: usize,
    entries: Vec<Option<DualPotentials>>,
}

impl DualTable {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: vec![None; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn insert(&mut self, s: usize, t: usize, duals: DualPotentials) -> Result<()> {
        if s >= self.k || t >= self.k {
            return Err(Error::Index {
                index: s.max(t),
                len: self.k,
            });
        }
        self.entries[s * self.k + t] = Some(duals);
        Ok(())
    }

    pub fn get(&self, s: usize, t: usize) -> Option<&DualPotentials> {
        if s >= self.k || t >= self.k {
            return None;
        }
        self.entries[s * self.k + t].as_ref()
    }
}

/// K_st = min_j (g^st − g^tt)_j − max_i (f^ss − f^st)_i, with K_ss = 0.
pub fn compute_k(table: &DualTable) -> Result<Array2<f64>> {
    let k = table.k();
    let fetch = |s: usize, t: usize| -> Result<&DualPotentials> {
        let d = table.get(s, t).ok_or(Error::MissingDuals { s, t })?;
        if d.kind != DualKind::Exact {
            return Err(Error::DualKind(format!(
                "batch pair ({s}, {t}) carries {:?} potentials; exact duals are required",
                d.kind
            )));
        }
        Ok(d)
    };
    let mut out = Array2::zeros((k, k));
    for s in 0..k {
        for t in 0..k {
            let st = fetch(s, t)?;
            if s == t {
                continue;
            }
            let ss = fetch(s, s)?;
            let tt = fetch(t, t)?;
            if st.f.len() != ss.f.len() || st.g.len() != tt.g.len() {
                return Err(Error::Dimension(format!("dual lengths disagree for pair ({s}, {t})")));
            }
            let min_g = min_diff(st.g.view(), tt.g.view());
            let max_f = -min_diff(st.f.view(), ss.f.view());
            out[(s, t)] = min_g - max_f;
        }
    }
    Ok(out)
}

// min_i (x_i − y_i)
fn min_diff(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
}

/// Uniform k-vector 1/k.
pub fn uniform_mass(k: usize) -> Array1<f64> {
    Array1::from_elem(k, 1.0 / k as f64)
}
