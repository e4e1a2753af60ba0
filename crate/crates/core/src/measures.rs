//! Empirical measures, mini-batch partitions and ground costs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const UNIFORM_MASS_TOL: f64 = 1e-9;

/// Ground cost between two points of the same dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundCost {
    #[default]
    Euclidean,
    SquaredEuclidean,
    L1,
}

impl GroundCost {
    #[inline]
    pub fn eval(self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self {
            GroundCost::Euclidean => sq_dist(x, y).sqrt(),
            GroundCost::SquaredEuclidean => sq_dist(x, y),
            GroundCost::L1 => x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum(),
        }
    }
}

#[inline]
fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// A finitely supported probability measure: `N` points in `R^d` with strictly
/// positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::Dimension(format!(
                "a measure needs at least one point of positive dimension, got {n}x{d}"
            )));
        }
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {n} points",
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("support point coordinate".into()));
        }
        if let Some(i) = weights.iter().position(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is {} (weights must be strictly positive)",
                weights[i]
            )));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let weights = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn weights_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("weights are contiguous")
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() < 1e-15)
    }
}

/// `k` disjoint batches covering `0..N`, with their aggregated masses.
///
/// `batches[s][i]` is the global index of the `i`-th member of batch `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPartition {
    batches: Vec<Vec<usize>>,
    aggregated_mass: Vec<f64>,
    total: usize,
}

impl BatchPartition {
    /// Builds a partition from explicit index lists, validating that the lists
    /// are disjoint and cover every index of `measure`.
    pub fn from_batches(measure: &EmpiricalMeasure, batches: Vec<Vec<usize>>) -> Result<Self> {
        let n = measure.len();
        if batches.is_empty() {
            return Err(Error::InvalidPartition("no batches".into()));
        }
        let mut seen = vec![false; n];
        for (s, batch) in batches.iter().enumerate() {
            if batch.is_empty() {
                return Err(Error::InvalidPartition(format!("batch {s} is empty")));
            }
            for &i in batch {
                if i >= n {
                    return Err(Error::Index { index: i, len: n });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} appears in more than one batch"
                    )));
                }
            }
        }
        if let Some(i) = seen.iter().position(|&b| !b) {
            return Err(Error::InvalidPartition(format!("index {i} is not covered")));
        }
        let w = measure.weights();
        let aggregated_mass = batches
            .iter()
            .map(|b| b.iter().map(|&i| w[i]).sum())
            .collect();
        Ok(Self {
            batches,
            aggregated_mass,
            total: n,
        })
    }

    pub fn k(&self) -> usize {
        self.batches.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn batch(&self, s: usize) -> Result<&[usize]> {
        self.batches
            .get(s)
            .map(Vec::as_slice)
            .ok_or(Error::Index {
                index: s,
                len: self.batches.len(),
            })
    }

    /// Global index of the `i`-th element of batch `s`.
    pub fn sigma(&self, s: usize, i: usize) -> Result<usize> {
        let batch = self.batch(s)?;
        batch.get(i).copied().ok_or(Error::Index {
            index: i,
            len: batch.len(),
        })
    }

    pub fn aggregated_mass(&self) -> &[f64] {
        &self.aggregated_mass
    }

    /// Checks that every batch carries mass `1/k`.
    pub fn check_uniform_mass(&self) -> Result<()> {
        let target = 1.0 / self.k() as f64;
        match self
            .aggregated_mass
            .iter()
            .position(|m| (m - target).abs() > UNIFORM_MASS_TOL)
        {
            Some(s) => Err(Error::Assumption(format!(
                "batch {s} has mass {} but 1/k = {target}",
                self.aggregated_mass[s]
            ))),
            None => Ok(()),
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidPartition("k must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidPartition(format!(
            "k = {k} exceeds the number of samples {n}"
        )));
    }
    Ok(())
}

fn contiguous_from_order(measure: &EmpiricalMeasure, order: &[usize], k: usize) -> Result<BatchPartition> {
    let size = order.len() / k;
    let batches = order.chunks(size).map(<[usize]>::to_vec).collect();
    BatchPartition::from_batches(measure, batches)
}

/// Splits `0..N` into `k` contiguous batches of size `N / k`.
pub fn partition_contiguous(measure: &EmpiricalMeasure, k: usize) -> Result<BatchPartition> {
    let n = measure.len();
    check_k(n, k)?;
    if !n.is_multiple_of(k) {
        return Err(Error::InvalidPartition(format!("k = {k} does not divide N = {n}")));
    }
    let order: Vec<usize> = (0..n).collect();
    contiguous_from_order(measure, &order, k)
}

/// Seeded uniform shuffle of `0..N`, then split contiguously.
pub fn partition_shuffled(measure: &EmpiricalMeasure, k: usize, seed: u64) -> Result<BatchPartition> {
    let n = measure.len();
    check_k(n, k)?;
    if !n.is_multiple_of(k) {
        return Err(Error::InvalidPartition(format!("k = {k} does not divide N = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    contiguous_from_order(measure, &order, k)
}

/// Lenient variant of [`partition_contiguous`]: when `k` does not divide `N`
/// the trailing `N mod k` samples are dropped and the remaining weights are
/// renormalised. Returns the (possibly truncated) measure with its partition.
pub fn partition_contiguous_lenient(
    measure: &EmpiricalMeasure,
    k: usize,
) -> Result<(EmpiricalMeasure, BatchPartition)> {
    let n = measure.len();
    check_k(n, k)?;
    let keep = n - n % k;
    if keep == n {
        return Ok((measure.clone(), partition_contiguous(measure, k)?));
    }
    log::warn!("dropping {} trailing samples so that k = {k} divides N", n - keep);
    let points = measure.points().slice(ndarray::s![..keep, ..]).to_owned();
    let mut weights = measure.weights().slice(ndarray::s![..keep]).to_owned();
    let total = weights.sum();
    weights.mapv_inplace(|w| w / total);
    // rescaling can leave the sum a few ulps away from one
    let drift = 1.0 - weights.sum();
    weights[0] += drift;
    let truncated = EmpiricalMeasure::new(points, weights)?;
    let partition = partition_contiguous(&truncated, k)?;
    Ok((truncated, partition))
}

/// Pairwise ground-cost matrix `C[i, j] = c(xs[i], ys[j])`.
pub fn cost_matrix(xs: ArrayView2<f64>, ys: ArrayView2<f64>, cost: GroundCost) -> Result<Array2<f64>> {
    if xs.ncols() != ys.ncols() {
        return Err(Error::Dimension(format!(
            "points of dimension {} vs {}",
            xs.ncols(),
            ys.ncols()
        )));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("coordinate in cost matrix input".into()));
    }
    Ok(cost_matrix_unchecked(xs, ys, cost))
}

pub(crate) fn cost_matrix_unchecked(xs: ArrayView2<f64>, ys: ArrayView2<f64>, cost: GroundCost) -> Array2<f64> {
    let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
    for (i, x) in xs.outer_iter().enumerate() {
        for (j, y) in ys.outer_iter().enumerate() {
            out[[i, j]] = cost.eval(x, y);
        }
    }
    out
}

/// The normalised batch measure `alpha^s` with weights `a_{sigma(i,s)} / ã_s`.
pub fn normalized_batch_measure(
    measure: &EmpiricalMeasure,
    partition: &BatchPartition,
    s: usize,
) -> Result<EmpiricalMeasure> {
    let batch = partition.batch(s)?;
    if partition.total() != measure.len() {
        return Err(Error::Dimension(format!(
            "partition covers {} samples, measure has {}",
            partition.total(),
            measure.len()
        )));
    }
    let points = measure.points().select(Axis(0), batch);
    let mass = partition.aggregated_mass()[s];
    let weights: Array1<f64> = batch.iter().map(|&i| measure.weights()[i] / mass).collect();
    EmpiricalMeasure::new(points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn line(n: usize) -> EmpiricalMeasure {
        let pts = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        EmpiricalMeasure::uniform(pts).unwrap()
    }

    #[test]
    fn contiguous_six_into_three() {
        let p = partition_contiguous(&line(6), 3).unwrap();
        assert_eq!(p.batches(), &[vec![0, 1], vec![2, 3], vec![4, 5]]);
        for m in p.aggregated_mass() {
            assert_abs_diff_eq!(*m, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(p.sigma(2, 1).unwrap(), 5);
        p.check_uniform_mass().unwrap();
    }

    #[test]
    fn single_batch_is_identity() {
        let p = partition_contiguous(&line(4), 1).unwrap();
        assert_eq!(p.batches(), &[vec![0, 1, 2, 3]]);
        assert_abs_diff_eq!(p.aggregated_mass()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn non_divisible_is_rejected() {
        assert!(matches!(
            partition_contiguous(&line(6), 4),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            partition_contiguous(&line(3), 4),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn lenient_drops_tail_and_renormalises() {
        let (m, p) = partition_contiguous_lenient(&line(7), 3).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(p.k(), 3);
        assert_abs_diff_eq!(m.weights().sum(), 1.0, epsilon = 1e-12);
        p.check_uniform_mass().unwrap();
    }

    #[test]
    fn shuffled_is_deterministic_and_a_partition() {
        let m = line(4);
        let a = partition_shuffled(&m, 2, 11).unwrap();
        let b = partition_shuffled(&m, 2, 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.batches().concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(a.batches().iter().all(|b| b.len() == 2));
    }

    #[test]
    fn shuffled_varies_with_seed() {
        let m = line(6);
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..10 {
            distinct.insert(partition_shuffled(&m, 3, seed).unwrap().batches().to_vec());
        }
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn cost_matrix_examples() {
        let xs = array![[0.0], [1.0]];
        let c = cost_matrix(xs.view(), xs.view(), GroundCost::Euclidean).unwrap();
        assert_eq!(c, array![[0.0, 1.0], [1.0, 0.0]]);

        let c = cost_matrix(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view(), GroundCost::Euclidean).unwrap();
        assert_abs_diff_eq!(c[[0, 0]], 5.0, epsilon = 1e-15);

        let c = cost_matrix(array![[0.0], [2.0]].view(), array![[1.0]].view(), GroundCost::SquaredEuclidean).unwrap();
        assert_eq!(c, array![[1.0], [1.0]]);

        let c = cost_matrix(array![[0.0, 0.0]].view(), array![[3.0, -4.0]].view(), GroundCost::L1).unwrap();
        assert_eq!(c[[0, 0]], 7.0);
    }

    #[test]
    fn cost_matrix_errors() {
        let a = array![[0.0, 1.0]];
        let b = array![[0.0]];
        assert!(matches!(cost_matrix(a.view(), b.view(), GroundCost::L1), Err(Error::Dimension(_))));
        let nan = array![[f64::NAN, 1.0]];
        assert!(matches!(
            cost_matrix(nan.view(), a.view(), GroundCost::L1),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn measure_validation() {
        let pts = array![[0.0], [1.0]];
        assert!(EmpiricalMeasure::new(pts.clone(), array![0.5, 0.5]).is_ok());
        assert!(matches!(
            EmpiricalMeasure::new(pts.clone(), array![1.0, 0.0]),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            EmpiricalMeasure::new(pts.clone(), array![0.5, 0.6]),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            EmpiricalMeasure::new(Array2::zeros((0, 1)), Array1::zeros(0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn normalized_batch_weights() {
        let pts = array![[0.0], [1.0], [2.0], [3.0]];
        let m = EmpiricalMeasure::new(pts, array![0.1, 0.3, 0.2, 0.4]).unwrap();
        let p = partition_contiguous(&m, 2).unwrap();
        let b0 = normalized_batch_measure(&m, &p, 0).unwrap();
        assert_abs_diff_eq!(b0.weights()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b0.weights()[1], 0.75, epsilon = 1e-12);
        assert!(matches!(normalized_batch_measure(&m, &p, 2), Err(Error::Index { .. })));

        let u = line(6);
        let p = partition_contiguous(&u, 3).unwrap();
        let b = normalized_batch_measure(&u, &p, 1).unwrap();
        assert!(b.weights().iter().all(|&w| (w - 0.5).abs() < 1e-15));
        let whole = normalized_batch_measure(&u, &partition_contiguous(&u, 1).unwrap(), 0).unwrap();
        assert_eq!(whole.points(), u.points());
        assert!(whole.weights().iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-15));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partitions_cover_and_sum_to_one(
                batch in 1usize..6, k in 1usize..6, seed in any::<u64>(),
                raw in proptest::collection::vec(0.05f64..1.0, 36)
            ) {
                let n = batch * k;
                let w: Array1<f64> = raw[..n].iter().copied().collect();
                let w = &w / w.sum();
                let pts = Array2::from_shape_fn((n, 2), |(i, j)| (i * 3 + j) as f64);
                let m = EmpiricalMeasure::new(pts, w);
                prop_assume!(m.is_ok());
                let m = m.unwrap();
                for p in [partition_contiguous(&m, k).unwrap(), partition_shuffled(&m, k, seed).unwrap()] {
                    let mut all: Vec<usize> = p.batches().concat();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                    let total: f64 = p.aggregated_mass().iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn uniform_mass_under_divisibility(batch in 1usize..8, k in 1usize..8) {
                let n = batch * k;
                let pts = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
                let m = EmpiricalMeasure::uniform(pts).unwrap();
                let p = partition_contiguous(&m, k).unwrap();
                for a in p.aggregated_mass() {
                    prop_assert!((a - 1.0 / k as f64).abs() < 1e-12);
                }
            }

            #[test]
            fn self_cost_is_symmetric_with_zero_diagonal(
                coords in proptest::collection::vec(-5.0f64..5.0, 2..24)
            ) {
                let n = coords.len() / 2;
                prop_assume!(n >= 1);
                let pts = Array2::from_shape_vec((n, 2), coords[..2 * n].to_vec()).unwrap();
                for metric in [GroundCost::Euclidean, GroundCost::SquaredEuclidean, GroundCost::L1] {
                    let c = cost_matrix(pts.view(), pts.view(), metric).unwrap();
                    for i in 0..n {
                        prop_assert_eq!(c[[i, i]], 0.0);
                        for j in 0..n {
                            prop_assert_eq!(c[[i, j]], c[[j, i]]);
                            prop_assert!(c[[i, j]] >= 0.0);
                        }
                    }
                }
            }
        }
    }
}
