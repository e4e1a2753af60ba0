#![allow(dead_code)]

use batchot::measures::{cost_matrix, partition_contiguous, EmpiricalMeasure, GroundCost};
use batchot::ot::solve_exact;
use batchot::upper::BatchProblem;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z + shift
    })
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0))
}

pub fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// min over permutations of (1/n) Σ c[i, π(i)]
pub fn brute_force(c: &Array2<f64>) -> f64 {
    let n = c.nrows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Two uniform Gaussian clouds with contiguous k-partitions.
pub fn instance(seed: u64, n: usize, d: usize, k: usize) -> BatchProblem {
    let mut r = rng(seed);
    let x = gaussian_points(&mut r, n, d, 0.0);
    let y = gaussian_points(&mut r, n, d, 0.7);
    problem(x, y, k)
}

pub fn problem(x: Array2<f64>, y: Array2<f64>, k: usize) -> BatchProblem {
    let x = EmpiricalMeasure::uniform(x).unwrap();
    let y = EmpiricalMeasure::uniform(y).unwrap();
    let px = partition_contiguous(&x, k).unwrap();
    let py = partition_contiguous(&y, k).unwrap();
    BatchProblem::new(x, y, px, py).unwrap()
}

pub fn full_cost(p: &BatchProblem) -> Array2<f64> {
    cost_matrix(p.x().points(), p.y().points(), GroundCost::Euclidean).unwrap()
}

pub fn exact_full(p: &BatchProblem) -> f64 {
    let c = full_cost(p);
    solve_exact(c.view(), p.x().weights().view(), p.y().weights().view()).unwrap().value
}
