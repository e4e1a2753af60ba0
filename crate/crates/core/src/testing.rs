//! Permutation two-sample test with a bound as the statistic.

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measures::{partition_contiguous, EmpiricalMeasure, GroundCost};
use crate::methods::MethodConfig;
use crate::ot::Kernel;
use crate::upper::BatchProblem;

/// A bound method evaluated on contiguous k-batch partitions of both samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub method: MethodConfig,
    pub k: usize,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub metric: GroundCost,
}

impl Statistic {
    pub fn evaluate(&self, x: &EmpiricalMeasure, y: &EmpiricalMeasure, seed: u64, exec: Execution) -> Result<f64> {
        let px = partition_contiguous(x, self.k)?;
        let py = partition_contiguous(y, self.k)?;
        let p = BatchProblem::new(x.clone(), y.clone(), px, py)?
            .with_kernel(self.kernel)
            .with_metric(self.metric)
            .with_execution(exec);
        Ok(self.method.run(&p, seed)?.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub observed: f64,
    pub p_value: f64,
    #[serde(rename = "resamples")]
    pub resample_statistics: Vec<f64>,
}

/// (1 + #{T_r ≥ T_obs}) / (1 + R).
pub fn p_value(observed: f64, resamples: &[f64]) -> f64 {
    let hits = resamples.iter().filter(|&&t| t >= observed).count();
    (1 + hits) as f64 / (1 + resamples.len()) as f64
}

fn resample_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

pub fn permutation_test(
    x: &EmpiricalMeasure,
    y: &EmpiricalMeasure,
    statistic: &Statistic,
    resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PermutationTestResult> {
    permutation_test_with(x, y, |a, b, s| statistic.evaluate(a, b, s, Execution::Sequential), resamples, seed, exec)
}

/// One-sided ("greater") permutation test for an arbitrary statistic
/// `stat(x, y, seed)`. Each resample pools both samples, shuffles with its own
/// stream derived from `seed`, and splits the pool in half.
pub fn permutation_test_with<F>(
    x: &EmpiricalMeasure,
    y: &EmpiricalMeasure,
    stat: F,
    resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PermutationTestResult>
where
    F: Fn(&EmpiricalMeasure, &EmpiricalMeasure, u64) -> Result<f64> + Sync + Send,
{
    let n = x.len();
    if n != y.len() {
        return Err(Error::UnequalSamples { n, m: y.len() });
    }
    if resamples == 0 {
        return Err(Error::Config("at least one resample is required".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("point dimensions {} and {}", x.dim(), y.dim())));
    }
    let observed = stat(x, y, seed)?;
    let pooled = concatenate(Axis(0), &[x.points(), y.points()]).expect("checked dimensions");
    let ids: Vec<usize> = (0..resamples).collect();
    let stats = exec.try_map(&ids, |&r| {
        let mut rng = resample_rng(seed, r);
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.shuffle(&mut rng);
        let xa = EmpiricalMeasure::uniform(pooled.select(Axis(0), &order[..n]))?;
        let ya = EmpiricalMeasure::uniform(pooled.select(Axis(0), &order[n..]))?;
        stat(&xa, &ya, rng.next_u64()).map_err(|e| Error::Statistic {
            resample: r,
            source: Box::new(e),
        })
    })?;
    Ok(PermutationTestResult {
        observed,
        p_value: p_value(observed, &stats),
        resample_statistics: stats,
    })
}
