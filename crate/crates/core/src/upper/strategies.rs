use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchProblem, BoundReport, Budget, Method, Stopwatch};
use crate::batch_matrix::{solve_meta, BatchCostMatrix, BatchMatching};
use crate::error::{Error, Result};
use crate::ot::TransportPlan;

/// Optimal sub-plans keyed by batch pair.
pub type SubPlans = BTreeMap<(usize, usize), TransportPlan>;

fn report(method: Method, value: f64, budget_used: usize, clock: &Stopwatch, matching: BatchMatching) -> BoundReport {
    BoundReport {
        method,
        value,
        budget_used,
        wall_time_ms: clock.ms(),
        matching,
    }
}

/// Average of the k diagonal batch costs.
pub fn naive_average(p: &BatchProblem) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let cells: Vec<_> = (0..k).map(|s| (s, s)).collect();
    let mut d = BatchCostMatrix::new(k);
    p.fill(&mut d, &cells)?;
    let matching = BatchMatching::diagonal(k);
    let value = matching.cost(&d)?;
    Ok(report(Method::Naive, value, k, &clock, matching))
}

/// Full batch-hierarchical bound: all k² entries, then the meta problem.
pub fn bhot(p: &BatchProblem) -> Result<BoundReport> {
    bhot_with_plans(p).map(|(r, _)| r)
}

/// Like [`bhot`], also returning the sub-plans on the support of the matching.
pub fn bhot_with_plans(p: &BatchProblem) -> Result<(BoundReport, SubPlans)> {
    let clock = Stopwatch::start();
    let k = p.k();
    let cells: Vec<_> = (0..k).flat_map(|s| (0..k).map(move |t| (s, t))).collect();
    let mut d = BatchCostMatrix::new(k);
    let sols = p.fill(&mut d, &cells)?;
    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    let mut plans = SubPlans::new();
    for (cell, sol) in cells.into_iter().zip(sols) {
        if matching.weights[cell] > 0.0 {
            plans.insert(cell, sol.plan);
        }
    }
    Ok((report(Method::Bhot, value, k * k, &clock, matching), plans))
}

/// Glues ω_st·P^st blocks into an N×M plan in the original index space.
pub fn assemble_full_plan(p: &BatchProblem, matching: &BatchMatching, sub_plans: &SubPlans) -> Result<TransportPlan> {
    let (px, py) = (p.partition_x(), p.partition_y());
    let mut entries = Array2::zeros((p.x().len(), p.y().len()));
    for ((s, t), &w) in matching.weights.indexed_iter() {
        if w <= 0.0 {
            continue;
        }
        let plan = sub_plans.get(&(s, t)).ok_or(Error::MissingSubPlan { s, t })?;
        let (bx, by) = (px.batch(s)?, py.batch(t)?);
        if plan.shape() != (bx.len(), by.len()) {
            return Err(Error::Dimension(format!(
                "sub-plan ({s}, {t}) is {:?}, batches are {}x{}",
                plan.shape(),
                bx.len(),
                by.len()
            )));
        }
        for ((i, j), &v) in plan.entries.indexed_iter() {
            entries[(bx[i], by[j])] += w * v;
        }
    }
    Ok(TransportPlan {
        entries,
        row_marginal: p.x().weights().clone(),
        col_marginal: p.y().weights().clone(),
    })
}

/// Order in which greedy matching visits the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowOrder {
    #[default]
    Dataset,
    Shuffled(u64),
}

/// Candidate counts 𝔞(1..=k): 𝔞(1) = 1, 𝔞(s+1) = 𝔞(s) + [B ≥ C(k+1,2) − C(k−s,2)].
/// The row visited at position r (0-based) receives 𝔞(k − r).
pub fn greedy_allocation(k: usize, budget: usize) -> Vec<usize> {
    let c2 = |n: usize| n * n.saturating_sub(1) / 2;
    let mut alloc = vec![1usize; k];
    for s in 1..k {
        let bump = budget >= c2(k + 1) - c2(k - s);
        alloc[s] = alloc[s - 1] + usize::from(bump);
    }
    alloc
}

pub fn greedy_matching(p: &BatchProblem, budget: Budget) -> Result<BoundReport> {
    greedy_matching_with(p, budget, RowOrder::Dataset)
}

/// Row-by-row greedy matching: each row solves its allotted candidates among
/// the unmatched columns (cyclic order starting at its own index) and keeps the cheapest.
pub fn greedy_matching_with(p: &BatchProblem, budget: Budget, order: RowOrder) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let alloc = greedy_allocation(k, budget.get());
    let mut rows: Vec<usize> = (0..k).collect();
    if let RowOrder::Shuffled(seed) = order {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut d = BatchCostMatrix::new(k);
    let mut free = vec![true; k];
    let mut perm = vec![0usize; k];
    let mut used = 0usize;
    for (pos, &r) in rows.iter().enumerate() {
        let remaining_rows = k - pos;
        // keep one solve in reserve for each later row
        let cap = budget.get() - used - (remaining_rows - 1);
        let want = alloc[remaining_rows - 1].min(cap).max(1);
        let candidates: Vec<usize> = (0..k).map(|o| (r + o) % k).filter(|&c| free[c]).take(want).collect();
        let cells: Vec<_> = candidates.iter().map(|&c| (r, c)).collect();
        let sols = p.fill(&mut d, &cells)?;
        used += cells.len();
        let (best, _) = candidates
            .iter()
            .zip(&sols)
            .map(|(&c, s)| (c, s.value))
            .min_by(|(ca, va), (cb, vb)| va.total_cmp(vb).then(ca.cmp(cb)))
            .expect("at least one candidate");
        free[best] = false;
        perm[r] = best;
    }
    let matching = BatchMatching::from_permutation(&perm);
    let value = matching.cost(&d)?;
    Ok(report(Method::Greedy, value, used, &clock, matching))
}

/// How the initial row/column cover is chosen for [`missing_costs_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseCover {
    #[default]
    RandomPermutation,
    Diagonal,
}

pub fn missing_costs(p: &BatchProblem, budget: Budget, seed: u64) -> Result<BoundReport> {
    missing_costs_with(p, budget, seed, BaseCover::RandomPermutation)
}

/// Solves a cover permutation plus B − k further cells drawn uniformly, then
/// the meta problem over the solved cells only.
pub fn missing_costs_with(p: &BatchProblem, budget: Budget, seed: u64, base: BaseCover) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..k).collect();
    if base == BaseCover::RandomPermutation {
        perm.shuffle(&mut rng);
    }
    let mut cells: Vec<(usize, usize)> = perm.iter().enumerate().map(|(s, &t)| (s, t)).collect();
    let mut rest: Vec<(usize, usize)> = (0..k)
        .flat_map(|s| (0..k).map(move |t| (s, t)))
        .filter(|&(s, t)| perm[s] != t)
        .collect();
    rest.shuffle(&mut rng);
    cells.extend(rest.into_iter().take(budget.get() - k));

    let mut d = BatchCostMatrix::new(k);
    p.fill(&mut d, &cells)?;
    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    Ok(report(Method::Missing, value, cells.len(), &clock, matching))
}

/// Diagonal first, then repeatedly extend the row and column of the most
/// expensive solved pair that still has missing cells.
pub fn missing_greedy(p: &BatchProblem, budget: Budget, seed: u64) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = BatchCostMatrix::new(k);
    let diag: Vec<_> = (0..k).map(|s| (s, s)).collect();
    p.fill(&mut d, &diag)?;
    let mut remaining = budget.get() - k;

    while remaining > 0 {
        let row_missing = |d: &BatchCostMatrix, s: usize| (0..k).any(|t| !d.is_solved(s, t));
        let col_missing = |d: &BatchCostMatrix, t: usize| (0..k).any(|s| !d.is_solved(s, t));
        let mut pick: Option<(usize, usize, f64)> = None;
        for s in 0..k {
            for t in 0..k {
                if let Some(v) = d.get(s, t) {
                    if (row_missing(&d, s) || col_missing(&d, t)) && pick.is_none_or(|(_, _, best)| v > best) {
                        pick = Some((s, t, v));
                    }
                }
            }
        }
        let (s, t, _) = pick.expect("a missing cell implies a solved pair in its row");
        let cols: Vec<usize> = (0..k).filter(|&c| !d.is_solved(s, c)).collect();
        if let Some(&c) = cols.choose(&mut rng) {
            p.fill(&mut d, &[(s, c)])?;
            remaining -= 1;
        }
        if remaining == 0 {
            break;
        }
        let rows: Vec<usize> = (0..k).filter(|&r| !d.is_solved(r, t)).collect();
        if let Some(&r) = rows.choose(&mut rng) {
            p.fill(&mut d, &[(r, t)])?;
            remaining -= 1;
        }
    }
    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    Ok(report(Method::MissingGreedy, value, d.solved_count(), &clock, matching))
}
