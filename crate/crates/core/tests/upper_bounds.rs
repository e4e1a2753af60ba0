mod common;

use approx::assert_abs_diff_eq;
use batchot::batch_matrix::BatchCostMatrix;
use batchot::measures::{partition_contiguous, EmpiricalMeasure};
use batchot::ot::evaluate_plan;
use batchot::upper::{
    assemble_full_plan, bhot, bhot_with_plans, bures_wasserstein_squared, bures_wasserstein_squared_dense,
    greedy_allocation, greedy_matching, missing_costs, missing_costs_with, missing_greedy, naive_average,
    proxy_bound, BaseCover, BatchProblem, BoundReport, Budget, Method, Proxy, SubPlans,
};
use batchot::Error;
use common::{brute_force, exact_full, full_cost, gaussian_points, instance, problem, rng};
use ndarray::{concatenate, s, Array1, Array2, Axis};
use proptest::prelude::*;

fn aligned(seed: u64, n: usize, d: usize, k: usize) -> BatchProblem {
    let mut r = rng(seed);
    let x = gaussian_points(&mut r, n, d, 0.0);
    problem(x.clone(), x, k)
}

fn batch_matrix_of(p: &BatchProblem) -> Array2<f64> {
    let k = p.k();
    let cells: Vec<_> = (0..k).flat_map(|s| (0..k).map(move |t| (s, t))).collect();
    let sols = p.solve_cells(&cells).unwrap();
    Array2::from_shape_vec((k, k), sols.iter().map(|s| s.value).collect()).unwrap()
}

#[test]
fn naive_examples() {
    let p = aligned(1, 12, 3, 3);
    let r = naive_average(&p).unwrap();
    assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-12);
    assert_eq!(r.budget_used, 3);
    assert_eq!(r.matching.as_permutation().unwrap(), vec![0, 1, 2]);

    let p = instance(2, 10, 2, 1);
    assert_abs_diff_eq!(naive_average(&p).unwrap().value, exact_full(&p), epsilon = 1e-9);
}

#[test]
fn assumption_violation_is_reported() {
    let x = EmpiricalMeasure::new(
        ndarray::array![[0.0], [1.0], [2.0], [3.0]],
        ndarray::array![0.1, 0.2, 0.3, 0.4],
    )
    .unwrap();
    let px = partition_contiguous(&x, 2).unwrap();
    let err = BatchProblem::new(x.clone(), x, px.clone(), px).unwrap_err();
    assert!(matches!(err, Error::Assumption(_)));
}

#[test]
fn bhot_recovers_batch_permutation() {
    let mut r = rng(3);
    let x = gaussian_points(&mut r, 12, 2, 0.0);
    let perm = [2usize, 0, 1];
    let blocks: Vec<_> = perm.iter().map(|&b| x.slice(s![b * 4..(b + 1) * 4, ..])).collect();
    let y = concatenate(Axis(0), &blocks).unwrap();
    let p = problem(x, y, 3);
    let rep = bhot(&p).unwrap();
    assert_abs_diff_eq!(rep.value, 0.0, epsilon = 1e-12);
    // X batch b sits at Y position perm^{-1}(b)
    assert_eq!(rep.matching.as_permutation().unwrap(), vec![1, 2, 0]);
    assert_eq!(rep.budget_used, 9);
}

#[test]
fn bhot_k1_is_exact_and_matches_enumeration() {
    let p = instance(4, 9, 2, 1);
    assert_abs_diff_eq!(bhot(&p).unwrap().value, exact_full(&p), epsilon = 1e-9);
    for seed in 0..10 {
        let p = instance(100 + seed, 12, 3, 3);
        let d = batch_matrix_of(&p);
        assert_abs_diff_eq!(bhot(&p).unwrap().value, brute_force(&d), epsilon = 1e-9);
    }
}

#[test]
fn bhot_sandwich_and_dominates_naive() {
    for seed in 0..10 {
        let p = instance(200 + seed, 16, 2, 4);
        let exact = exact_full(&p);
        let b = bhot(&p).unwrap().value;
        let n = naive_average(&p).unwrap().value;
        assert!(exact - 1e-9 <= b && b <= n + 1e-9, "{exact} {b} {n}");
    }
}

fn check_assembled(p: &BatchProblem, rep: &BoundReport, plans: &SubPlans) {
    let plan = assemble_full_plan(p, &rep.matching, plans).unwrap();
    assert!(plan.entries.iter().all(|&v| v >= 0.0));
    assert!(plan.marginal_error() < 1e-9);
    let c = full_cost(p);
    assert_abs_diff_eq!(evaluate_plan(c.view(), &plan).unwrap(), rep.value, epsilon = 1e-7);
}

#[test]
fn assembled_plan_examples() {
    let p = aligned(5, 8, 2, 2);
    let (rep, plans) = bhot_with_plans(&p).unwrap();
    let plan = assemble_full_plan(&p, &rep.matching, &plans).unwrap();
    for ((i, j), &v) in plan.entries.indexed_iter() {
        if v > 0.0 {
            assert_eq!(i / 4, j / 4, "mass outside diagonal blocks");
        }
    }
    check_assembled(&p, &rep, &plans);

    let p = instance(6, 6, 2, 1);
    let (rep, plans) = bhot_with_plans(&p).unwrap();
    let plan = assemble_full_plan(&p, &rep.matching, &plans).unwrap();
    assert!(plan.entries.abs_diff_eq(&plans[&(0, 0)].entries, 1e-15));

    let p = instance(7, 8, 2, 2);
    let (rep, plans) = bhot_with_plans(&p).unwrap();
    check_assembled(&p, &rep, &plans);
}

#[test]
fn assembled_plan_missing_sub_plan() {
    let p = instance(8, 8, 2, 2);
    let (rep, mut plans) = bhot_with_plans(&p).unwrap();
    let key = *plans.keys().next().unwrap();
    plans.remove(&key);
    assert!(matches!(
        assemble_full_plan(&p, &rep.matching, &plans),
        Err(Error::MissingSubPlan { .. })
    ));
}

#[test]
fn assembled_plan_marginals_on_random_instances() {
    for seed in 0..50 {
        let k = 2 + (seed as usize % 3);
        let p = instance(300 + seed, 4 * k, 3, k);
        let (rep, plans) = bhot_with_plans(&p).unwrap();
        check_assembled(&p, &rep, &plans);
    }
}

#[test]
fn greedy_allocation_schedule() {
    assert_eq!(greedy_allocation(2, 3), vec![1, 2]);
    assert_eq!(greedy_allocation(2, 2), vec![1, 1]);
    assert_eq!(greedy_allocation(4, 4), vec![1, 1, 1, 1]);
    assert_eq!(greedy_allocation(4, 10), vec![1, 2, 3, 4]);
    for k in 1..8 {
        for b in k..=k * k {
            let a = greedy_allocation(k, b);
            assert!(a.iter().sum::<usize>() <= b, "k={k} b={b} {a:?}");
            assert!(a.iter().enumerate().all(|(s, &v)| v >= 1 && v <= s + 1));
        }
    }
}

#[test]
fn greedy_budget_k_is_diagonal() {
    let p = instance(9, 12, 2, 3);
    let g = greedy_matching(&p, Budget::new(3, 3).unwrap()).unwrap();
    let n = naive_average(&p).unwrap();
    assert_abs_diff_eq!(g.value, n.value, epsilon = 1e-12);
    assert_eq!(g.budget_used, 3);
}

#[test]
fn greedy_hand_trace_two_clusters() {
    // batch 0 of X near batch 1 of Y and vice versa: D is anti-diagonal cheap
    let mut r = rng(10);
    let a = gaussian_points(&mut r, 3, 2, 0.0);
    let b = gaussian_points(&mut r, 3, 2, 100.0);
    let x = concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
    let y = concatenate(Axis(0), &[b.view(), a.view()]).unwrap();
    let p = problem(x, y, 2);
    let g = greedy_matching(&p, Budget::new(3, 2).unwrap()).unwrap();
    assert_eq!(g.budget_used, 3);
    assert_abs_diff_eq!(g.value, 0.0, epsilon = 1e-12);
    assert_eq!(g.matching.as_permutation().unwrap(), vec![1, 0]);
}

#[test]
fn greedy_never_beats_bhot() {
    for seed in 0..20 {
        let p = instance(400 + seed, 15, 2, 5);
        let b = bhot(&p).unwrap().value;
        for budget in [5, 9, 12, 15, 25] {
            let g = greedy_matching(&p, Budget::new(budget, 5).unwrap()).unwrap();
            assert!(g.value >= b - 1e-9);
            assert!(g.budget_used <= budget);
        }
    }
}

#[test]
fn budget_bounds_are_enforced() {
    assert!(matches!(Budget::new(2, 3), Err(Error::Budget(_))));
    assert!(matches!(Budget::new(10, 3), Err(Error::Budget(_))));
    assert_eq!(Budget::new(9, 3).unwrap().get(), 9);
}

#[test]
fn missing_costs_extremes() {
    for seed in 0..5 {
        let p = instance(500 + seed, 12, 2, 4);
        let b = bhot(&p).unwrap().value;
        let full = missing_costs(&p, Budget::new(16, 4).unwrap(), seed).unwrap();
        assert_abs_diff_eq!(full.value, b, epsilon = 1e-9);
        assert_eq!(full.budget_used, 16);

        let diag = missing_costs_with(&p, Budget::new(4, 4).unwrap(), seed, BaseCover::Diagonal).unwrap();
        assert_abs_diff_eq!(diag.value, naive_average(&p).unwrap().value, epsilon = 1e-12);
        assert_eq!(diag.matching.as_permutation().unwrap(), vec![0, 1, 2, 3]);
    }
}

#[test]
fn missing_costs_random_cover_averages_its_permutation() {
    let p = instance(510, 12, 2, 4);
    let d = batch_matrix_of(&p);
    let r = missing_costs(&p, Budget::new(4, 4).unwrap(), 77).unwrap();
    let perm = r.matching.as_permutation().unwrap();
    let avg: f64 = perm.iter().enumerate().map(|(s, &t)| d[(s, t)]).sum::<f64>() / 4.0;
    assert_abs_diff_eq!(r.value, avg, epsilon = 1e-9);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn missing_costs_more_budget_helps_in_median() {
    for inst in 0..20 {
        let p = instance(600 + inst, 12, 2, 4);
        let lo: Vec<f64> = (0..10).map(|s| missing_costs(&p, Budget::new(4, 4).unwrap(), s).unwrap().value).collect();
        let hi: Vec<f64> = (0..10).map(|s| missing_costs(&p, Budget::new(8, 4).unwrap(), s).unwrap().value).collect();
        assert!(median(hi.clone()) <= median(lo.clone()) + 1e-12, "instance {inst}");
    }
}

#[test]
fn missing_greedy_extremes() {
    for seed in 0..5 {
        let p = instance(700 + seed, 12, 2, 4);
        let n = naive_average(&p).unwrap().value;
        let b = bhot(&p).unwrap().value;
        assert_abs_diff_eq!(missing_greedy(&p, Budget::new(4, 4).unwrap(), seed).unwrap().value, n, epsilon = 1e-12);
        let full = missing_greedy(&p, Budget::new(16, 4).unwrap(), seed).unwrap();
        assert_abs_diff_eq!(full.value, b, epsilon = 1e-9);
        for budget in 4..=16 {
            let r = missing_greedy(&p, Budget::new(budget, 4).unwrap(), seed).unwrap();
            assert_eq!(r.budget_used, budget);
            assert!(r.value >= b - 1e-9 && r.value <= n + 1e-9);
        }
    }
    let p = aligned(710, 12, 2, 4);
    for budget in 4..=16 {
        assert_abs_diff_eq!(missing_greedy(&p, Budget::new(budget, 4).unwrap(), 1).unwrap().value, 0.0, epsilon = 1e-12);
    }
}

#[test]
fn proxies_on_aligned_data_pick_diagonal() {
    let p = aligned(11, 12, 2, 3);
    for proxy in [Proxy::Means, Proxy::AvgDist, Proxy::Bures] {
        let r = proxy_bound(&p, proxy).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-12);
        assert_eq!(r.matching.as_permutation().unwrap(), vec![0, 1, 2]);
        assert_eq!(r.budget_used, 3);
        assert_eq!(r.method, proxy.method());
    }
}

#[test]
fn means_proxy_recovers_cluster_matching() {
    let mut r = rng(12);
    let a = gaussian_points(&mut r, 4, 2, 0.0);
    let b = gaussian_points(&mut r, 4, 2, 100.0);
    let a2 = gaussian_points(&mut r, 4, 2, 0.0);
    let b2 = gaussian_points(&mut r, 4, 2, 100.0);
    let x = concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
    let y = concatenate(Axis(0), &[b2.view(), a2.view()]).unwrap();
    let p = problem(x, y, 2);
    let m = proxy_bound(&p, Proxy::Means).unwrap();
    assert_eq!(m.matching.as_permutation().unwrap(), vec![1, 0]);
    assert_abs_diff_eq!(m.value, bhot(&p).unwrap().value, epsilon = 1e-9);
}

#[test]
fn bures_between_shifted_gaussians() {
    let mut r = rng(13);
    let x = EmpiricalMeasure::uniform(gaussian_points(&mut r, 500, 2, 0.0)).unwrap();
    let mut yp = gaussian_points(&mut r, 500, 2, 0.0);
    yp.column_mut(0).mapv_inplace(|v| v + 3.0);
    let y = EmpiricalMeasure::uniform(yp).unwrap();
    let bw = bures_wasserstein_squared(&x, &y).unwrap();
    assert!((bw - 9.0).abs() < 0.9, "{bw}");
}

fn moments(m: &EmpiricalMeasure) -> (Array1<f64>, Array2<f64>) {
    let mu = m.points().t().dot(m.weights());
    let xc = &m.points() - &mu;
    let mut cov = Array2::zeros((m.dim(), m.dim()));
    for (row, &w) in xc.rows().into_iter().zip(m.weights()) {
        let r = row.to_owned().insert_axis(Axis(1));
        cov = cov + w * r.dot(&r.t());
    }
    (mu, cov)
}

proptest! {
    #[test]
    fn bures_routes_agree(seed in 0u64..500, n in 2usize..8, m in 2usize..8, d in 1usize..6) {
        let mut r = rng(seed);
        let x = EmpiricalMeasure::uniform(gaussian_points(&mut r, n, d, 0.0)).unwrap();
        let y = EmpiricalMeasure::uniform(gaussian_points(&mut r, m, d, 1.0)).unwrap();
        let fast = bures_wasserstein_squared(&x, &y).unwrap();
        let (ma, ca) = moments(&x);
        let (mb, cb) = moments(&y);
        let dense = bures_wasserstein_squared_dense(ma.view(), ca.view(), mb.view(), cb.view()).unwrap();
        prop_assert!((fast - dense).abs() < 1e-7 * (1.0 + dense), "{} vs {}", fast, dense);
    }
}

#[test]
fn bures_rejects_singleton_batches() {
    let p = instance(14, 4, 2, 4);
    assert!(matches!(proxy_bound(&p, Proxy::Bures), Err(Error::DegenerateCovariance(_))));
}

#[test]
fn solve_counter_matches_budget_used() {
    let p = instance(15, 20, 2, 5);
    type Run = Box<dyn Fn(&BatchProblem) -> BoundReport>;
    let runs: Vec<Run> = vec![
        Box::new(|p| naive_average(p).unwrap()),
        Box::new(|p| bhot(p).unwrap()),
        Box::new(|p| greedy_matching(p, Budget::new(10, 5).unwrap()).unwrap()),
        Box::new(|p| missing_costs(p, Budget::new(12, 5).unwrap(), 3).unwrap()),
        Box::new(|p| missing_greedy(p, Budget::new(13, 5).unwrap(), 3).unwrap()),
        Box::new(|p| proxy_bound(p, Proxy::AvgDist).unwrap()),
    ];
    for run in runs {
        p.reset_solve_count();
        let r = run(&p);
        assert_eq!(p.solve_count(), r.budget_used, "{}", r.method);
    }
}

#[test]
fn fill_rejects_repeated_cells_before_solving() {
    let p = instance(16, 8, 2, 2);
    let mut d = BatchCostMatrix::new(2);
    assert!(matches!(p.fill(&mut d, &[(0, 0), (0, 0)]), Err(Error::DoubleSolve { .. })));
    assert_eq!(p.solve_count(), 0);
}

#[test]
fn bound_report_json_round_trip() {
    let p = instance(17, 12, 2, 3);
    let r = bhot(&p).unwrap();
    let s = serde_json::to_string(&r).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    for key in ["method", "value", "budget_used", "wall_time_ms", "matching"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["method"], "bhot");
    let back: BoundReport = serde_json::from_str(&s).unwrap();
    assert_eq!(back, r);
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert_eq!("missing-greedy".parse::<Method>().unwrap(), Method::MissingGreedy);
    assert!("bogus".parse::<Method>().is_err());
}
