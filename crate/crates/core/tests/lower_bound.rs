mod common;

use approx::assert_abs_diff_eq;
use batchot::lower::{dual_lower_bound, verify_dual_feasibility};
use batchot::ot::{solve_exact, Kernel, SinkhornParams};
use batchot::upper::{bhot, naive_average};
use batchot::Error;
use common::{exact_full, full_cost, gaussian_points, instance, problem, rng};
use ndarray::{array, Array1};

#[test]
fn single_batch_is_the_exact_dual() {
    for seed in 0..5 {
        let p = instance(seed, 10, 2, 1);
        let r = dual_lower_bound(&p).unwrap();
        assert_abs_diff_eq!(r.value, exact_full(&p), epsilon = 1e-9);
        assert_eq!(r.u, array![0.0]);
        assert_eq!(r.v, array![0.0]);
        assert_eq!(r.k_matrix, array![[0.0]]);
    }
}

#[test]
fn identical_aligned_samples() {
    for seed in 0..10 {
        let mut r = rng(10 + seed);
        let x = gaussian_points(&mut r, 12, 2, 0.0);
        let p = problem(x.clone(), x, 3);
        let rep = dual_lower_bound(&p).unwrap();
        // vertex duals of a self-transport are not zero, so off-diagonal K
        // entries can be negative and the bound need not reach 0
        assert!(rep.value <= 1e-12, "{}", rep.value);
        assert!(rep.feasibility_margin >= -1e-7);
        let scale = full_cost(&p).iter().cloned().fold(0.0, f64::max);
        assert!(rep.value >= -scale);
    }
    let mut r = rng(9);
    let x = gaussian_points(&mut r, 12, 2, 0.0);
    let p = problem(x.clone(), x, 1);
    assert_abs_diff_eq!(dual_lower_bound(&p).unwrap().value, 0.0, epsilon = 1e-12);
}

#[test]
fn small_instance_against_full_solve() {
    for seed in 0..20 {
        let p = instance(100 + seed, 12, 2, 2);
        let rep = dual_lower_bound(&p).unwrap();
        let c = full_cost(&p);
        assert!(rep.value <= exact_full(&p) + 1e-7);
        let margin = verify_dual_feasibility(rep.f_tilde.view(), rep.g_tilde.view(), c.view()).unwrap();
        assert!(margin >= -1e-7, "{margin}");
        assert_abs_diff_eq!(margin, rep.feasibility_margin, epsilon = 1e-12);
    }
}

#[test]
fn full_sandwich_on_100_instances() {
    let mut count = 0;
    let mut negative_k = 0;
    for (i, n) in [12usize, 24, 48].into_iter().enumerate() {
        for k in [2usize, 3, 4] {
            let trials = if i == 2 { 10 } else { 12 };
            for t in 0..trials {
                let seed = 1000 + 100 * n as u64 + 10 * k as u64 + t;
                let p = instance(seed, n, 3, k);
                let lb = dual_lower_bound(&p).unwrap();
                let exact = exact_full(&p);
                let b = bhot(&p).unwrap().value;
                let nv = naive_average(&p).unwrap().value;
                assert!(lb.value - 1e-7 <= exact, "lb {} exact {exact}", lb.value);
                assert!(exact <= b + 1e-7, "exact {exact} bhot {b}");
                assert!(b <= nv + 1e-7);
                assert!(lb.feasibility_margin >= -1e-7);
                for ((s, t), &kv) in lb.k_matrix.indexed_iter() {
                    assert!(lb.u[s] + lb.v[t] <= kv + 1e-9);
                }
                let obj = lb.f_tilde.dot(p.x().weights()) + lb.g_tilde.dot(p.y().weights());
                assert!((lb.value - obj).abs() < 1e-7);
                if lb.k_matrix.iter().any(|&v| v < 0.0) {
                    negative_k += 1;
                }
                count += 1;
            }
        }
    }
    assert_eq!(count, 102);
    eprintln!("{negative_k} of {count} instances had negative K entries");
}

#[test]
fn sinkhorn_kernel_is_rejected() {
    let p = instance(5, 8, 2, 2).with_kernel(Kernel::Sinkhorn(SinkhornParams::new(0.1)));
    assert!(matches!(dual_lower_bound(&p), Err(Error::DualKind(_))));
}

#[test]
fn feasibility_helper() {
    let c = array![[1.0, 2.0], [0.5, 3.0]];
    let z = Array1::zeros(2);
    assert_eq!(verify_dual_feasibility(z.view(), z.view(), c.view()).unwrap(), 0.5);
    let sol = solve_exact(c.view(), array![0.5, 0.5].view(), array![0.5, 0.5].view()).unwrap();
    assert!(verify_dual_feasibility(sol.duals.f.view(), sol.duals.g.view(), c.view()).unwrap() >= -1e-9);
    assert!(matches!(
        verify_dual_feasibility(Array1::zeros(3).view(), z.view(), c.view()),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn report_json_fields() {
    let p = instance(6, 8, 2, 2);
    let v: serde_json::Value = serde_json::to_value(dual_lower_bound(&p).unwrap()).unwrap();
    let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["feasibility_margin", "u", "v", "value"]);
}
