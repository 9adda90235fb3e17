//! Randomized invariants of kernels, the action law, the Hamiltonian and
//! the local rate.

mod common;

use proptest::prelude::*;

use common::*;
use regret_ldp::game::action_row;
use regret_ldp::markov::{
    check_irreducible_aperiodic, invariant_measure, product_kernel, relative_entropy,
    stationarity_residual_inf, validate_kernel, ProbVector, StochasticKernel,
};
use regret_ldp::rare::OccupationRecord;
use regret_ldp::rate::{local_rate_dual, local_rate_primal, stationarity_residual, tilted_hamiltonian};

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn positive_kernel(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(weights(n), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn accepted_kernels_are_stochastic_with_fixed_point(rows in (1usize..8).prop_flat_map(positive_kernel)) {
        let report = validate_kernel(&rows).unwrap();
        prop_assert!(report.is_valid());
        let k = StochasticKernel::from_rows(rows).unwrap();
        for i in 0..k.size() {
            let row = k.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let pi = invariant_measure(&k).unwrap();
        prop_assert!(stationarity_residual_inf(&k, pi.weights()) <= 1e-12);
    }

    #[test]
    fn relative_entropy_is_nonnegative_and_vanishes_on_the_diagonal(
        (p, q) in (2usize..6).prop_flat_map(|n| (weights(n), weights(n)))
    ) {
        let r = relative_entropy(&p, &q).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(relative_entropy(&p, &p).unwrap(), 0.0);
        let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-6 {
            prop_assert!(r > 0.0);
        }
    }

    #[test]
    fn product_invariant_is_the_tensor_product(
        (a, b) in (2usize..4, 2usize..4).prop_flat_map(|(n, m)| (positive_kernel(n), positive_kernel(m)))
    ) {
        let k1 = StochasticKernel::from_rows(a).unwrap();
        let k2 = StochasticKernel::from_rows(b).unwrap();
        let joint = invariant_measure(&product_kernel(&k1, &k2)).unwrap();
        let tensor = invariant_measure(&k1).unwrap().tensor(&invariant_measure(&k2).unwrap());
        for (x, y) in joint.weights().iter().zip(tensor.weights()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn action_law_is_a_distribution_with_floor(
        a in 2usize..5,
        kappa in 0.01f64..0.99,
        xi in 0.5f64..20.0,
        last_raw in 0usize..5,
        regrets in prop::collection::vec(-30.0f64..30.0, 50),
    ) {
        let last = last_raw % a;
        let alpha = &regrets[..a * a];
        let beta = &regrets[25..25 + a * a];
        let row = action_row(alpha, beta, last, a, kappa, xi);
        prop_assert!(ProbVector::normalized(row.clone()).is_ok());
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (j, &p) in row.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&p));
            if j != last {
                prop_assert!(p >= kappa / a as f64 * (1.0 - 1e-12));
                prop_assert!(p <= 1.0 / a as f64 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn hamiltonian_is_midpoint_convex(seed in any::<u64>(), a1 in -4.0f64..4.0, a2 in -4.0f64..4.0, b1 in -4.0f64..4.0, b2 in -4.0f64..4.0) {
        let mut r = rng(seed);
        let sa = random_sa(&mut r, 2, 2, 2, 0.1);
        let x = [0.1, -0.2];
        let h1 = tilted_hamiltonian(&sa, &x, &[a1, b1]).unwrap();
        let h2 = tilted_hamiltonian(&sa, &x, &[a2, b2]).unwrap();
        let hm = tilted_hamiltonian(&sa, &x, &[0.5 * (a1 + a2), 0.5 * (b1 + b2)]).unwrap();
        prop_assert!(hm <= 0.5 * (h1 + h2) + 1e-10);
    }

    #[test]
    fn local_rate_is_nonnegative(seed in any::<u64>(), beta in -2.0f64..2.0) {
        let mut r = rng(seed);
        let sa = random_sa(&mut r, 3, 1, 1, 0.1);
        let q = local_rate_dual(&sa, &[0.0], &[beta]).unwrap();
        prop_assert!(q.value >= 0.0);
        if q.value.is_infinite() {
            prop_assert!(q.certificate.is_some());
        }
    }
}

/// Reachability closure by repeated boolean products.
fn reachable(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut r = adj.to_vec();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                r[i][j] = r[i][j] || (r[i][k] && r[k][j]);
            }
        }
    }
    r
}

/// gcd of the lengths of closed walks through state 0 of length ≤ 2n².
fn period(adj: &[Vec<bool>]) -> usize {
    let n = adj.len();
    let mut gcd = 0;
    let mut frontier = vec![false; n];
    frontier[0] = true;
    for len in 1..=2 * n * n {
        let mut next = vec![false; n];
        for i in 0..n {
            if frontier[i] {
                for j in 0..n {
                    next[j] |= adj[i][j];
                }
            }
        }
        if next[0] {
            let (mut a, mut b) = (gcd, len);
            while b != 0 {
                (a, b) = (b, a % b);
            }
            gcd = a;
        }
        frontier = next;
    }
    gcd
}

#[test]
fn irreducibility_matches_brute_force_on_all_small_kernels() {
    let rows_of = |n: usize| -> Vec<Vec<f64>> {
        // rows over {0, 0.5, 1} summing to 1
        let mut out = Vec::new();
        let vals = [0.0, 0.5, 1.0];
        let mut idx = vec![0usize; n];
        loop {
            let row: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
            if (row.iter().sum::<f64>() - 1.0).abs() < 1e-12 {
                out.push(row);
            }
            let mut p = 0;
            while p < n {
                idx[p] += 1;
                if idx[p] < 3 {
                    break;
                }
                idx[p] = 0;
                p += 1;
            }
            if p == n {
                break;
            }
        }
        out
    };
    let mut checked = 0;
    for n in 2..=3 {
        let rows = rows_of(n);
        let total = rows.len().pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let kernel: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let r = rows[c % rows.len()].clone();
                    c /= rows.len();
                    r
                })
                .collect();
            let adj: Vec<Vec<bool>> = kernel.iter().map(|r| r.iter().map(|&v| v > 0.0).collect()).collect();
            let reach = reachable(&adj);
            let irreducible = (0..n).all(|i| (0..n).all(|j| reach[i][j]));
            let k = StochasticKernel::from_rows(kernel).unwrap();
            let report = check_irreducible_aperiodic(&k);
            assert_eq!(report.irreducible, irreducible, "{k:?}");
            if irreducible {
                assert_eq!(report.period, period(&adj), "{k:?}");
                assert_eq!(report.aperiodic, period(&adj) == 1);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * 3 + 6 * 6 * 6);
}

#[test]
fn primal_optimizer_marginal_is_stationary_under_its_kernel() {
    let mut r = rng(40);
    for _ in 0..20 {
        let sa = random_sa(&mut r, 2, 2, 1, 0.1);
        let x = [0.1];
        let beta = interior_velocity(&mut r, &sa, &x);
        let p = local_rate_primal(&sa, &x, &beta).unwrap();
        let g = p.optimizer.expect("finite rate has an optimizer");
        let kernel = g.conditional(&sa.product_at(&x).unwrap()).unwrap();
        let mu = g.first_marginal();
        let pushed = kernel.push_forward(&mu);
        let res: f64 = mu.iter().zip(&pushed).map(|(a, b)| (a - b).abs()).sum();
        assert!(res <= 1e-8, "residual {res}");
    }
}

#[test]
fn stationarity_readings_on_random_measures() {
    // a symmetric doubly stochastic kernel makes both readings coincide
    let mut r = rng(41);
    let k = StochasticKernel::from_rows(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
    let drift = regret_ldp::sa::Drift::from_fn(1, |x, _, _, out| out[0] = -x[0]);
    let sa = regret_ldp::sa::GeneralSA::new(
        drift,
        regret_ldp::markov::StateDepKernel::constant(k),
        StochasticKernel::identity(1),
        0.1,
        vec![0.0],
        (0, 0),
    )
    .unwrap();
    for _ in 0..50 {
        let mu = ProbVector::normalized(random_row(&mut r, 2, 0.0)).unwrap();
        let res = stationarity_residual(&sa, &[0.0], &mu).unwrap();
        assert!((res.standard - res.harmonic).abs() < 1e-15);
        // two states: both coordinates of μ − μK have the same magnitude
        let m = mu.weights();
        let by_hand = 2.0 * (m[0] - (0.3 * m[0] + 0.7 * m[1])).abs();
        assert!((res.standard - by_hand).abs() < 1e-15);
    }
}

#[test]
fn occupation_merges_are_order_independent() {
    let mut r = rng(42);
    let records: Vec<OccupationRecord> = (0..16)
        .map(|_| {
            let mut rec = OccupationRecord::new(3);
            for i in 0..3 {
                for j in 0..3 {
                    rec.lambda_hat[(i, j)] = rand::Rng::random::<f64>(&mut r) * 1e3;
                    rec.gamma_hat[(i, j)] = rand::Rng::random::<f64>(&mut r) * 1e3;
                }
            }
            rec.steps = 100;
            rec.entropy_cost = rand::Rng::random::<f64>(&mut r);
            rec.log_likelihood_ratio = rand::Rng::random::<f64>(&mut r) - 0.5;
            rec
        })
        .collect();
    let fold = |order: &[usize]| {
        order[1..]
            .iter()
            .fold(records[order[0]].clone(), |acc, &i| acc.merge(&records[i]).unwrap())
    };
    let forward: Vec<usize> = (0..16).collect();
    let backward: Vec<usize> = (0..16).rev().collect();
    let (a, b) = (fold(&forward), fold(&backward));
    assert_eq!(a.steps, b.steps);
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
    for (x, y) in a.lambda_hat.iter().zip(b.lambda_hat.iter()) {
        assert!(rel(*x, *y) <= 1e-12);
    }
    assert!(rel(a.entropy_cost, b.entropy_cost) <= 1e-12);
    assert!((a.log_likelihood_ratio - b.log_likelihood_ratio).abs() <= 1e-12);
}
