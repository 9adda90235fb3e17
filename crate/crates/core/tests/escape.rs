//! Controlled simulation, least-action paths and escape estimates on the
//! scalar fixture.

mod common;

use common::*;
use regret_ldp::fixtures::{scalar_escape, ScalarEscape, SCALAR_HALF_WIDTH};
use regret_ldp::numeric::replicate_rng;
use regret_ldp::rare::{
    build_control_schedule, estimate_escape_mc, mean_exit_time, minimize_escape_action,
    simulate_controlled, EscapeOptions, SamplingMode,
};
use regret_ldp::rate::{local_rate_dual, path_action, PathSpec};
use regret_ldp::sa::simulate_algorithm;

/// Straight path from the stable point rising at 0.1 per unit time, with
/// enough knots that the action quadrature sees the growing drift.
fn rising_path(f: &ScalarEscape, horizon: f64) -> PathSpec {
    let knots = (0..=40).map(|k| vec![f.equilibrium + 0.1 * horizon * k as f64 / 40.0]).collect();
    PathSpec::new(horizon, knots).unwrap()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn weighted_expectations_match_crude_ones() {
    let eps = 0.1;
    let f = scalar_escape(eps).unwrap();
    let path = rising_path(&f, 2.0);
    let schedule = build_control_schedule(&f.sa, &path, 0.5, 0.1, eps, None).unwrap();
    let functionals: [(&str, fn(&[Vec<f64>], f64) -> f64); 3] = [
        ("one", |_, _| 1.0),
        ("terminal above", |x, c| if x.last().unwrap()[0] > c { 1.0 } else { 0.0 }),
        ("mid tanh", |x, c| (5.0 * (x[x.len() / 2][0] - c)).tanh()),
    ];
    let reps = 500;
    for (name, g) in functionals {
        let weighted: Vec<f64> = (0..reps)
            .map(|r| {
                let run = simulate_controlled(&f.sa, &schedule, 2.0, None, &mut replicate_rng(60, r)).unwrap();
                g(&run.trajectory.x, f.equilibrium) * (-run.record.log_likelihood_ratio).exp()
            })
            .collect();
        let crude: Vec<f64> = (0..reps)
            .map(|r| g(&simulate_algorithm(&f.sa, 2.0, 1_000 + r).unwrap().x, f.equilibrium))
            .collect();
        let (mw, sw) = mean_se(&weighted);
        let (mc, sc) = mean_se(&crude);
        let z = (mw - mc).abs() / (sw * sw + sc * sc).sqrt().max(1e-300);
        assert!(z <= 3.0, "{name}: weighted {mw} ± {sw}, crude {mc} ± {sc}");
    }
}

/// `Σ_k Δ L(x(τ_k), ẋ(τ_k))`, the cost the frozen block tilts aim at.
fn left_block_sum(f: &ScalarEscape, path: &PathSpec, block: f64) -> f64 {
    let n = (path.horizon / block).round() as usize;
    (0..n)
        .map(|k| {
            let x = path.at(k as f64 * block);
            block * local_rate_dual(&f.sa, &x, &[0.1]).unwrap().value
        })
        .sum()
}

#[test]
fn entropy_cost_approaches_the_block_sum() {
    let f = scalar_escape(0.1).unwrap();
    let path = rising_path(&f, 2.0);
    let target = left_block_sum(&f, &path, 0.5);
    let mut gaps = Vec::new();
    for eps in [0.02, 0.01, 0.002] {
        let sa = f.sa.with_epsilon(eps).unwrap();
        let schedule = build_control_schedule(&sa, &path, 0.5, 0.01, eps, None).unwrap();
        let costs: Vec<f64> = (0..50)
            .map(|r| {
                simulate_controlled(&sa, &schedule, 2.0, None, &mut replicate_rng(61, r))
                    .unwrap()
                    .record
                    .entropy_cost
            })
            .collect();
        let (m, _) = mean_se(&costs);
        gaps.push((m - target).abs() / target);
    }
    assert!(*gaps.last().unwrap() <= 0.05, "relative gaps {gaps:?}");
    assert!(gaps.last().unwrap() < gaps.first().unwrap(), "relative gaps {gaps:?}");
}

#[test]
fn block_sums_approach_the_path_action() {
    let f = scalar_escape(0.1).unwrap();
    let path = rising_path(&f, 2.0);
    let action = path_action(&f.sa, &path).unwrap().value;
    let gaps: Vec<f64> = [0.5, 0.25, 0.1, 0.05]
        .iter()
        .map(|&b| (left_block_sum(&f, &path, b) - action).abs())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] / action <= 0.02, "{gaps:?}");
}

#[test]
fn minimizer_agrees_with_a_coarse_dynamic_program() {
    let f = scalar_escape(0.1).unwrap();
    let best = minimize_escape_action(
        &f.sa,
        &f.region,
        &[f.equilibrium],
        f.horizon,
        20,
        &EscapeOptions::default(),
    )
    .unwrap();
    let dp = escape_action_dp(&f.sa, f.equilibrium, SCALAR_HALF_WIDTH, f.horizon, 51, 50, 50, 0.5);
    let rel = (dp - best.action).abs() / dp;
    assert!(rel <= 0.05, "minimizer {}, DP {dp}", best.action);
}

#[test]
fn weighted_escape_estimates_track_the_action() {
    let f = scalar_escape(0.1).unwrap();
    let best = minimize_escape_action(
        &f.sa,
        &f.region,
        &[f.equilibrium],
        f.horizon,
        20,
        &EscapeOptions::default(),
    )
    .unwrap();
    let mode = SamplingMode::Importance {
        path: best.path.clone(),
        block_length: f.block_length,
        delta: f.delta,
        burn_in: None,
    };
    let table = estimate_escape_mc(&f.sa, &f.region, f.horizon, &[0.1, 0.05], 2_000, 62, &mode).unwrap();
    for row in &table.rows {
        assert!(!row.upper_bound_only);
        let rel = (row.eps_log_p + best.action).abs() / best.action;
        assert!(rel <= 0.25, "ε = {}: ε log P̂ = {}, action {}", row.epsilon, row.eps_log_p, best.action);
    }
}

#[test]
fn exit_time_scale_is_near_the_boundary_action() {
    let f = scalar_escape(0.1).unwrap();
    let best = minimize_escape_action(
        &f.sa,
        &f.region,
        &[f.equilibrium],
        f.horizon,
        20,
        &EscapeOptions::default(),
    )
    .unwrap();
    let rows = mean_exit_time(&f.sa, &f.region, &[0.1, 0.05], 200, 63, 1_000_000).unwrap();
    assert!(rows[1].mean_tau > rows[0].mean_tau);
    for r in &rows {
        assert!(!r.unreliable && r.censored_fraction == 0.0);
        let rel = (r.eps_log_mean_tau - best.action).abs() / best.action;
        assert!(rel <= 0.15, "ε = {}: ε log mean τ = {}", r.epsilon, r.eps_log_mean_tau);
    }
}
