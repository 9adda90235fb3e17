//! Monte Carlo estimates of escape probabilities and mean exit times.

use rayon::prelude::*;

use super::controlled::simulate_controlled;
use super::region::EscapeRegion;
use super::schedule::build_control_schedule;
use crate::numeric::{fmt17, pairwise_sum, replicate_rng, sample_index};
use crate::rate::PathSpec;
use crate::sa::{step_count, GeneralSA};
use crate::{Error, Result};

/// One-sided confidence level for the bound reported when no exit is seen.
pub const ZERO_EXIT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMode {
    Crude,
    /// Simulate under control schedules along `path` and reweight by the
    /// likelihood ratio.
    Importance {
        path: PathSpec,
        block_length: f64,
        delta: f64,
        /// `None` selects the mixing-time default.
        burn_in: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeRow {
    pub epsilon: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// Sample variance of the per-replicate estimator terms.
    pub variance: f64,
    /// `ε log P̂`, or `ε log` of the upper confidence bound when no exit
    /// was observed.
    pub eps_log_p: f64,
    pub upper_bound_only: bool,
    pub exits: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeTable {
    pub rows: Vec<EscapeRow>,
    /// Intercept of the least-squares line of `ε log P̂` against `ε` over
    /// rows with observed exits (needs two such rows).
    pub extrapolated: Option<f64>,
}

impl EscapeTable {
    /// `eps,p_hat,stderr,eps_log_p,bound`; `bound` is 1 for upper-bound rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,p_hat,stderr,eps_log_p,bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(r.epsilon),
                fmt17(r.p_hat),
                fmt17(r.stderr),
                fmt17(r.eps_log_p),
                u8::from(r.upper_bound_only)
            ));
        }
        s
    }
}

/// Exact one-sided upper bound on `p` after zero successes in `n` trials.
pub fn zero_exit_upper_bound(n: usize, confidence: f64) -> f64 {
    1.0 - (1.0 - confidence).powf(1.0 / n as f64)
}

/// Uncontrolled run: step at which the iterate first leaves `region`, if
/// within `max_steps`.
pub fn first_exit<R: rand::Rng>(
    sa: &GeneralSA,
    region: &EscapeRegion,
    max_steps: usize,
    rng: &mut R,
) -> Result<Option<usize>> {
    let d = sa.dim();
    let mut x = sa.x0.clone();
    let (mut z1, mut z2) = sa.z0;
    let mut u = vec![0.0; d];
    for step in 0..max_steps {
        sa.drift.eval_into(&x, z1, z2, &mut u);
        for i in 0..d {
            x[i] += sa.epsilon * u[i];
        }
        if !region.contains(&x) {
            return Ok(Some(step + 1));
        }
        let k1 = sa.noise1.at(&x)?;
        z1 = sample_index(&k1.row(z1), rng.random::<f64>());
        z2 = sample_index(&sa.noise2.row(z2), rng.random::<f64>());
    }
    Ok(None)
}

fn validate(sa: &GeneralSA, region: &EscapeRegion, epsilons: &[f64], replicates: usize) -> Result<()> {
    if !region.contains(&sa.x0) {
        return Err(Error::Domain("the start point must lie inside the region".into()));
    }
    if region.dim() != sa.dim() {
        return Err(Error::Shape("region and iterate dimensions differ".into()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::Domain("ε values must lie in (0, 1)".into()));
    }
    if replicates == 0 {
        return Err(Error::Domain("need at least one replicate".into()));
    }
    Ok(())
}

fn mean_and_variance(terms: &[f64]) -> (f64, f64) {
    let n = terms.len() as f64;
    let mean = pairwise_sum(terms) / n;
    let sq: Vec<f64> = terms.iter().map(|t| (t - mean) * (t - mean)).collect();
    let var = if terms.len() > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// `P(τ_G ≤ T)` per ε. Replicate `r` at ladder position `e` uses stream
/// `(e << 32) | r` of `seed`.
pub fn estimate_escape_mc(
    sa: &GeneralSA,
    region: &EscapeRegion,
    horizon: f64,
    epsilons: &[f64],
    replicates: usize,
    seed: u64,
    mode: &SamplingMode,
) -> Result<EscapeTable> {
    validate(sa, region, epsilons, replicates)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for (ei, &eps) in epsilons.iter().enumerate() {
        let sa_eps = sa.with_epsilon(eps)?;
        let (n, _) = step_count(horizon, eps);
        let schedule = match mode {
            SamplingMode::Crude => None,
            SamplingMode::Importance { path, block_length, delta, burn_in } => Some(
                build_control_schedule(&sa_eps, path, *block_length, *delta, eps, *burn_in)
                    .map_err(|e| e.context(format!("control schedule at ε = {eps}")))?,
            ),
        };
        let terms: Vec<(f64, bool)> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<(f64, bool)> {
                let mut rng = replicate_rng(seed, ((ei as u64) << 32) | r as u64);
                match &schedule {
                    None => {
                        let hit = first_exit(&sa_eps, region, n, &mut rng)?.is_some();
                        Ok((if hit { 1.0 } else { 0.0 }, hit))
                    }
                    Some(s) => {
                        let run = simulate_controlled(&sa_eps, s, horizon, Some(region), &mut rng)?;
                        match run.exited_at {
                            Some(_) => Ok(((-run.record.log_likelihood_ratio).exp(), true)),
                            None => Ok((0.0, false)),
                        }
                    }
                }
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let exits = terms.iter().filter(|t| t.1).count();
        let (p_hat, variance) = mean_and_variance(&values);
        let stderr = (variance / replicates as f64).sqrt();
        let (eps_log_p, upper_bound_only) = if exits == 0 {
            (eps * zero_exit_upper_bound(replicates, ZERO_EXIT_CONFIDENCE).ln(), true)
        } else {
            (eps * p_hat.ln(), false)
        };
        rows.push(EscapeRow {
            epsilon: eps,
            p_hat,
            stderr,
            variance,
            eps_log_p,
            upper_bound_only,
            exits,
            replicates,
        });
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.upper_bound_only)
        .map(|r| (r.epsilon, r.eps_log_p))
        .collect();
    let extrapolated = (fit.len() >= 2).then(|| {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        my - sxy / sxx * mx
    });
    Ok(EscapeTable { rows, extrapolated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitTimeRow {
    pub epsilon: f64,
    /// Mean of `τ = (exit step)·ε` over uncensored runs.
    pub mean_tau: f64,
    pub eps_log_mean_tau: f64,
    pub censored_fraction: f64,
    /// More than half of the runs hit the step cap.
    pub unreliable: bool,
    pub replicates: usize,
}

pub fn exit_time_csv(rows: &[ExitTimeRow]) -> String {
    let mut s = String::from("eps,mean_tau,eps_log_mean_tau,censored_fraction,unreliable\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(r.epsilon),
            fmt17(r.mean_tau),
            fmt17(r.eps_log_mean_tau),
            fmt17(r.censored_fraction),
            u8::from(r.unreliable)
        ));
    }
    s
}

/// Empirical mean exit time per ε, each run capped at `max_steps`.
pub fn mean_exit_time(
    sa: &GeneralSA,
    region: &EscapeRegion,
    epsilons: &[f64],
    replicates: usize,
    seed: u64,
    max_steps: usize,
) -> Result<Vec<ExitTimeRow>> {
    validate(sa, region, epsilons, replicates)?;
    let mut rows = Vec::new();
    for (ei, &eps) in epsilons.iter().enumerate() {
        let sa_eps = sa.with_epsilon(eps)?;
        let exits: Vec<Option<usize>> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = replicate_rng(seed, ((ei as u64) << 32) | r as u64);
                first_exit(&sa_eps, region, max_steps, &mut rng)
            })
            .collect::<Result<_>>()?;
        let times: Vec<f64> = exits.iter().flatten().map(|&s| s as f64 * eps).collect();
        let censored = replicates - times.len();
        let mean_tau = if times.is_empty() {
            f64::NAN
        } else {
            pairwise_sum(&times) / times.len() as f64
        };
        let censored_fraction = censored as f64 / replicates as f64;
        rows.push(ExitTimeRow {
            epsilon: eps,
            mean_tau,
            eps_log_mean_tau: eps * mean_tau.ln(),
            censored_fraction,
            unreliable: censored_fraction > 0.5,
            replicates,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{StateDepKernel, StochasticKernel};
    use crate::sa::Drift;

    fn sa2(x0: f64) -> GeneralSA {
        let k = StochasticKernel::from_rows(vec![vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        let drift = Drift::from_fn(1, |x, z1, _, out| out[0] = z1 as f64 - x[0]);
        GeneralSA::new(
            drift,
            StateDepKernel::constant(k),
            StochasticKernel::identity(1),
            0.1,
            vec![x0],
            (0, 0),
        )
        .unwrap()
    }

    #[test]
    fn unreachable_region_never_exits() {
        // |U| ≤ 1 + |x| keeps the iterate inside [−2, 3] for T = 1
        let g = EscapeRegion::interval(0.5, 5.0).unwrap();
        let t = estimate_escape_mc(&sa2(0.5), &g, 1.0, &[0.1, 0.05], 100, 1, &SamplingMode::Crude).unwrap();
        for r in &t.rows {
            assert_eq!(r.p_hat, 0.0);
            assert!(r.upper_bound_only);
            assert!((r.eps_log_p - r.epsilon * zero_exit_upper_bound(100, 0.95).ln()).abs() < 1e-15);
        }
        assert!(t.extrapolated.is_none());
    }

    #[test]
    fn tiny_region_exits_immediately() {
        let g = EscapeRegion::interval(0.5, 1e-3).unwrap();
        let t = estimate_escape_mc(&sa2(0.5), &g, 1.0, &[0.5], 100, 1, &SamplingMode::Crude).unwrap();
        assert_eq!(t.rows[0].p_hat, 1.0);
        assert_eq!(t.rows[0].eps_log_p, 0.0);
        let rows = mean_exit_time(&sa2(0.5), &g, &[0.5], 100, 1, 1000).unwrap();
        assert!((rows[0].mean_tau - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_exit_bound_is_exact_binomial() {
        let b = zero_exit_upper_bound(100, 0.95);
        assert!(((1.0 - b).powi(100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn censoring_flag() {
        let g = EscapeRegion::interval(0.5, 5.0).unwrap();
        let rows = mean_exit_time(&sa2(0.5), &g, &[0.1], 100, 1, 50).unwrap();
        assert!(rows[0].unreliable);
        assert_eq!(rows[0].censored_fraction, 1.0);
    }

    #[test]
    fn nested_regions_order_exit_times() {
        let small = EscapeRegion::interval(0.5, 0.1).unwrap();
        let large = EscapeRegion::interval(0.5, 0.2).unwrap();
        let a = mean_exit_time(&sa2(0.5), &small, &[0.1], 200, 9, 100_000).unwrap();
        let b = mean_exit_time(&sa2(0.5), &large, &[0.1], 200, 9, 100_000).unwrap();
        // identical streams: each run leaves the small interval first
        assert!(a[0].mean_tau <= b[0].mean_tau);
    }
}
