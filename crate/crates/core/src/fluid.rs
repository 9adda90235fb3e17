//! Mean ODE `Ẋ = Ū(X)` and empirical convergence of the interpolated
//! iterates toward it.

use rayon::prelude::*;

use crate::markov::invariant_measure;
use crate::numeric::{fmt17, median, norm2, replicate_rng};
use crate::sa::{simulate_with_rng, GeneralSA};
use crate::{Error, Result};

/// `Ū(x) = Σ_{z1,z2} U(x,z1,z2) π¹_x(z1) π²(z2)`.
pub fn mean_drift(sa: &GeneralSA, x: &[f64]) -> Result<Vec<f64>> {
    let pi1 = invariant_measure(&sa.noise1.at(x)?)
        .map_err(|e| e.context("own-noise kernel at x"))?;
    let pi2 = invariant_measure(&sa.noise2).map_err(|e| e.context("exogenous noise kernel"))?;
    let d = sa.dim();
    let mut out = vec![0.0; d];
    let mut u = vec![0.0; d];
    for (z1, &p1) in pi1.weights().iter().enumerate() {
        for (z2, &p2) in pi2.weights().iter().enumerate() {
            let w = p1 * p2;
            if w == 0.0 {
                continue;
            }
            sa.drift.eval_into(x, z1, z2, &mut u);
            for i in 0..d {
                out[i] += w * u[i];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub dt: f64,
    pub method: &'static str,
    /// `‖X_dt(T) − X_{dt/2}(T)‖`.
    pub step_halving_error: f64,
}

impl OdeSolution {
    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("non-empty solution")
    }

    /// Linear interpolation between grid points.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let n = self.grid.len() - 1;
        let s = (t / self.dt).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(1));
        let frac = s - i as f64;
        if n == 0 {
            return self.values[0].clone();
        }
        self.values[i]
            .iter()
            .zip(&self.values[i + 1])
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }
}

fn rk4_run(sa: &GeneralSA, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let d = x0.len();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    out.push(x.clone());
    let shifted = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    for _ in 0..steps {
        let k1 = mean_drift(sa, &x)?;
        let k2 = mean_drift(sa, &shifted(&x, &k1, dt / 2.0))?;
        let k3 = mean_drift(sa, &shifted(&x, &k2, dt / 2.0))?;
        let k4 = mean_drift(sa, &shifted(&x, &k3, dt))?;
        for i in 0..d {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Classical RK4 from `sa.x0` on `[0, T]`. A non-integer `T/dt` is handled
/// by shrinking `dt` to `T / ⌈T/dt⌉`.
pub fn integrate_ode(sa: &GeneralSA, horizon: f64, dt: f64) -> Result<OdeSolution> {
    integrate_ode_from(sa, &sa.x0, horizon, dt)
}

pub fn integrate_ode_from(sa: &GeneralSA, x0: &[f64], horizon: f64, dt: f64) -> Result<OdeSolution> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Domain(format!(
            "need dt > 0 and T ≥ 0, got dt = {dt}, T = {horizon}"
        )));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps == 0 { dt } else { horizon / steps as f64 };
    let values = rk4_run(sa, x0, dt, steps)?;
    let fine = rk4_run(sa, x0, dt / 2.0, 2 * steps)?;
    let step_halving_error = norm2(&crate::numeric::sub(
        values.last().unwrap(),
        fine.last().unwrap(),
    ));
    Ok(OdeSolution {
        grid: (0..=steps).map(|i| i as f64 * dt).collect(),
        values,
        dt,
        method: "rk4",
        step_halving_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    pub residual: f64,
    pub method: &'static str,
}

/// Rest point of the mean ODE near `start`: damped fixed-point iteration
/// `x ← x + h·Ū(x)` to residual `< 1e-10`, falling back to integrating the
/// ODE to a long horizon and iterating again from there.
pub fn find_equilibrium(sa: &GeneralSA, start: &[f64]) -> Result<Equilibrium> {
    const TOL: f64 = 1e-10;
    let iterate = |x0: &[f64]| -> Result<(Vec<f64>, f64)> {
        let mut x = x0.to_vec();
        let mut h = 0.5;
        let mut res = norm2(&mean_drift(sa, &x)?);
        for _ in 0..20_000 {
            if res < TOL {
                break;
            }
            let u = mean_drift(sa, &x)?;
            let cand: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let r = norm2(&mean_drift(sa, &cand)?);
            if r < res {
                x = cand;
                res = r;
                h = (h * 1.2).min(1.0);
            } else {
                h *= 0.5;
                if h < 1e-8 {
                    break;
                }
            }
        }
        Ok((x, res))
    };
    let (x, res) = iterate(start)?;
    if res < TOL {
        return Ok(Equilibrium { x, residual: res, method: "fixed-point" });
    }
    let long = integrate_ode_from(sa, start, 200.0, 0.05)?;
    let (x, res) = iterate(long.terminal())?;
    if res < TOL {
        Ok(Equilibrium { x, residual: res, method: "ode+fixed-point" })
    } else {
        Err(Error::NoConvergence {
            iterations: 20_000,
            best_value: res,
            grad_norm: res,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakConvergenceRow {
    pub epsilon: f64,
    pub median_deviation: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakConvergenceReport {
    pub rows: Vec<WeakConvergenceRow>,
    /// Last median strictly below the first (or every deviation zero).
    pub decreasing: bool,
}

impl WeakConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,median_deviation,replicates\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}\n",
                fmt17(r.epsilon),
                fmt17(r.median_deviation),
                r.replicates
            ));
        }
        s
    }
}

/// Median over replicates of `sup_{t ≤ T} ‖X^ε(t) − X(t)‖`, per ε.
/// The ODE reference uses `dt = min ε / 10`; the supremum is taken over
/// that grid.
pub fn weak_convergence_report(
    sa: &GeneralSA,
    horizon: f64,
    epsilons: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<WeakConvergenceReport> {
    if epsilons.is_empty() || replicates == 0 {
        return Err(Error::Domain("need at least one ε and one replicate".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("ε ladder must be strictly decreasing".into()));
    }
    let eps_min = *epsilons.last().unwrap();
    let ode = integrate_ode(sa, horizon, eps_min / 10.0)?;
    let mut rows = Vec::new();
    for (ei, &eps) in epsilons.iter().enumerate() {
        let sa_eps = sa.with_epsilon(eps)?;
        let mut devs: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = replicate_rng(seed, ((ei as u64) << 32) | r as u64);
                let traj = simulate_with_rng(&sa_eps, horizon, &mut rng)?;
                let mut sup = 0.0f64;
                for (t, x) in ode.grid.iter().zip(&ode.values) {
                    if *t > traj.horizon + 1e-12 {
                        break;
                    }
                    let dev = norm2(&crate::numeric::sub(traj.interpolate(*t), x));
                    sup = sup.max(dev);
                }
                Ok(sup)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(WeakConvergenceRow {
            epsilon: eps,
            median_deviation: median(&mut devs),
            replicates,
        });
    }
    let first = rows.first().unwrap().median_deviation;
    let last = rows.last().unwrap().median_deviation;
    let decreasing = last < first || rows.iter().all(|r| r.median_deviation == 0.0);
    Ok(WeakConvergenceReport { rows, decreasing })
}
