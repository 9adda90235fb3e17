//! Least-action paths from a point to the boundary of a region.
//!
//! Paths are piecewise linear with a fixed number of segments. The action
//! uses left-knot quadrature, so its gradient follows from the envelope
//! identities `∂L/∂β = α*` and `∂L/∂x = −∂H/∂x(x, α*)`; the latter is
//! taken by central differences. The terminal knot is drawn to the boundary
//! by a quadratic penalty with increasing weight and projected onto it at
//! the end. Starts: straight lines to each boundary target at several
//! hitting times, and the mean ODE path when it leaves the region.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::region::EscapeRegion;
use crate::fluid::integrate_ode_from;
use crate::numeric::{dot, norm2};
use crate::rate::path::segment_rates;
use crate::rate::{DualProblem, FrozenNoise, PathSpec};
use crate::sa::GeneralSA;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeOptions {
    /// Hitting times as fractions of the horizon.
    pub hitting_fractions: Vec<f64>,
    pub penalties: Vec<f64>,
    pub max_iterations: usize,
    pub fd_step: f64,
}

impl Default for EscapeOptions {
    fn default() -> Self {
        Self {
            hitting_fractions: vec![1.0, 0.75, 0.5],
            penalties: vec![1e1, 1e2, 1e3, 1e4],
            max_iterations: 200,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapePath {
    /// Path on `[0, s]`, ending on the boundary.
    pub path: PathSpec,
    pub action: f64,
    pub segment_rates: Vec<f64>,
    pub hitting_time: f64,
    /// Description of the start that produced the optimum.
    pub start: String,
}

struct Objective<'a> {
    sa: &'a GeneralSA,
    region: &'a EscapeRegion,
    x0: Vec<f64>,
    horizon: f64,
    segments: usize,
    fd_step: f64,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    fn knots(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut k = vec![self.x0.clone()];
        k.extend(z.chunks(d).map(|c| c.to_vec()));
        k
    }

    /// Action plus penalty, and its gradient in the free knots.
    fn eval(&self, z: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
        let knots = self.knots(z);
        let d = self.dim();
        let dt = self.horizon / self.segments as f64;
        let h = self.fd_step;
        let per_segment: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = (0..self.segments)
            .into_par_iter()
            .map(|i| -> Result<Option<(f64, Vec<f64>, Vec<f64>)>> {
                let x = &knots[i];
                let v: Vec<f64> = knots[i + 1].iter().zip(x).map(|(b, a)| (b - a) / dt).collect();
                let q = match DualProblem::new(self.sa, x)?.solve(&v, None) {
                    Ok(q) => q,
                    // boundary velocities are treated as unusable
                    Err(Error::NoConvergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let Some(alpha) = q.alpha else { return Ok(None) };
                let mut dldx = vec![0.0; d];
                for j in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let hp = FrozenNoise::new(self.sa, &xp)?.hamiltonian(&alpha)?;
                    let hm = FrozenNoise::new(self.sa, &xm)?.hamiltonian(&alpha)?;
                    dldx[j] = -(hp - hm) / (2.0 * h);
                }
                Ok(Some((q.value, alpha, dldx)))
            })
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut grad = vec![0.0; z.len()];
        for (i, s) in per_segment.iter().enumerate() {
            let Some((l, alpha, dldx)) = s else {
                return Ok((f64::INFINITY, grad));
            };
            total += dt * l;
            // knot i + 1 is free variable block i
            for j in 0..d {
                grad[i * d + j] += alpha[j];
                if i > 0 {
                    grad[(i - 1) * d + j] += -alpha[j] + dt * dldx[j];
                }
            }
        }
        let end = knots.last().unwrap();
        let dist = self.region.signed_distance(end);
        let proj = self.region.project_to_boundary(end);
        let off: Vec<f64> = end.iter().zip(&proj).map(|(a, b)| a - b).collect();
        total += mu * dist * dist;
        let last = (self.segments - 1) * d;
        for j in 0..d {
            grad[last + j] += 2.0 * mu * off[j];
        }
        Ok((total, grad))
    }
}

/// BFGS with backtracking; infinite values shrink the step.
fn bfgs(obj: &Objective<'_>, z0: Vec<f64>, mu: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let n = z0.len();
    let mut z = z0;
    let (mut f, mut g) = obj.eval(&z, mu)?;
    if !f.is_finite() {
        return Ok((z, f));
    }
    let mut hinv = DMatrix::<f64>::identity(n, n) * 0.1;
    for _ in 0..max_iter {
        if norm2(&g) < 1e-7 {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut p: Vec<f64> = (-(&hinv * &gv)).iter().cloned().collect();
        if dot(&p, &g) >= 0.0 {
            hinv = DMatrix::identity(n, n) * 0.1;
            p = g.iter().map(|v| -0.1 * v).collect();
        }
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-12 {
            let cand: Vec<f64> = z.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let (fc, gc) = obj.eval(&cand, mu)?;
            if fc.is_finite() && fc <= f + 1e-4 * t * dot(&g, &p) {
                next = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((zn, fnew, gn)) = next else { break };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 {
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &sv * yv.transpose() * rho;
            let b = &i - &yv * sv.transpose() * rho;
            hinv = &a * &hinv * &b + &sv * sv.transpose() * rho;
        }
        let done = (f - fnew).abs() <= 1e-13 * (1.0 + f.abs());
        z = zn;
        f = fnew;
        g = gn;
        if done {
            break;
        }
    }
    Ok((z, f))
}

fn straight_line(from: &[f64], to: &[f64], segments: usize) -> Vec<Vec<f64>> {
    (0..=segments)
        .map(|i| {
            let s = i as f64 / segments as f64;
            from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect()
        })
        .collect()
}

fn finalize(sa: &GeneralSA, region: &EscapeRegion, horizon: f64, mut knots: Vec<Vec<f64>>, start: String) -> Result<EscapePath> {
    let last = knots.len() - 1;
    knots[last] = region.project_to_boundary(&knots[last]);
    let path = PathSpec::new(horizon, knots)?;
    let rates = match segment_rates(sa, &path) {
        Ok(r) => r,
        Err(_) => vec![f64::INFINITY; path.segments()],
    };
    let action = if rates.iter().any(|r| r.is_infinite()) {
        f64::INFINITY
    } else {
        path.dt() * crate::numeric::pairwise_sum(&rates)
    };
    Ok(EscapePath { path, action, segment_rates: rates, hitting_time: horizon, start })
}

/// Least action over paths from `x` reaching the boundary by time `T`.
pub fn minimize_escape_action(
    sa: &GeneralSA,
    region: &EscapeRegion,
    x: &[f64],
    horizon: f64,
    segments: usize,
    options: &EscapeOptions,
) -> Result<EscapePath> {
    if !region.contains(x) {
        return Err(Error::Domain("start point must lie inside the region".into()));
    }
    if segments < 1 || !(horizon > 0.0) {
        return Err(Error::Domain("need at least one segment and a positive horizon".into()));
    }
    let mut best: Option<EscapePath> = None;
    let mut consider = |cand: EscapePath| {
        if cand.action.is_finite() && best.as_ref().is_none_or(|b| cand.action < b.action) {
            best = Some(cand);
        }
    };

    // the mean ODE path, cut where it first leaves the region
    let ode = integrate_ode_from(sa, x, horizon, horizon / (segments as f64 * 8.0))?;
    if let Some(i) = ode.values.iter().position(|v| !region.contains(v)) {
        let hit = ode.grid[i].max(ode.dt);
        let knots: Vec<Vec<f64>> = (0..=segments)
            .map(|k| ode.value_at(hit * k as f64 / segments as f64))
            .collect();
        consider(finalize(sa, region, hit, knots, "mean ODE".into())?);
    }

    for (ti, target) in region.boundary_targets().iter().enumerate() {
        for &frac in &options.hitting_fractions {
            let s = horizon * frac;
            let line = straight_line(x, target, segments);
            let label = format!("target {ti}, hitting time {s}");
            consider(finalize(sa, region, s, line.clone(), label.clone())?);
            let obj = Objective {
                sa,
                region,
                x0: x.to_vec(),
                horizon: s,
                segments,
                fd_step: options.fd_step,
            };
            let mut z: Vec<f64> = line[1..].iter().flatten().cloned().collect();
            let mut finite = true;
            for &mu in &options.penalties {
                let (zn, f) = bfgs(&obj, z.clone(), mu, options.max_iterations)?;
                if !f.is_finite() {
                    finite = false;
                    break;
                }
                z = zn;
            }
            if finite {
                consider(finalize(sa, region, s, obj.knots(&z), label)?);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Domain("boundary unreachable: every start has a segment with infinite rate".into())
    })
}
