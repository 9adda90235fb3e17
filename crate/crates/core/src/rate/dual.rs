//! Local rate by Legendre transform: `L(x, β) = sup_α ⟨α, β⟩ − H(x, α)`.
//!
//! The drift values are first reduced to their affine hull; any component
//! of `β` off that hull makes `L` infinite along the residual direction.
//! Inside the hull the concave objective is maximized by damped Newton
//! steps with the analytic Hessian.

use nalgebra::{DMatrix, DVector};

use super::attain::{attainability, certify_outside, AffineHull, Attainability};
use super::hamiltonian::FrozenNoise;
use crate::numeric::{dot, norm2};
use crate::sa::GeneralSA;
use crate::{Error, Result};

/// Stop when the reduced gradient `‖β − ∇H‖` falls below this.
pub const DUAL_GRAD_TOL: f64 = 1e-11;
const MAX_NEWTON: usize = 200;

/// A local rate evaluation. `value` may be `+∞`, in which case
/// `certificate` holds a unit direction `v` with `⟨v, β⟩` strictly above
/// every achievable `⟨v, c⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateQuery {
    pub x: Vec<f64>,
    pub beta: Vec<f64>,
    /// Maximizing multiplier; `None` when the value is infinite.
    pub alpha: Option<Vec<f64>>,
    pub value: f64,
    pub certificate: Option<Vec<f64>>,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl RateQuery {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Frozen problem at one `x`: reduced noise system plus the hull map.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub full: FrozenNoise,
    reduced: FrozenNoise,
    hull: AffineHull,
    adj: Vec<Vec<usize>>,
}

impl DualProblem {
    pub fn new(sa: &GeneralSA, x: &[f64]) -> Result<Self> {
        let full = FrozenNoise::new(sa, x)?;
        let hull = AffineHull::new(&full.table);
        let reduced = FrozenNoise {
            x: x.to_vec(),
            kernel: full.kernel.clone(),
            table: hull.coords.clone(),
        };
        let adj = full.kernel.support_graph();
        Ok(Self { full, reduced, hull, adj })
    }

    fn infinite(&self, beta: &[f64], direction: Vec<f64>, iterations: usize) -> RateQuery {
        RateQuery {
            x: self.full.x.clone(),
            beta: beta.to_vec(),
            alpha: None,
            value: f64::INFINITY,
            certificate: Some(direction),
            grad_norm: f64::NAN,
            iterations,
        }
    }

    /// `L(x, β)` starting Newton from reduced multiplier `start`
    /// (zero when `None`).
    pub fn solve(&self, beta: &[f64], start: Option<&[f64]>) -> Result<RateQuery> {
        let d = self.full.dim();
        if beta.len() != d {
            return Err(Error::Shape(format!("β has dimension {}, drift has {d}", beta.len())));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("β must be finite".into()));
        }
        let (b, resid) = self.hull.split(beta);
        let scale = 1.0 + self.full.table.iter().map(|u| norm2(u)).fold(0.0, f64::max);
        let rn = norm2(&resid);
        if rn > 1e-10 * scale {
            let v: Vec<f64> = resid.iter().map(|r| r / rn).collect();
            return Ok(self.infinite(beta, v, 0));
        }
        let r = self.hull.rank();
        if r == 0 {
            return Ok(RateQuery {
                x: self.full.x.clone(),
                beta: beta.to_vec(),
                alpha: Some(vec![0.0; d]),
                value: 0.0,
                certificate: None,
                grad_norm: 0.0,
                iterations: 0,
            });
        }
        // beyond this multiplier size the tilted chain is numerically frozen
        let ymax = self.hull.coords.iter().map(|y| norm2(y)).fold(0.0, f64::max);
        let cap = 300.0 / ymax.max(1e-300);

        let mut a: Vec<f64> = start.map_or(vec![0.0; r], |s| s.to_vec());
        if a.len() != r {
            a = vec![0.0; r];
        }
        let objective = |a: &[f64]| -> Result<(f64, Vec<f64>, super::hamiltonian::TiltEval)> {
            let ev = self.reduced.eval(a)?;
            let g = dot(a, &b) - ev.h;
            let grad: Vec<f64> = b.iter().zip(&ev.grad).map(|(bi, gi)| bi - gi).collect();
            Ok((g, grad, ev))
        };
        let (mut g, mut grad, mut ev) = objective(&a)?;
        let mut iterations = 0;
        let mut diverged = false;
        while iterations < MAX_NEWTON {
            let gn = norm2(&grad);
            if gn <= DUAL_GRAD_TOL * scale {
                break;
            }
            iterations += 1;
            // the tilted chain degenerates only as the multiplier runs off
            let Ok(hess) = self.reduced.hessian(&a, &ev) else {
                diverged = true;
                break;
            };
            let step = newton_direction(&hess, &grad);
            // Newton decrement at rounding level: nothing left to gain
            let decrement = dot(&grad, &step);
            if decrement <= 1e-24 * (1.0 + g.abs()) {
                break;
            }
            // backtracking on the concave objective
            let mut t = 1.0;
            let mut accepted = false;
            let step_norm = norm2(&step);
            let mut hit_cap = false;
            while t > 1e-14 {
                let cand: Vec<f64> = a.iter().zip(&step).map(|(ai, si)| ai + t * si).collect();
                if norm2(&cand) > cap {
                    hit_cap = true;
                    t *= 0.5;
                    continue;
                }
                let Ok((gc, gradc, evc)) = objective(&cand) else {
                    t *= 0.5;
                    continue;
                };
                if gc >= g + 1e-4 * t * dot(&grad, &step) || (gc >= g && norm2(&gradc) < gn) {
                    a = cand;
                    g = gc;
                    grad = gradc;
                    ev = evc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            diverged = hit_cap && !accepted;
            // the iterate no longer moves
            let stalled = t * step_norm <= 1e-13 * (1.0 + norm2(&a));
            if diverged || !accepted || stalled {
                break;
            }
        }
        let gn = norm2(&grad);
        if gn <= 1e-8 * scale && !diverged {
            return Ok(RateQuery {
                x: self.full.x.clone(),
                beta: beta.to_vec(),
                alpha: Some(self.hull.lift_direction(&a)),
                value: g.max(0.0),
                certificate: None,
                grad_norm: gn,
                iterations,
            });
        }
        // Newton could not settle: β is outside or on the boundary of the
        // achievable drift set.
        let direction = self.hull.lift_direction(&a);
        if let Some(Attainability::Outside { direction, .. }) =
            certify_outside(&self.adj, &self.full.table, beta, &direction)
        {
            return Ok(self.infinite(beta, direction, iterations));
        }
        let mean = self.full.eval(&vec![0.0; d])?.grad;
        match attainability(&self.adj, &self.full.table, beta, &mean, 1e-10 * scale) {
            Attainability::Outside { direction, .. } => Ok(self.infinite(beta, direction, iterations)),
            Attainability::Inside { .. } => Err(Error::NoConvergence {
                iterations,
                best_value: g,
                grad_norm: gn,
            }),
        }
    }

    /// Reduced multiplier corresponding to a full one (for warm starts).
    pub fn reduce_alpha(&self, alpha: &[f64]) -> Vec<f64> {
        let b = &self.hull.basis;
        (0..b.ncols())
            .map(|j| (0..b.nrows()).map(|i| b[(i, j)] * alpha[i]).sum())
            .collect()
    }
}

/// Solve `Σ s = grad`, falling back to a lightly regularized system when
/// the covariance is singular.
fn newton_direction(hess: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let r = grad.len();
    let g = DVector::from_column_slice(grad);
    let tr = hess.trace().abs().max(1e-300);
    let mut tau = 0.0;
    loop {
        let m = hess + DMatrix::identity(r, r) * tau;
        if let Some(ch) = m.clone().cholesky() {
            let s = ch.solve(&g);
            if s.iter().all(|v| v.is_finite()) {
                return s.iter().cloned().collect();
            }
        }
        tau = if tau == 0.0 { 1e-12 * tr } else { tau * 10.0 };
        if tau > 1e6 * tr {
            return grad.to_vec();
        }
    }
}

/// `L(x, β)` by the dual route.
pub fn local_rate_dual(sa: &GeneralSA, x: &[f64], beta: &[f64]) -> Result<RateQuery> {
    DualProblem::new(sa, x)?.solve(beta, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{StateDepKernel, StochasticKernel};
    use crate::sa::Drift;

    fn sym2() -> GeneralSA {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let drift = Drift::from_fn(1, |_, z1, _, out| out[0] = z1 as f64);
        GeneralSA::new(
            drift,
            StateDepKernel::constant(k),
            StochasticKernel::identity(1),
            0.1,
            vec![0.0],
            (0, 0),
        )
        .unwrap()
    }

    fn grid_conjugate(beta: f64) -> f64 {
        // dense α-grid oracle for sup_α αβ − log((1+e^α)/2)
        let mut best = f64::NEG_INFINITY;
        let n = 2_000_000;
        for i in 0..=n {
            let a = -20.0 + 40.0 * i as f64 / n as f64;
            let v = a * beta - ((1.0 + a.exp()) / 2.0).ln();
            best = best.max(v);
        }
        best
    }

    #[test]
    fn mean_velocity_costs_nothing() {
        let q = local_rate_dual(&sym2(), &[0.0], &[0.5]).unwrap();
        assert!(q.value.abs() < 1e-12);
        assert!(q.alpha.unwrap()[0].abs() < 1e-10);
    }

    #[test]
    fn two_state_conjugate_matches_grid() {
        let q = local_rate_dual(&sym2(), &[0.0], &[0.75]).unwrap();
        let oracle = grid_conjugate(0.75);
        assert!((q.value - oracle).abs() < 1e-9, "{} vs {oracle}", q.value);
        // the maximizer is log 3
        assert!((q.alpha.unwrap()[0] - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn outside_hull_is_infinite() {
        let q = local_rate_dual(&sym2(), &[0.0], &[1.5]).unwrap();
        assert!(q.value.is_infinite());
        assert_eq!(q.certificate.unwrap(), vec![1.0]);
        let q = local_rate_dual(&sym2(), &[0.0], &[-0.1]).unwrap();
        assert!(q.value.is_infinite());
        assert_eq!(q.certificate.unwrap(), vec![-1.0]);
    }

    #[test]
    fn off_hull_component_is_infinite() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let drift = Drift::from_fn(2, |_, z1, _, out| {
            out[0] = z1 as f64;
            out[1] = z1 as f64;
        });
        let sa = GeneralSA::new(
            drift,
            StateDepKernel::constant(k),
            StochasticKernel::identity(1),
            0.1,
            vec![0.0, 0.0],
            (0, 0),
        )
        .unwrap();
        let q = local_rate_dual(&sa, &[0.0, 0.0], &[0.5, 0.4]).unwrap();
        assert!(q.value.is_infinite());
        let q = local_rate_dual(&sa, &[0.0, 0.0], &[0.3, 0.3]).unwrap();
        assert!(q.value.is_finite() && q.value > 0.0);
    }

    #[test]
    fn unsustainable_vertex_is_infinite() {
        // deterministic flip: only 0.5 is sustainable
        let k = StochasticKernel::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let drift = Drift::from_fn(1, |_, z1, _, out| out[0] = z1 as f64);
        let sa = GeneralSA::new(
            drift,
            StateDepKernel::constant(k),
            StochasticKernel::identity(1),
            0.1,
            vec![0.0],
            (0, 0),
        )
        .unwrap();
        let q = local_rate_dual(&sa, &[0.0], &[0.7]).unwrap();
        assert!(q.value.is_infinite());
        let q = local_rate_dual(&sa, &[0.0], &[0.5]).unwrap();
        assert!(q.value.abs() < 1e-12);
    }
}
