//! The Hamiltonian `H(x, α)`: log Perron root of the exponentially tilted
//! noise kernel `T(w, w') = ρ_x(w, w')·exp⟨α, U(x, w)⟩` on `M × M²`.
//!
//! `∇_α H` is the mean of `U(x, ·)` under the invariant measure of the
//! Doob-transformed kernel, and `∇²_α H` is the asymptotic covariance of
//! `U(x, w_n)` under that kernel.

use nalgebra::{DMatrix, DVector};

use super::perron::perron;
use crate::markov::{check_irreducible_aperiodic, StochasticKernel};
use crate::numeric::dot;
use crate::sa::GeneralSA;
use crate::{Error, Result};

/// Base product kernel and drift table frozen at one point `x`.
#[derive(Debug, Clone)]
pub struct FrozenNoise {
    pub x: Vec<f64>,
    pub kernel: StochasticKernel,
    /// `U(x, w)` per joint noise state.
    pub table: Vec<Vec<f64>>,
}

/// Everything computed at one `(x, α)`.
#[derive(Debug, Clone)]
pub struct TiltEval {
    pub h: f64,
    pub grad: Vec<f64>,
    /// Invariant measure of the tilted (Doob-transformed) kernel.
    pub tilted_pi: Vec<f64>,
    right: DVector<f64>,
    root: f64,
    shift: f64,
}

impl FrozenNoise {
    pub fn new(sa: &GeneralSA, x: &[f64]) -> Result<Self> {
        let kernel = sa.product_at(x)?;
        let report = check_irreducible_aperiodic(&kernel);
        if !report.irreducible {
            return Err(Error::Reducible {
                components: report.components,
            });
        }
        Ok(Self {
            x: x.to_vec(),
            kernel,
            table: sa.drift_table(x),
        })
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    pub fn dim(&self) -> usize {
        self.table.first().map_or(0, |u| u.len())
    }

    fn tilted_matrix(&self, alpha: &[f64]) -> (DMatrix<f64>, f64) {
        let s: Vec<f64> = self.table.iter().map(|u| dot(alpha, u)).collect();
        let shift = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = self.size();
        let m = DMatrix::from_fn(n, n, |i, j| self.kernel.get(i, j) * (s[i] - shift).exp());
        (m, shift)
    }

    pub fn eval(&self, alpha: &[f64]) -> Result<TiltEval> {
        if alpha.len() != self.dim() {
            return Err(Error::Shape(format!(
                "α has dimension {}, drift has {}",
                alpha.len(),
                self.dim()
            )));
        }
        let (t, shift) = self.tilted_matrix(alpha);
        let p = perron(&t)?;
        // a constant tilt leaves the stochastic kernel, whose root is 1
        let root = if t == *self.kernel.matrix() { 1.0 } else { p.root };
        let h = shift + root.ln();
        let pi: Vec<f64> = p.left.iter().zip(p.right.iter()).map(|(l, r)| l * r).collect();
        let total: f64 = pi.iter().sum();
        let tilted_pi: Vec<f64> = pi.iter().map(|v| v / total).collect();
        let mut grad = vec![0.0; self.dim()];
        for (w, &m) in tilted_pi.iter().enumerate() {
            for (g, u) in grad.iter_mut().zip(&self.table[w]) {
                *g += m * u;
            }
        }
        Ok(TiltEval {
            h,
            grad,
            tilted_pi,
            right: p.right,
            root,
            shift,
        })
    }

    pub fn hamiltonian(&self, alpha: &[f64]) -> Result<f64> {
        Ok(self.eval(alpha)?.h)
    }

    /// Doob transform `P̃(w,w') = T(w,w') r(w') / (λ r(w))`.
    pub fn tilted_kernel(&self, alpha: &[f64], at: &TiltEval) -> Result<StochasticKernel> {
        let (t, shift) = self.tilted_matrix(alpha);
        debug_assert!((shift - at.shift).abs() < 1e-12);
        let n = self.size();
        let m = DMatrix::from_fn(n, n, |i, j| t[(i, j)] * at.right[j] / (at.root * at.right[i]));
        StochasticKernel::from_matrix(m)
    }

    /// `∇²_α H`, via the fundamental matrix of the tilted kernel.
    pub fn hessian(&self, alpha: &[f64], at: &TiltEval) -> Result<DMatrix<f64>> {
        let p = self.tilted_kernel(alpha, at)?;
        let n = self.size();
        let d = self.dim();
        let pi = &at.tilted_pi;
        let mut a = DMatrix::identity(n, n) - p.matrix();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += pi[j];
            }
        }
        let lu = a.lu();
        // centered drift components, one column each
        let fbar = DMatrix::from_fn(n, d, |w, i| self.table[w][i] - at.grad[i]);
        let zf = lu
            .solve(&fbar)
            .ok_or_else(|| Error::InvalidKernel("singular fundamental matrix".into()))?;
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for w in 0..n {
                    s += pi[w]
                        * (fbar[(w, i)] * zf[(w, j)] + fbar[(w, j)] * zf[(w, i)]
                            - fbar[(w, i)] * fbar[(w, j)]);
                }
                hess[(i, j)] = s;
            }
        }
        Ok(hess)
    }
}

/// `H(x, α)`.
pub fn tilted_hamiltonian(sa: &GeneralSA, x: &[f64], alpha: &[f64]) -> Result<f64> {
    FrozenNoise::new(sa, x)?.hamiltonian(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::StateDepKernel;
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

    #[test]
    fn zero_tilt_is_zero() {
        let h = tilted_hamiltonian(&sym2(), &[0.0], &[0.0]).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn symmetric_two_state_closed_form() {
        let sa = sym2();
        for a in [-3.0, -0.5, 0.2, 1.0, 4.0] {
            let h = tilted_hamiltonian(&sa, &[0.0], &[a]).unwrap();
            let exact = ((1.0 + f64::exp(a)) / 2.0).ln();
            assert!((h - exact).abs() < 1e-12, "α = {a}: {h} vs {exact}");
        }
    }

    #[test]
    fn single_state_is_linear() {
        let drift = Drift::from_fn(2, |x, _, _, out| {
            out[0] = 1.5 - x[0];
            out[1] = -0.25;
        });
        let one = StochasticKernel::identity(1);
        let sa = GeneralSA::new(drift, StateDepKernel::constant(one.clone()), one, 0.1, vec![0.0, 0.0], (0, 0))
            .unwrap();
        let h = tilted_hamiltonian(&sa, &[0.5, 0.0], &[2.0, -1.0]).unwrap();
        assert!((h - (2.0 * 1.0 + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn analytic_hessian_matches_differences() {
        let k = StochasticKernel::from_rows(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.6, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let drift = Drift::from_fn(2, |_, z1, _, out| {
            let t = [[0.0, 1.0], [1.0, -0.5], [-1.0, 0.3]];
            out.copy_from_slice(&t[z1]);
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
        let fz = FrozenNoise::new(&sa, &[0.0, 0.0]).unwrap();
        let alpha = [0.4, -0.7];
        let at = fz.eval(&alpha).unwrap();
        let hess = fz.hessian(&alpha, &at).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut ap = alpha;
            let mut am = alpha;
            ap[j] += h;
            am[j] -= h;
            let gp = fz.eval(&ap).unwrap().grad;
            let gm = fz.eval(&am).unwrap().grad;
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - hess[(i, j)]).abs() < 1e-6, "({i},{j}) {fd} vs {}", hess[(i, j)]);
            }
        }
    }
}
