//! Local rate as a relative-entropy program over pair measures.
//!
//! Minimize `R(γ ‖ [γ]_1 ⊗ ρ)` over distributions `γ` on pairs `(w, w')`
//! with equal marginals `[γ]_1 = [γ]_2` and drift `Σ_w U(x, w)[γ]_1(w) = β`.
//! Only pairs in the support of `ρ` carry mass. The program is solved by
//! infeasible-start Newton on the equality-constrained convex objective.

use nalgebra::{DMatrix, DVector};

use super::attain::{attainability, AffineHull, Attainability};
use super::hamiltonian::FrozenNoise;
use crate::markov::{invariant_measure, StochasticKernel};
use crate::numeric::norm2;
use crate::sa::GeneralSA;
use crate::{Error, Result};

const MAX_EDGES: usize = 2_000;
const MAX_NEWTON: usize = 300;

/// Joint distribution on pairs of noise states.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasure {
    pub weights: DMatrix<f64>,
}

impl PairMeasure {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Shape("pair measure must be square".into()));
        }
        if weights.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProb("pair measure has a negative or non-finite entry".into()));
        }
        let s = weights.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProb(format!("pair measure sums to {s}")));
        }
        Ok(Self { weights })
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.weights.row(i).sum()).collect()
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        (0..self.size()).map(|j| self.weights.column(j).sum()).collect()
    }

    /// `γ(w, ·) / [γ]_1(w)`; rows with no mass fall back to `fallback`.
    pub fn conditional(&self, fallback: &StochasticKernel) -> Result<StochasticKernel> {
        let n = self.size();
        let mu = self.first_marginal();
        let m = DMatrix::from_fn(n, n, |i, j| {
            if mu[i] > 0.0 {
                self.weights[(i, j)] / mu[i]
            } else {
                fallback.get(i, j)
            }
        });
        StochasticKernel::from_matrix(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalRate {
    pub value: f64,
    /// `None` when the value is infinite.
    pub optimizer: Option<PairMeasure>,
    pub certificate: Option<Vec<f64>>,
    pub iterations: usize,
    /// Final `‖Aγ − c‖` and `‖∇f + Aᵀν‖`.
    pub primal_residual: f64,
    pub dual_residual: f64,
}

struct Program {
    n: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    log_rho: Vec<f64>,
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl Program {
    fn source_mass(&self, g: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.n];
        for (e, &s) in self.src.iter().enumerate() {
            mu[s] += g[e];
        }
        mu
    }

    fn objective(&self, g: &[f64]) -> f64 {
        let mu = self.source_mass(g);
        g.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(e, &v)| v * (v.ln() - mu[self.src[e]].ln() - self.log_rho[e]))
            .sum()
    }

    fn gradient(&self, g: &[f64]) -> DVector<f64> {
        let mu = self.source_mass(g);
        DVector::from_fn(g.len(), |e, _| g[e].ln() - mu[self.src[e]].ln() - self.log_rho[e])
    }

    fn hessian(&self, g: &[f64]) -> DMatrix<f64> {
        let mu = self.source_mass(g);
        let m = g.len();
        DMatrix::from_fn(m, m, |e, f| {
            let diag = if e == f { 1.0 / g[e] } else { 0.0 };
            let same = if self.src[e] == self.src[f] { 1.0 / mu[self.src[e]] } else { 0.0 };
            diag - same
        })
    }

    fn residuals(&self, g: &[f64], nu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let gv = DVector::from_column_slice(g);
        let dual = self.gradient(g) + self.a.transpose() * nu;
        let primal = &self.a * gv - &self.c;
        (dual, primal)
    }
}

/// Independent rows of `A γ = c` via SVD; `None` when inconsistent.
fn reduce_constraints(a: &DMatrix<f64>, c: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1.0))
        .collect();
    let uk = DMatrix::from_fn(a.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
    let c_red = uk.transpose() * c;
    let back = &uk * &c_red;
    if (c - back).norm() > 1e-9 * (1.0 + c.norm()) {
        return None;
    }
    Some((uk.transpose() * a, c_red))
}

fn solve_kkt(h: &DMatrix<f64>, a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let m = h.nrows();
    let p = a.nrows();
    let mut k = DMatrix::zeros(m + p, m + p);
    k.view_mut((0, 0), (m, m)).copy_from(h);
    k.view_mut((0, m), (m, p)).copy_from(&a.transpose());
    k.view_mut((m, 0), (p, m)).copy_from(a);
    if let Some(sol) = k.clone().lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) && (&k * &sol - rhs).norm() <= 1e-8 * (1.0 + rhs.norm()) {
            return Some(sol);
        }
    }
    k.svd(true, true).solve(rhs, 1e-13).ok()
}

/// `L(x, β)` by the primal entropy program.
pub fn local_rate_primal(sa: &GeneralSA, x: &[f64], beta: &[f64]) -> Result<PrimalRate> {
    let frozen = FrozenNoise::new(sa, x)?;
    let d = frozen.dim();
    if beta.len() != d {
        return Err(Error::Shape(format!("β has dimension {}, drift has {d}", beta.len())));
    }
    let n = frozen.size();
    let rho = &frozen.kernel;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut log_rho = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rho.get(i, j) > 0.0 {
                src.push(i);
                dst.push(j);
                log_rho.push(rho.get(i, j).ln());
            }
        }
    }
    let m = src.len();
    if m > MAX_EDGES {
        return Err(Error::StateExplosion(format!(
            "{m} support pairs exceed the primal program limit {MAX_EDGES}"
        )));
    }

    let scale = 1.0 + frozen.table.iter().map(|u| norm2(u)).fold(0.0, f64::max);
    let infinite = |certificate: Vec<f64>, iterations: usize| PrimalRate {
        value: f64::INFINITY,
        optimizer: None,
        certificate: Some(certificate),
        iterations,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
    };
    let hull = AffineHull::new(&frozen.table);
    let (b, resid) = hull.split(beta);
    let rn = norm2(&resid);
    if rn > 1e-10 * scale {
        return Ok(infinite(resid.iter().map(|r| r / rn).collect(), 0));
    }
    let r = hull.rank();

    // rows: total mass, net flow at each state, drift in hull coordinates
    let rows = 1 + n + r;
    let mut a = DMatrix::zeros(rows, m);
    let mut c = DVector::zeros(rows);
    c[0] = 1.0;
    for e in 0..m {
        a[(0, e)] = 1.0;
        a[(1 + src[e], e)] += 1.0;
        a[(1 + dst[e], e)] -= 1.0;
        for k in 0..r {
            a[(1 + n + k, e)] = hull.coords[src[e]][k];
        }
    }
    for k in 0..r {
        c[1 + n + k] = b[k];
    }
    let adj = rho.support_graph();
    let pi = invariant_measure(rho)?.into_inner();
    let classify = |iterations: usize| -> Result<PrimalRate> {
        let mean: Vec<f64> = (0..d)
            .map(|i| (0..n).map(|w| pi[w] * frozen.table[w][i]).sum())
            .collect();
        match attainability(&adj, &frozen.table, beta, &mean, 1e-10 * scale) {
            Attainability::Outside { direction, .. } => Ok(infinite(direction, iterations)),
            Attainability::Inside { distance } => Err(Error::NoConvergence {
                iterations,
                best_value: f64::NAN,
                grad_norm: distance,
            }),
        }
    };
    let Some((a, c)) = reduce_constraints(&a, &c) else {
        return classify(0);
    };
    let prog = Program { n, src, dst, log_rho, a, c };

    let mut g: Vec<f64> = (0..m).map(|e| pi[prog.src[e]] * prog.log_rho[e].exp()).collect();
    let mut nu = DVector::zeros(prog.a.nrows());
    let norm_of = |(du, pr): &(DVector<f64>, DVector<f64>)| (du.norm_squared() + pr.norm_squared()).sqrt();
    let mut res = prog.residuals(&g, &nu);
    let mut iterations = 0;
    while iterations < MAX_NEWTON {
        if res.1.norm() <= 1e-13 * scale && res.0.norm() <= 1e-11 {
            break;
        }
        iterations += 1;
        let h = prog.hessian(&g);
        let mut rhs = DVector::zeros(m + prog.a.nrows());
        let grad = prog.gradient(&g);
        rhs.rows_mut(0, m).copy_from(&(-&grad));
        rhs.rows_mut(m, prog.a.nrows()).copy_from(&(-&res.1));
        let Some(sol) = solve_kkt(&h, &prog.a, &rhs) else {
            break;
        };
        let dg: Vec<f64> = sol.rows(0, m).iter().cloned().collect();
        let nu_new: DVector<f64> = sol.rows(m, prog.a.nrows()).into_owned();
        let dnu = &nu_new - &nu;
        // stay strictly inside the positive orthant
        let mut t: f64 = 1.0;
        for e in 0..m {
            if dg[e] < 0.0 {
                t = t.min(0.99 * g[e] / -dg[e]);
            }
        }
        let r0 = norm_of(&res);
        let mut accepted = false;
        while t > 1e-16 {
            let cand: Vec<f64> = g.iter().zip(&dg).map(|(a, b)| a + t * b).collect();
            let nuc = &nu + &dnu * t;
            let rc = prog.residuals(&cand, &nuc);
            if norm_of(&rc) <= (1.0 - 0.01 * t) * r0 {
                g = cand;
                nu = nuc;
                res = rc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (dual_residual, primal_residual) = (res.0.norm(), res.1.norm());
    if primal_residual > 1e-9 * scale || dual_residual > 1e-6 {
        return classify(iterations);
    }
    let mut w = DMatrix::zeros(n, n);
    for e in 0..m {
        w[(prog.src[e], prog.dst[e])] = g[e].max(0.0);
    }
    let total = w.sum();
    w /= total;
    let value = prog.objective(&g).max(0.0);
    Ok(PrimalRate {
        value,
        optimizer: Some(PairMeasure::new(w)?),
        certificate: None,
        iterations,
        primal_residual,
        dual_residual,
    })
}
