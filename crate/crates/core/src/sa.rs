//! General stochastic approximation driven by two Markov noise sources.
//!
//! `X_{n+1} = X_n + ε U(X_n, Φ_n, Ψ_n)`, where `Φ` moves by the
//! state-dependent kernel `ρ¹_x` and `Ψ` by the fixed kernel `ρ²`.
//! After each update the next noise states are drawn, `Φ` from
//! `ρ¹_{X_{n+1}}(Φ_n, ·)` and then `Ψ` from `ρ²(Ψ_n, ·)`, one uniform each.
//!
//! The pair `(Φ, Ψ)` is indexed on the product space as `z1 * m2 + z2`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::markov::{product_kernel, StateDepKernel, StochasticKernel};
use crate::numeric::{fmt17, replicate_rng, sample_index};
use crate::{Error, Result};

type DriftFn = dyn Fn(&[f64], usize, usize, &mut [f64]) + Send + Sync;

/// The drift `U(x, z1, z2)`, written into a caller-supplied buffer.
#[derive(Clone)]
pub struct Drift {
    dim: usize,
    f: Arc<DriftFn>,
}

impl std::fmt::Debug for Drift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Drift").field("dim", &self.dim).finish()
    }
}

impl Drift {
    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], usize, usize, &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim, f: Arc::new(f) }
    }

    /// `U(x, z1, z2) = offsets[z1][z2] − decay·x`.
    pub fn affine(offsets: Vec<Vec<Vec<f64>>>, decay: f64) -> Result<Self> {
        let dim = offsets
            .first()
            .and_then(|r| r.first())
            .map(|v| v.len())
            .ok_or_else(|| Error::Shape("empty drift offset table".into()))?;
        if offsets.iter().flatten().any(|v| v.len() != dim) {
            return Err(Error::Shape("drift offsets have mixed dimensions".into()));
        }
        Ok(Self::from_fn(dim, move |x, z1, z2, out| {
            let u = &offsets[z1][z2];
            for i in 0..out.len() {
                out[i] = u[i] - decay * x[i];
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, x: &[f64], z1: usize, z2: usize, out: &mut [f64]) {
        (self.f)(x, z1, z2, out)
    }

    pub fn eval(&self, x: &[f64], z1: usize, z2: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, z1, z2, &mut out);
        out
    }
}

/// The general algorithm with its noise model and initial condition.
#[derive(Debug, Clone)]
pub struct GeneralSA {
    pub drift: Drift,
    pub noise1: StateDepKernel,
    pub noise2: StochasticKernel,
    pub epsilon: f64,
    pub x0: Vec<f64>,
    /// Initial `(Φ_0, Ψ_0)`.
    pub z0: (usize, usize),
}

/// Outcome of the A1/A2 probes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub sup_norm: f64,
    pub lipschitz_estimate: f64,
    /// Probe points where `ρ¹_x` is not irreducible and aperiodic.
    pub a2_failures: Vec<usize>,
    pub noise2_ok: bool,
}

impl GeneralSA {
    pub fn new(
        drift: Drift,
        noise1: StateDepKernel,
        noise2: StochasticKernel,
        epsilon: f64,
        x0: Vec<f64>,
        z0: (usize, usize),
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if x0.len() != drift.dim() {
            return Err(Error::Shape(format!(
                "x0 has dimension {} but the drift has {}",
                x0.len(),
                drift.dim()
            )));
        }
        if z0.0 >= noise1.size() || z0.1 >= noise2.size() {
            return Err(Error::Shape("initial noise state out of range".into()));
        }
        Ok(Self { drift, noise1, noise2, epsilon, x0, z0 })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn m1(&self) -> usize {
        self.noise1.size()
    }

    pub fn m2(&self) -> usize {
        self.noise2.size()
    }

    /// Size of the joint noise space `M × M²`.
    pub fn noise_size(&self) -> usize {
        self.m1() * self.m2()
    }

    pub fn split(&self, w: usize) -> (usize, usize) {
        (w / self.m2(), w % self.m2())
    }

    pub fn join(&self, z1: usize, z2: usize) -> usize {
        z1 * self.m2() + z2
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(
            self.drift.clone(),
            self.noise1.clone(),
            self.noise2.clone(),
            epsilon,
            self.x0.clone(),
            self.z0,
        )
    }

    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Self> {
        Self::new(
            self.drift.clone(),
            self.noise1.clone(),
            self.noise2.clone(),
            self.epsilon,
            x0,
            self.z0,
        )
    }

    /// `ρ¹_x ⊗ ρ²` on the joint noise space.
    pub fn product_at(&self, x: &[f64]) -> Result<StochasticKernel> {
        Ok(product_kernel(&self.noise1.at(x)?, &self.noise2))
    }

    /// `U(x, w)` for every joint noise state `w`.
    pub fn drift_table(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.noise_size())
            .map(|w| {
                let (z1, z2) = self.split(w);
                self.drift.eval(x, z1, z2)
            })
            .collect()
    }

    pub fn check_assumptions(&self, probes: &[Vec<f64>]) -> Result<AssumptionReport> {
        let mut sup = 0.0f64;
        let mut lip = 0.0f64;
        let mut a2_failures = Vec::new();
        for (p, x) in probes.iter().enumerate() {
            let table = self.drift_table(x);
            for u in &table {
                sup = sup.max(crate::numeric::norm2(u));
            }
            for y in probes.iter().skip(p + 1) {
                let dx = crate::numeric::norm2(&crate::numeric::sub(x, y));
                if dx == 0.0 {
                    continue;
                }
                let other = self.drift_table(y);
                for (u, v) in table.iter().zip(&other) {
                    lip = lip.max(crate::numeric::norm2(&crate::numeric::sub(u, v)) / dx);
                }
            }
            let report = crate::markov::check_irreducible_aperiodic(&self.noise1.at(x)?);
            if !(report.irreducible && report.aperiodic) {
                a2_failures.push(p);
            }
        }
        let r2 = crate::markov::check_irreducible_aperiodic(&self.noise2);
        Ok(AssumptionReport {
            sup_norm: sup,
            lipschitz_estimate: lip,
            a2_failures,
            noise2_ok: r2.irreducible && r2.aperiodic,
        })
    }
}

/// Iterates, noise states, and the horizon actually simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub epsilon: f64,
    /// `X_0 ..= X_N`.
    pub x: Vec<Vec<f64>>,
    /// `Φ_0 ..= Φ_N`.
    pub phi: Vec<usize>,
    /// `Ψ_0 ..= Ψ_N`.
    pub psi: Vec<usize>,
    /// `N·ε`, which may be shorter than the requested horizon.
    pub horizon: f64,
    pub warning: Option<String>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.x.len() - 1
    }

    /// Piecewise-constant interpolation `X^ε(t) = X_n` for `t ∈ [nε, (n+1)ε)`.
    pub fn interpolate(&self, t: f64) -> &[f64] {
        let n = ((t / self.epsilon) + 1e-9).floor().max(0.0) as usize;
        &self.x[n.min(self.steps())]
    }

    /// Line-delimited records `step,x_0,..,x_{d-1},phi,psi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.x.first().map_or(0, |v| v.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        header.push("phi".into());
        header.push("psi".into());
        writeln!(out, "{}", header.join(","))?;
        for (n, x) in self.x.iter().enumerate() {
            let mut fields = vec![n.to_string()];
            fields.extend(x.iter().map(|&v| fmt17(v)));
            fields.push(self.phi[n].to_string());
            fields.push(self.psi[n].to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Number of steps `⌊T/ε⌋`, with a warning when `T/ε` is not an integer.
pub fn step_count(horizon: f64, epsilon: f64) -> (usize, Option<String>) {
    let ratio = horizon / epsilon;
    let n = (ratio + 1e-9).floor();
    if (ratio - n).abs() > 1e-9 {
        let msg = format!(
            "T/ε = {ratio} is not an integer; simulating N = {n} steps (horizon {})",
            n * epsilon
        );
        log::warn!("{msg}");
        (n as usize, Some(msg))
    } else {
        (n as usize, None)
    }
}

pub fn simulate_with_rng<R: Rng>(sa: &GeneralSA, horizon: f64, rng: &mut R) -> Result<Trajectory> {
    let (n, warning) = step_count(horizon, sa.epsilon);
    let d = sa.dim();
    let mut x = sa.x0.clone();
    let (mut z1, mut z2) = sa.z0;
    let mut traj = Trajectory {
        epsilon: sa.epsilon,
        x: Vec::with_capacity(n + 1),
        phi: Vec::with_capacity(n + 1),
        psi: Vec::with_capacity(n + 1),
        horizon: n as f64 * sa.epsilon,
        warning,
    };
    traj.x.push(x.clone());
    traj.phi.push(z1);
    traj.psi.push(z2);
    let mut u = vec![0.0; d];
    for step in 0..n {
        sa.drift.eval_into(&x, z1, z2, &mut u);
        for i in 0..d {
            x[i] += sa.epsilon * u[i];
        }
        let k1 = sa
            .noise1
            .at(&x)
            .map_err(|e| e.context(format!("noise kernel at step {}", step + 1)))?;
        z1 = sample_index(&k1.row(z1), rng.random::<f64>());
        z2 = sample_index(&sa.noise2.row(z2), rng.random::<f64>());
        traj.x.push(x.clone());
        traj.phi.push(z1);
        traj.psi.push(z2);
    }
    Ok(traj)
}

/// Deterministic given `seed` (replicate stream 0).
pub fn simulate_algorithm(sa: &GeneralSA, horizon: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = replicate_rng(seed, 0);
    simulate_with_rng(sa, horizon, &mut rng)
}
