//! Block-wise control schedules that steer the noise toward a reference
//! path.
//!
//! The horizon is cut into blocks of length `Δ`. In block `k` the first
//! `ℓ₀` steps use the base product kernel frozen at `φ(τ_k)`; the remaining
//! steps use the Doob-tilted kernel that realizes velocity `φ̇(τ_k)` at
//! `φ(τ_k)`, mixed with the base chain by weight `δ/2` so that it stays
//! ergodic with full support.

use std::io::Write;

use nalgebra::DMatrix;

use crate::markov::{invariant_measure, mixing_steps, ProbVector, StochasticKernel};
use crate::numeric::fmt17;
use crate::rate::{DualProblem, PathSpec};
use crate::sa::GeneralSA;
use crate::{Error, Result};

/// Deviation from the reference path beyond which control stops.
pub const STOPPING_RADIUS: f64 = 1.0;
/// Total-variation level defining the burn-in length.
pub const BURN_IN_TV: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedReference {
    pub measure: ProbVector,
    pub kernel: StochasticKernel,
}

/// `ν^δ = (1 − δ/2) ν + (δ/2) π` with `π` the product invariant measure at
/// `x`, and a kernel with invariant measure `ν^δ`:
///
/// `K(w, ·) = [(1 − s) ν(w) Q(w, ·) + s π(w) ρ(w, ·)] / ν^δ(w)`, `s = δ/2`,
///
/// where `Q` preserves `ν` (i.i.d. resampling from `ν` when not given).
/// `δ = 2` returns the base chain itself.
pub fn mixed_reference_measure(
    sa: &GeneralSA,
    nu: &ProbVector,
    x: &[f64],
    delta: f64,
    preserving: Option<&StochasticKernel>,
) -> Result<MixedReference> {
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::Domain(format!("mixing weight δ must lie in (0, 2], got {delta}")));
    }
    let rho = sa.product_at(x)?;
    let n = rho.size();
    if nu.len() != n {
        return Err(Error::Shape(format!("ν has {} entries, noise space has {n}", nu.len())));
    }
    let pi = invariant_measure(&rho)?;
    let s = delta / 2.0;
    let nuw = nu.weights();
    let piw = pi.weights();
    let measure: Vec<f64> = nuw.iter().zip(piw).map(|(a, b)| (1.0 - s) * a + s * b).collect();
    let q = match preserving {
        Some(q) => {
            if q.size() != n {
                return Err(Error::Shape("ν-preserving kernel has the wrong size".into()));
            }
            q.clone()
        }
        None => StochasticKernel::from_rows(vec![nuw.to_vec(); n])?,
    };
    let m = DMatrix::from_fn(n, n, |i, j| {
        ((1.0 - s) * nuw[i] * q.get(i, j) + s * piw[i] * rho.get(i, j)) / measure[i]
    });
    Ok(MixedReference {
        measure: ProbVector::normalized(measure)?,
        kernel: StochasticKernel::from_matrix(m)?,
    })
}

/// Controlled kernel for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockControl {
    pub start_step: usize,
    pub end_step: usize,
    pub x: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Dual multiplier of the tilt (zero for an on-ODE velocity).
    pub alpha: Vec<f64>,
    /// Base product kernel frozen at `x`, used during burn-in.
    pub frozen: StochasticKernel,
    pub tilted: MixedReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Frozen base kernel during a block's burn-in.
    BurnIn,
    /// Tilted and mixed block kernel.
    Tilted,
    /// Base kernel at the current iterate (after stopping or past the
    /// scheduled horizon).
    Base,
}

impl KernelKind {
    pub fn id(self) -> &'static str {
        match self {
            KernelKind::BurnIn => "burn-in",
            KernelKind::Tilted => "tilted",
            KernelKind::Base => "base",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub epsilon: f64,
    pub delta: f64,
    pub burn_in: usize,
    pub block_steps: usize,
    pub block_length: f64,
    pub path: PathSpec,
    pub stopping_radius: f64,
    pub blocks: Vec<BlockControl>,
}

impl ControlSchedule {
    pub fn total_steps(&self) -> usize {
        self.blocks.len() * self.block_steps
    }

    /// Kernel kind and block for step `i` while control is active.
    pub fn kind_at(&self, step: usize) -> (KernelKind, Option<usize>) {
        if step >= self.total_steps() {
            return (KernelKind::Base, None);
        }
        let k = step / self.block_steps;
        if step - k * self.block_steps < self.burn_in {
            (KernelKind::BurnIn, Some(k))
        } else {
            (KernelKind::Tilted, Some(k))
        }
    }

    /// Reference position at step `i`.
    pub fn reference(&self, step: usize) -> Vec<f64> {
        self.path.at(step as f64 * self.epsilon)
    }
}

/// Smallest `n` with worst-start total variation to the product invariant
/// measure below [`BURN_IN_TV`], at the path's starting point.
pub fn default_burn_in(sa: &GeneralSA, x: &[f64]) -> Result<usize> {
    let k = sa.product_at(x)?;
    mixing_steps(&k, BURN_IN_TV, 10_000)?
        .ok_or_else(|| Error::Domain("noise chain does not mix within 10000 steps".into()))
}

/// Schedule over the reference path's horizon. `burn_in = None` uses
/// [`default_burn_in`].
pub fn build_control_schedule(
    sa: &GeneralSA,
    path: &PathSpec,
    block_length: f64,
    delta: f64,
    epsilon: f64,
    burn_in: Option<usize>,
) -> Result<ControlSchedule> {
    if !(block_length > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Domain("block length and ε must be positive".into()));
    }
    let blocks_f = path.horizon / block_length;
    let nblocks = blocks_f.round();
    if nblocks < 1.0 || (blocks_f - nblocks).abs() > 1e-9 * blocks_f.max(1.0) {
        return Err(Error::Domain(format!(
            "T/Δ = {blocks_f} must be a positive integer"
        )));
    }
    let steps_f = block_length / epsilon;
    let block_steps = steps_f.round();
    if block_steps < 1.0 || (steps_f - block_steps).abs() > 1e-6 * steps_f {
        return Err(Error::Domain(format!("Δ/ε = {steps_f} must be a positive integer")));
    }
    let block_steps = block_steps as usize;
    let burn_in = match burn_in {
        Some(b) => b,
        None => default_burn_in(sa, &path.knots[0])?,
    };
    if block_steps < burn_in + 1 {
        return Err(Error::Domain(format!(
            "Δ/ε = {block_steps} must be at least ℓ₀ + 1 = {}",
            burn_in + 1
        )));
    }
    let mut blocks = Vec::with_capacity(nblocks as usize);
    for k in 0..nblocks as usize {
        let tau = k as f64 * block_length;
        let x = path.at(tau);
        // right derivative of the piecewise-linear path at τ_k
        let seg = ((tau / path.dt()) + 1e-9).floor() as usize;
        let velocity = path.velocity(seg.min(path.segments() - 1));
        let problem = DualProblem::new(sa, &x).map_err(|e| e.context(format!("block {k}")))?;
        let q = problem
            .solve(&velocity, None)
            .map_err(|e| e.context(format!("rate at block {k}")))?;
        let Some(alpha) = q.alpha else {
            return Err(Error::Domain(format!(
                "block {k}: reference velocity is not attainable (L = +∞)"
            )));
        };
        let at = problem.full.eval(&alpha)?;
        let doob = problem.full.tilted_kernel(&alpha, &at)?;
        let nu = ProbVector::normalized(at.tilted_pi.clone())?;
        let tilted = mixed_reference_measure(sa, &nu, &x, delta, Some(&doob))?;
        blocks.push(BlockControl {
            start_step: k * block_steps,
            end_step: (k + 1) * block_steps,
            x,
            velocity,
            alpha,
            frozen: problem.full.kernel.clone(),
            tilted,
        });
    }
    Ok(ControlSchedule {
        epsilon,
        delta,
        burn_in,
        block_steps,
        block_length,
        path: path.clone(),
        stopping_radius: STOPPING_RADIUS,
        blocks,
    })
}

/// One run of identical kernel choices within a block.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub block: Option<usize>,
    pub step_start: usize,
    /// Exclusive.
    pub step_end: usize,
    pub kind: KernelKind,
    pub alpha: Vec<f64>,
}

/// Records `block,step_start,step_end,kernel_id,alpha_0,…`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "block,step_start,step_end,kernel_id,alpha")?;
    for r in rows {
        let alpha: Vec<String> = r.alpha.iter().map(|a| fmt17(*a)).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.block.map_or("-".to_string(), |b| b.to_string()),
            r.step_start,
            r.step_end,
            r.kind.id(),
            alpha.join(";")
        )?;
    }
    Ok(())
}
