//! Simulation of the iterates under a control schedule, with occupation
//! measures, entropy cost, and the exact likelihood ratio against the base
//! dynamics.
//!
//! At step `i` the noise moves `w_i → w_{i+1}` by the scheduled kernel
//! `ν_i(w_i, ·)`; the base law of the same move is `ρ_{X̄_{i+1}}(w_i, ·)`.

use nalgebra::DMatrix;
use rand::Rng;

use super::region::EscapeRegion;
use super::schedule::{ControlSchedule, KernelKind, TraceRow};
use crate::markov::relative_entropy;
use crate::numeric::{norm2, sample_index, sub};
use crate::sa::{step_count, GeneralSA, Trajectory};
use crate::{Error, Result};

/// Running occupation measures and costs. The pair matrices hold
/// unnormalized sums over steps: row `w_i` receives the control row
/// (`lambda_hat`) and the base row (`gamma_hat`).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationRecord {
    pub lambda_hat: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub steps: usize,
    /// `ε Σ_i R(ν_i ‖ base_i)` in nats.
    pub entropy_cost: f64,
    /// `Σ_i log ν_i(w_{i+1}) / base_i(w_{i+1})`.
    pub log_likelihood_ratio: f64,
}

impl OccupationRecord {
    pub fn new(n: usize) -> Self {
        Self {
            lambda_hat: DMatrix::zeros(n, n),
            gamma_hat: DMatrix::zeros(n, n),
            steps: 0,
            entropy_cost: 0.0,
            log_likelihood_ratio: 0.0,
        }
    }

    pub fn normalized_lambda(&self) -> DMatrix<f64> {
        &self.lambda_hat / self.steps.max(1) as f64
    }

    pub fn normalized_gamma(&self) -> DMatrix<f64> {
        &self.gamma_hat / self.steps.max(1) as f64
    }

    /// First marginal of the normalized `λ̂`.
    pub fn lambda_first_marginal(&self) -> Vec<f64> {
        let l = self.normalized_lambda();
        (0..l.nrows()).map(|i| l.row(i).sum()).collect()
    }

    /// Sum of two records (associative up to rounding).
    pub fn merge(&self, other: &OccupationRecord) -> Result<OccupationRecord> {
        if self.lambda_hat.shape() != other.lambda_hat.shape() {
            return Err(Error::Shape("occupation records of different sizes".into()));
        }
        Ok(OccupationRecord {
            lambda_hat: &self.lambda_hat + &other.lambda_hat,
            gamma_hat: &self.gamma_hat + &other.gamma_hat,
            steps: self.steps + other.steps,
            entropy_cost: self.entropy_cost + other.entropy_cost,
            log_likelihood_ratio: self.log_likelihood_ratio + other.log_likelihood_ratio,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledRun {
    pub trajectory: Trajectory,
    pub record: OccupationRecord,
    pub trace: Vec<TraceRow>,
    /// First step whose iterate is farther than the stopping radius from
    /// the reference path.
    pub stopped_at: Option<usize>,
    /// First step whose iterate left the region, when one was given.
    pub exited_at: Option<usize>,
}

/// Base row `ρ¹_x(z1, ·) ⊗ ρ²(z2, ·)` on the joint space.
fn base_row(sa: &GeneralSA, x: &[f64], w: usize) -> Result<Vec<f64>> {
    let (z1, z2) = sa.split(w);
    let r1 = sa.noise1.at(x)?.row(z1);
    let r2 = sa.noise2.row(z2);
    let mut out = Vec::with_capacity(r1.len() * r2.len());
    for a in &r1 {
        for b in &r2 {
            out.push(a * b);
        }
    }
    Ok(out)
}

/// Runs `⌊T/ε⌋` steps from `(sa.x0, sa.z0)` at the schedule's ε, stopping
/// early at the first exit from `region` when one is given.
pub fn simulate_controlled<R: Rng>(
    sa: &GeneralSA,
    schedule: &ControlSchedule,
    horizon: f64,
    region: Option<&EscapeRegion>,
    rng: &mut R,
) -> Result<ControlledRun> {
    let eps = schedule.epsilon;
    let (n, warning) = step_count(horizon, eps);
    let d = sa.dim();
    let size = sa.noise_size();
    let mut record = OccupationRecord::new(size);
    let mut x = sa.x0.clone();
    let mut w = sa.join(sa.z0.0, sa.z0.1);
    let mut traj = Trajectory {
        epsilon: eps,
        x: vec![x.clone()],
        phi: vec![sa.z0.0],
        psi: vec![sa.z0.1],
        horizon: n as f64 * eps,
        warning,
    };
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut stopped_at = None;
    let mut exited_at = None;
    let mut u = vec![0.0; d];
    let mut cost_terms = Vec::with_capacity(n);
    let mut llr_terms = Vec::with_capacity(n);
    for i in 0..n {
        let (z1, z2) = sa.split(w);
        sa.drift.eval_into(&x, z1, z2, &mut u);
        for j in 0..d {
            x[j] += eps * u[j];
        }
        if let Some(g) = region {
            if !g.contains(&x) {
                // the exit is decided before the next noise draw
                let (p1, p2) = sa.split(w);
                traj.x.push(x.clone());
                traj.phi.push(p1);
                traj.psi.push(p2);
                exited_at = Some(i + 1);
                break;
            }
        }
        if stopped_at.is_none()
            && norm2(&sub(&x, &schedule.reference(i + 1))) > schedule.stopping_radius
        {
            stopped_at = Some(i + 1);
        }
        let base = base_row(sa, &x, w)?;
        let (kind, block) = if stopped_at.is_some() {
            (KernelKind::Base, None)
        } else {
            schedule.kind_at(i)
        };
        let control = match (kind, block) {
            (KernelKind::BurnIn, Some(k)) => schedule.blocks[k].frozen.row(w),
            (KernelKind::Tilted, Some(k)) => schedule.blocks[k].tilted.kernel.row(w),
            _ => base.clone(),
        };
        let alpha = block.map_or_else(Vec::new, |k| match kind {
            KernelKind::Tilted => schedule.blocks[k].alpha.clone(),
            _ => vec![0.0; d],
        });
        match trace.last_mut() {
            Some(r) if r.kind == kind && r.block == block && r.step_end == i => r.step_end = i + 1,
            _ => trace.push(TraceRow { block, step_start: i, step_end: i + 1, kind, alpha }),
        }
        let next = sample_index(&control, rng.random::<f64>());
        if base[next] <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "step {i}: control moves {w} → {next}, which the base kernel forbids"
            )));
        }
        for j in 0..size {
            record.lambda_hat[(w, j)] += control[j];
            record.gamma_hat[(w, j)] += base[j];
        }
        if kind != KernelKind::Base {
            cost_terms.push(eps * relative_entropy(&control, &base)?);
            llr_terms.push((control[next] / base[next]).ln());
        }
        record.steps += 1;
        w = next;
        let (p1, p2) = sa.split(w);
        traj.x.push(x.clone());
        traj.phi.push(p1);
        traj.psi.push(p2);
    }
    record.entropy_cost = crate::numeric::pairwise_sum(&cost_terms);
    record.log_likelihood_ratio = crate::numeric::pairwise_sum(&llr_terms);
    traj.horizon = traj.steps() as f64 * eps;
    Ok(ControlledRun {
        trajectory: traj,
        record,
        trace,
        stopped_at,
        exited_at,
    })
}
