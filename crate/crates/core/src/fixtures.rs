//! Two canonical instances: a scalar recursion with state-dependent noise
//! used for escape experiments, and a 2-agent, 2-action coordination game.

use crate::embed::embed_as_general;
use crate::fluid::find_equilibrium;
use crate::game::{build_game, GameConfig, GameSpec, OpponentChains};
use crate::markov::{LinearKernelSpec, StateDepKernel, StochasticKernel};
use crate::rare::EscapeRegion;
use crate::sa::{Drift, GeneralSA};
use crate::Result;

/// Drift offsets `U(x, z1, z2) = 0.6 z1 + 0.4 z2 − x` of the scalar instance.
pub fn scalar_offsets() -> Vec<Vec<Vec<f64>>> {
    vec![vec![vec![0.0], vec![0.4]], vec![vec![0.6], vec![1.0]]]
}

/// `ρ¹_x` with rows `[0.6, 0.4]` and `[0.4 + 0.2x, 0.6 − 0.2x]`.
pub fn scalar_noise1() -> LinearKernelSpec {
    LinearKernelSpec {
        base: vec![vec![0.6, 0.4], vec![0.4, 0.6]],
        slopes: vec![vec![vec![0.0, 0.0], vec![0.2, -0.2]]],
        floor: 1e-3,
    }
}

pub fn scalar_noise2() -> Vec<Vec<f64>> {
    vec![vec![0.6, 0.4], vec![0.4, 0.6]]
}

pub fn scalar_sa(epsilon: f64, x0: f64) -> Result<GeneralSA> {
    GeneralSA::new(
        Drift::affine(scalar_offsets(), 1.0)?,
        StateDepKernel::linear(scalar_noise1())?,
        StochasticKernel::from_rows(scalar_noise2())?,
        epsilon,
        vec![x0],
        (0, 0),
    )
}

/// The scalar instance started at its stable point, with the escape
/// interval and the control parameters used for importance sampling.
#[derive(Debug, Clone)]
pub struct ScalarEscape {
    pub sa: GeneralSA,
    pub equilibrium: f64,
    pub region: EscapeRegion,
    pub horizon: f64,
    pub segments: usize,
    pub block_length: f64,
    pub delta: f64,
}

pub const SCALAR_HALF_WIDTH: f64 = 0.2;

pub fn scalar_escape(epsilon: f64) -> Result<ScalarEscape> {
    let probe = scalar_sa(epsilon, 0.5)?;
    let eq = find_equilibrium(&probe, &[0.5])?;
    let x = eq.x[0];
    Ok(ScalarEscape {
        sa: probe.with_x0(vec![x])?,
        equilibrium: x,
        region: EscapeRegion::interval(x, SCALAR_HALF_WIDTH)?,
        horizon: 2.0,
        segments: 40,
        block_length: 0.5,
        delta: 0.1,
    })
}

/// The scalar drift with both noise sources collapsed to one state, so
/// the recursion is the Euler scheme of `ẋ = 0.5 − x`.
pub fn deterministic_scalar(epsilon: f64) -> Result<GeneralSA> {
    let one = StochasticKernel::identity(1);
    GeneralSA::new(
        Drift::affine(vec![vec![vec![0.5]]], 1.0)?,
        StateDepKernel::constant(one.clone()),
        one,
        epsilon,
        vec![1.5],
        (0, 0),
    )
}

/// Two agents joined by one edge, each with actions `{0, 1}` and payoff
/// 2 for coordinating on 0, 1 for coordinating on 1, 0 otherwise.
pub fn two_agent_config(epsilon: f64) -> GameConfig {
    let coord = vec![2.0, 0.0, 0.0, 1.0];
    GameConfig {
        num_agents: 2,
        action_counts: vec![2, 2],
        edges: vec![[0, 1]],
        local_payoffs: vec![coord.clone(), coord],
        global_payoffs: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        kappa: 0.2,
        xi: vec![5.0, 5.0],
        epsilon,
    }
}

pub fn two_agent_game(epsilon: f64) -> Result<GameSpec> {
    build_game(two_agent_config(epsilon))
}

/// Agent 1 as seen by agent 0: a sticky chain on its two actions.
pub fn two_agent_opponents() -> Result<OpponentChains> {
    Ok(OpponentChains {
        neighbor: StochasticKernel::from_rows(vec![vec![0.7, 0.3], vec![0.4, 0.6]])?,
        non_neighbor: StochasticKernel::identity(1),
    })
}

/// Agent 0 of [`two_agent_game`] written as a general recursion in `R^8`.
pub fn two_agent_sa(epsilon: f64) -> Result<GeneralSA> {
    embed_as_general(&two_agent_game(epsilon)?, 0, &two_agent_opponents()?, 0, 0)
}
