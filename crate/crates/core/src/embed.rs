//! A single regret-matching agent written as a general stochastic
//! approximation.
//!
//! The iterate stacks the agent's local and global regret matrices,
//! `x = (α, β) ∈ R^{2A²}`. The own action is the state-dependent noise: its
//! kernel at `x` is the switching law of [`action_row`]. The exogenous
//! opponent chain plays the role of the second noise source.

use crate::game::{action_row, GameSpec, OpponentChains};
use crate::markov::{StateDepKernel, StochasticKernel};
use crate::sa::{Drift, GeneralSA};
use crate::Result;

pub fn embed_as_general(
    spec: &GameSpec,
    k: usize,
    opponents: &OpponentChains,
    initial_action: usize,
    initial_opponents: usize,
) -> Result<GeneralSA> {
    opponents.check(spec, k)?;
    let a = spec.action_counts[k];
    let sq = a * a;
    let d = 2 * sq;
    let ns = spec.global_profiles(k);

    let kappa = spec.kappa;
    let xi = spec.xi[k];
    let noise1 = StateDepKernel::from_fn(a, move |x| {
        let rows = (0..a)
            .map(|last| action_row(&x[..sq], &x[sq..], last, a, kappa, xi))
            .collect();
        StochasticKernel::from_rows(rows)
    });

    let game = spec.clone();
    let drift = Drift::from_fn(d, move |x, own, opp, out| {
        let (gl, gg) = game.regret_increments(k, own, opp / ns, opp % ns);
        for i in 0..sq {
            out[i] = gl[i] - x[i];
            out[sq + i] = gg[i] - x[sq + i];
        }
    });

    GeneralSA::new(
        drift,
        noise1,
        opponents.joint(),
        spec.epsilon,
        vec![0.0; d],
        (initial_action, initial_opponents),
    )
}
