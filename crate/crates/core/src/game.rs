//! Graph games and regret-matching dynamics.
//!
//! Each agent `k` splits its payoff into a local part (depending on the
//! actions of its graph neighbors `N_k`) and a global part (depending on the
//! non-neighbors `S_k`). Agents track exponentially weighted local and global
//! regrets `α^k(i,j)`, `β^k(i,j)` and switch away from their last action with
//! probability proportional to the positive part of `α + β`.
//!
//! Agents and actions are 0-based. Payoff tables are dense, row-major over
//! `(own action, profile)`, where a profile of a set of agents (sorted
//! ascending) is a mixed-radix index with the first agent most significant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::markov::{ProbVector, StochasticKernel};
use crate::numeric::{replicate_rng, sample_index};
use crate::{Error, Result};

/// Raw game description, as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub num_agents: usize,
    pub action_counts: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    /// Per agent, `A^k × |profiles(N_k)|` values; may be empty when `N_k = ∅`.
    pub local_payoffs: Vec<Vec<f64>>,
    /// Per agent, `A^k × |profiles(S_k)|` values.
    pub global_payoffs: Vec<Vec<f64>>,
    pub kappa: f64,
    pub xi: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub num_agents: usize,
    pub action_counts: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub neighbors: Vec<Vec<usize>>,
    pub non_neighbors: Vec<Vec<usize>>,
    local: Vec<Vec<f64>>,
    global: Vec<Vec<f64>>,
    pub kappa: f64,
    pub xi: Vec<f64>,
    pub epsilon: f64,
}

fn profile_count(counts: &[usize], agents: &[usize]) -> usize {
    agents.iter().map(|&a| counts[a]).product()
}

/// Validates a [`GameConfig`] and derives the neighborhood structure.
pub fn build_game(config: GameConfig) -> Result<GameSpec> {
    let n = config.num_agents;
    if n == 0 {
        return Err(Error::InvalidGame("no agents".into()));
    }
    if config.action_counts.len() != n || config.action_counts.contains(&0) {
        return Err(Error::InvalidGame(
            "action_counts must list a positive count per agent".into(),
        ));
    }
    if !(config.kappa > 0.0 && config.kappa < 1.0) {
        return Err(Error::InvalidGame(format!(
            "kappa must lie in (0,1), got {}",
            config.kappa
        )));
    }
    if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
        return Err(Error::InvalidGame(format!(
            "epsilon must lie in (0,1), got {}",
            config.epsilon
        )));
    }
    if config.xi.len() != n {
        return Err(Error::InvalidGame("xi must have one entry per agent".into()));
    }
    let mut edges = Vec::new();
    for &[a, b] in &config.edges {
        if a >= n || b >= n {
            return Err(Error::InvalidGame(format!(
                "edge ({a},{b}) references an agent outside 0..{n}"
            )));
        }
        if a == b {
            return Err(Error::InvalidGame(format!("self-loop at agent {a}")));
        }
        let e = [a.min(b), a.max(b)];
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    edges.sort();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            (0..n)
                .filter(|&j| j != k && edges.contains(&[k.min(j), k.max(j)]))
                .collect()
        })
        .collect();
    let non_neighbors: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            (0..n)
                .filter(|&j| j != k && !neighbors[k].contains(&j))
                .collect()
        })
        .collect();

    if config.local_payoffs.len() != n || config.global_payoffs.len() != n {
        return Err(Error::InvalidGame(
            "local_payoffs and global_payoffs need one table per agent".into(),
        ));
    }
    let mut local = Vec::with_capacity(n);
    let mut global = Vec::with_capacity(n);
    for k in 0..n {
        let a = config.action_counts[k];
        let nl = profile_count(&config.action_counts, &neighbors[k]);
        let ng = profile_count(&config.action_counts, &non_neighbors[k]);
        let mut lt = config.local_payoffs[k].clone();
        if neighbors[k].is_empty() {
            if lt.iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidGame(format!(
                    "agent {k} has no neighbors, so its local payoff must be zero"
                )));
            }
            lt = vec![0.0; a];
        }
        if lt.len() != a * nl {
            return Err(Error::InvalidGame(format!(
                "agent {k}: local table has {} entries, expected {}",
                lt.len(),
                a * nl
            )));
        }
        let gt = config.global_payoffs[k].clone();
        if gt.len() != a * ng {
            return Err(Error::InvalidGame(format!(
                "agent {k}: global table has {} entries, expected {}",
                gt.len(),
                a * ng
            )));
        }
        if lt.iter().chain(&gt).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGame(format!("agent {k}: non-finite payoff")));
        }
        local.push(lt);
        global.push(gt);
    }
    let spec = GameSpec {
        num_agents: n,
        action_counts: config.action_counts,
        edges,
        neighbors,
        non_neighbors,
        local,
        global,
        kappa: config.kappa,
        xi: config.xi,
        epsilon: config.epsilon,
    };
    for k in 0..n {
        let (lo, hi) = spec.payoff_bounds(k);
        let bound = spec.action_counts[k] as f64 * (hi - lo);
        if !(spec.xi[k] > bound) {
            return Err(Error::InvalidGame(format!(
                "xi[{k}] = {} must exceed A^k·(U_max − U_min) = {bound}",
                spec.xi[k]
            )));
        }
    }
    Ok(spec)
}

impl GameSpec {
    pub fn local_profiles(&self, k: usize) -> usize {
        profile_count(&self.action_counts, &self.neighbors[k])
    }

    pub fn global_profiles(&self, k: usize) -> usize {
        profile_count(&self.action_counts, &self.non_neighbors[k])
    }

    /// Mixed-radix index of the actions of `agents` within a joint action.
    pub fn profile_index(&self, agents: &[usize], joint: &[usize]) -> usize {
        agents
            .iter()
            .fold(0, |acc, &a| acc * self.action_counts[a] + joint[a])
    }

    pub fn local_payoff(&self, k: usize, own: usize, profile: usize) -> f64 {
        self.local[k][own * self.local_profiles(k) + profile]
    }

    pub fn global_payoff(&self, k: usize, own: usize, profile: usize) -> f64 {
        self.global[k][own * self.global_profiles(k) + profile]
    }

    /// Total payoff `U^k = U_l^k + U_g^k` at a joint action.
    pub fn payoff(&self, k: usize, joint: &[usize]) -> f64 {
        let lp = self.profile_index(&self.neighbors[k], joint);
        let gp = self.profile_index(&self.non_neighbors[k], joint);
        self.local_payoff(k, joint[k], lp) + self.global_payoff(k, joint[k], gp)
    }

    /// `(U^k_min, U^k_max)` over all joint actions.
    pub fn payoff_bounds(&self, k: usize) -> (f64, f64) {
        let (nl, ng) = (self.local_profiles(k), self.global_profiles(k));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in 0..self.action_counts[k] {
            let l = &self.local[k][a * nl..(a + 1) * nl];
            let g = &self.global[k][a * ng..(a + 1) * ng];
            let lmax = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lmin = l.iter().cloned().fold(f64::INFINITY, f64::min);
            let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
            hi = hi.max(lmax + gmax);
            lo = lo.min(lmin + gmin);
        }
        (lo, hi)
    }

    pub fn local_spread(&self, k: usize) -> f64 {
        spread(&self.local[k])
    }

    pub fn global_spread(&self, k: usize) -> f64 {
        spread(&self.global[k])
    }

    /// Regret increments of agent `k` for one play: entry `(i,j)` is
    /// `[U(j,·) − U(own,·)]·1{own = i}`, for the local and global tables.
    pub fn regret_increments(
        &self,
        k: usize,
        own: usize,
        local_profile: usize,
        global_profile: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let a = self.action_counts[k];
        let mut gl = vec![0.0; a * a];
        let mut gg = vec![0.0; a * a];
        let ul_own = self.local_payoff(k, own, local_profile);
        let ug_own = self.global_payoff(k, own, global_profile);
        for j in 0..a {
            gl[own * a + j] = self.local_payoff(k, j, local_profile) - ul_own;
            gg[own * a + j] = self.global_payoff(k, j, global_profile) - ug_own;
        }
        (gl, gg)
    }
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Regret matrices (row-major `A^k × A^k`) and last actions of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretState {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub last_action: Vec<usize>,
    pub step: u64,
}

impl RegretState {
    /// Zero regrets with the given starting actions.
    pub fn zero(spec: &GameSpec, actions: Vec<usize>) -> Self {
        let sq = |k: usize| vec![0.0; spec.action_counts[k] * spec.action_counts[k]];
        Self {
            alpha: (0..spec.num_agents).map(sq).collect(),
            beta: (0..spec.num_agents).map(sq).collect(),
            last_action: actions,
            step: 0,
        }
    }

    /// Zero regrets with starting actions drawn uniformly.
    pub fn zero_random<R: Rng>(spec: &GameSpec, rng: &mut R) -> Self {
        let actions = spec
            .action_counts
            .iter()
            .map(|&a| rng.random_range(0..a))
            .collect();
        Self::zero(spec, actions)
    }
}

/// Switching law out of action `last` given regret matrices of one agent.
pub fn action_row(
    alpha: &[f64],
    beta: &[f64],
    last: usize,
    num_actions: usize,
    kappa: f64,
    xi: f64,
) -> Vec<f64> {
    let a = num_actions as f64;
    let mut row = vec![0.0; num_actions];
    let mut off = 0.0;
    for (i, p) in row.iter_mut().enumerate() {
        if i == last {
            continue;
        }
        let r = alpha[last * num_actions + i] + beta[last * num_actions + i];
        *p = (1.0 - kappa) * (r.max(0.0) / xi).min(1.0 / a) + kappa / a;
        off += *p;
    }
    row[last] = 1.0 - off;
    row
}

pub fn action_distribution(spec: &GameSpec, state: &RegretState, k: usize) -> ProbVector {
    let row = action_row(
        &state.alpha[k],
        &state.beta[k],
        state.last_action[k],
        spec.action_counts[k],
        spec.kappa,
        spec.xi[k],
    );
    ProbVector::normalized(row).expect("switching law is a distribution")
}

/// `x ← x + ε(target − x)`, the shared update form of every recursion here.
#[inline]
pub fn relax_toward(x: &mut [f64], target: &[f64], eps: f64) {
    for (xi, ti) in x.iter_mut().zip(target) {
        *xi += eps * (ti - *xi);
    }
}

/// One regret-matching update of every agent after `joint` was played.
pub fn regret_update(spec: &GameSpec, state: &RegretState, joint: &[usize]) -> Result<RegretState> {
    if joint.len() != spec.num_agents {
        return Err(Error::Shape(format!(
            "joint action has {} entries for {} agents",
            joint.len(),
            spec.num_agents
        )));
    }
    if let Some(k) = (0..spec.num_agents).find(|&k| joint[k] >= spec.action_counts[k]) {
        return Err(Error::Domain(format!(
            "action {} out of range for agent {k}",
            joint[k]
        )));
    }
    let mut next = state.clone();
    for k in 0..spec.num_agents {
        let lp = spec.profile_index(&spec.neighbors[k], joint);
        let gp = spec.profile_index(&spec.non_neighbors[k], joint);
        let (gl, gg) = spec.regret_increments(k, joint[k], lp, gp);
        relax_toward(&mut next.alpha[k], &gl, spec.epsilon);
        relax_toward(&mut next.beta[k], &gg, spec.epsilon);
    }
    next.last_action = joint.to_vec();
    next.step += 1;
    Ok(next)
}

/// Regrets of agent `k` after playing `history` from zero, by the explicit
/// discounted sum `ε Σ_ι (1−ε)^{n−ι} · gap_ι`.
pub fn regret_closed_form(spec: &GameSpec, k: usize, history: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let a = spec.action_counts[k];
    let n = history.len();
    let eps = spec.epsilon;
    let mut alpha = vec![0.0; a * a];
    let mut beta = vec![0.0; a * a];
    for (iota, joint) in history.iter().enumerate() {
        let lp = spec.profile_index(&spec.neighbors[k], joint);
        let gp = spec.profile_index(&spec.non_neighbors[k], joint);
        let (gl, gg) = spec.regret_increments(k, joint[k], lp, gp);
        let w = eps * (1.0 - eps).powi((n - 1 - iota) as i32);
        for idx in 0..a * a {
            alpha[idx] += w * gl[idx];
            beta[idx] += w * gg[idx];
        }
    }
    (alpha, beta)
}

/// Exogenous Markov chains driving the opponents of one agent: one on the
/// neighbor profiles and one on the non-neighbor profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentChains {
    pub neighbor: StochasticKernel,
    pub non_neighbor: StochasticKernel,
}

impl OpponentChains {
    pub fn check(&self, spec: &GameSpec, k: usize) -> Result<()> {
        if self.neighbor.size() != spec.local_profiles(k) {
            return Err(Error::Shape(format!(
                "neighbor chain has {} states, agent {k} has {} neighbor profiles",
                self.neighbor.size(),
                spec.local_profiles(k)
            )));
        }
        if self.non_neighbor.size() != spec.global_profiles(k) {
            return Err(Error::Shape(format!(
                "non-neighbor chain has {} states, agent {k} has {} non-neighbor profiles",
                self.non_neighbor.size(),
                spec.global_profiles(k)
            )));
        }
        Ok(())
    }

    /// Joint chain on `(neighbor profile, non-neighbor profile)` pairs,
    /// indexed `n * |S profiles| + s`.
    pub fn joint(&self) -> StochasticKernel {
        crate::markov::product_kernel(&self.neighbor, &self.non_neighbor)
    }
}

/// Per-step record of a single learning agent facing exogenous opponents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    /// Stacked `(α, β)` regrets of the agent, `N + 1` rows.
    pub regrets: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Joint opponent state index, `n * |S profiles| + s`.
    pub opponents: Vec<usize>,
}

/// Agent `k` learns by regret matching while its opponents follow
/// `opponents`. Per step: regrets absorb the current play, then the next own
/// action and the next opponent state are drawn (one uniform each, in that
/// order).
pub fn simulate_agent<R: Rng>(
    spec: &GameSpec,
    k: usize,
    opponents: &OpponentChains,
    initial_action: usize,
    initial_opponents: usize,
    steps: usize,
    rng: &mut R,
) -> Result<AgentRun> {
    opponents.check(spec, k)?;
    let joint_chain = opponents.joint();
    let a = spec.action_counts[k];
    let ns = spec.global_profiles(k);
    let mut alpha = vec![0.0; a * a];
    let mut beta = vec![0.0; a * a];
    let mut own = initial_action;
    let mut opp = initial_opponents;
    let mut run = AgentRun {
        regrets: Vec::with_capacity(steps + 1),
        actions: Vec::with_capacity(steps + 1),
        opponents: Vec::with_capacity(steps + 1),
    };
    let stack = |al: &[f64], be: &[f64]| -> Vec<f64> { al.iter().chain(be).copied().collect() };
    run.regrets.push(stack(&alpha, &beta));
    run.actions.push(own);
    run.opponents.push(opp);
    for _ in 0..steps {
        let (gl, gg) = spec.regret_increments(k, own, opp / ns, opp % ns);
        relax_toward(&mut alpha, &gl, spec.epsilon);
        relax_toward(&mut beta, &gg, spec.epsilon);
        let row = action_row(&alpha, &beta, own, a, spec.kappa, spec.xi[k]);
        own = sample_index(&row, rng.random::<f64>());
        opp = sample_index(&joint_chain.row(opp), rng.random::<f64>());
        run.regrets.push(stack(&alpha, &beta));
        run.actions.push(own);
        run.opponents.push(opp);
    }
    Ok(run)
}

/// Closed loop: every agent learns simultaneously. Demonstration only.
pub fn simulate_game(spec: &GameSpec, steps: usize, seed: u64) -> Result<Vec<RegretState>> {
    let mut rng = replicate_rng(seed, 0);
    let mut state = RegretState::zero_random(spec, &mut rng);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.clone());
    for _ in 0..steps {
        let joint = state.last_action.clone();
        let mut next = regret_update(spec, &state, &joint)?;
        let mut actions = Vec::with_capacity(spec.num_agents);
        for k in 0..spec.num_agents {
            let p = action_distribution(spec, &next, k);
            actions.push(sample_index(p.weights(), rng.random::<f64>()));
        }
        next.last_action = actions;
        out.push(next.clone());
        state = next;
    }
    Ok(out)
}
