//! Oracles and random instances shared by the integration tests. Every
//! oracle here is computed along a route that does not call the library
//! routine it is compared against.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regret_ldp::game::{GameConfig, GameSpec};
use regret_ldp::markov::{LinearKernelSpec, StateDepKernel, StochasticKernel};
use regret_ldp::rate::DualProblem;
use regret_ldp::sa::{Drift, GeneralSA};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row of positive weights bounded below by `floor`, normalized.
pub fn random_row<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn random_positive_rows<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_row(rng, n, 0.05)).collect()
}

/// Sparse rows with a random cyclic permutation in the support, so the
/// chain is irreducible but may be periodic.
pub fn random_sparse_rows<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut rows = vec![vec![0.0; n]; n];
    for k in 0..n {
        let (i, j) = (order[k], order[(k + 1) % n]);
        rows[i][j] = 0.2 + rng.random::<f64>();
        for (jj, v) in rows[i].iter_mut().enumerate() {
            if jj != j && rng.random::<f64>() < 0.3 {
                *v = rng.random::<f64>();
            }
        }
        let s: f64 = rows[i].iter().sum();
        rows[i].iter_mut().for_each(|v| *v /= s);
    }
    rows
}

/// Random state-dependent model with `m1 × m2` noise states in `R^d`,
/// affine drift `offsets − x` and a linear kernel family for `ρ¹`.
pub fn random_sa<R: Rng>(rng: &mut R, m1: usize, m2: usize, d: usize, eps: f64) -> GeneralSA {
    let offsets: Vec<Vec<Vec<f64>>> = (0..m1)
        .map(|_| {
            (0..m2)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let slopes: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|_| {
            (0..m1)
                .map(|_| (0..m1).map(|_| rng.random_range(-0.1..0.1)).collect())
                .collect()
        })
        .collect();
    let spec = LinearKernelSpec {
        base: random_positive_rows(rng, m1),
        slopes,
        floor: 1e-2,
    };
    GeneralSA::new(
        Drift::affine(offsets, 1.0).unwrap(),
        StateDepKernel::linear(spec).unwrap(),
        StochasticKernel::from_rows(random_positive_rows(rng, m2)).unwrap(),
        eps,
        (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        (rng.random_range(0..m1), rng.random_range(0..m2)),
    )
    .unwrap()
}

/// Joint transition row `ρ¹_x(z1,·) ⊗ ρ²(z2,·)`, joint index `z1·m2 + z2`.
pub fn joint_row(sa: &GeneralSA, x: &[f64], w: usize) -> Vec<f64> {
    let m2 = sa.noise2.size();
    let (z1, z2) = (w / m2, w % m2);
    let k1 = sa.noise1.at(x).unwrap();
    let mut out = Vec::new();
    for a in 0..k1.size() {
        for b in 0..m2 {
            out.push(k1.get(z1, a) * sa.noise2.get(z2, b));
        }
    }
    out
}

pub fn drift_at(sa: &GeneralSA, x: &[f64], w: usize) -> Vec<f64> {
    let m2 = sa.noise2.size();
    sa.drift.eval(x, w / m2, w % m2)
}

/// A point in the relative interior of the convex hull of the drift
/// values at `x`, hence an attainable velocity for positive kernels.
pub fn interior_velocity<R: Rng>(rng: &mut R, sa: &GeneralSA, x: &[f64]) -> Vec<f64> {
    let n = sa.noise_size();
    let mu = random_row(rng, n, 0.1);
    let mut beta = vec![0.0; sa.dim()];
    for (w, m) in mu.iter().enumerate() {
        for (b, u) in beta.iter_mut().zip(drift_at(sa, x, w)) {
            *b += m * u;
        }
    }
    beta
}

/// `−ε log E exp(−F(X_0..X_{N+1})/ε)` by walking every noise sequence
/// `w_1..w_N` from `(x0, z0)`.
pub fn enumerate_log_laplace(sa: &GeneralSA, eps: f64, steps: usize, f: &dyn Fn(&[Vec<f64>]) -> f64) -> f64 {
    fn walk(
        sa: &GeneralSA,
        eps: f64,
        left: usize,
        path: &mut Vec<Vec<f64>>,
        w: usize,
        logp: f64,
        f: &dyn Fn(&[Vec<f64>]) -> f64,
        out: &mut Vec<f64>,
    ) {
        let x = path.last().unwrap().clone();
        let u = drift_at(sa, &x, w);
        let next: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + eps * b).collect();
        path.push(next.clone());
        if left == 0 {
            out.push(logp - f(path) / eps);
        } else {
            let row = joint_row(sa, &next, w);
            for (w2, p) in row.iter().enumerate() {
                if *p > 0.0 {
                    walk(sa, eps, left - 1, path, w2, logp + p.ln(), f, out);
                }
            }
        }
        path.pop();
    }
    let m2 = sa.noise2.size();
    let w0 = sa.z0.0 * m2 + sa.z0.1;
    let mut terms = Vec::new();
    walk(sa, eps, steps, &mut vec![sa.x0.clone()], w0, 0.0, f, &mut terms);
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    -eps * (top + s.ln())
}

/// Regrets of agent `k` after `history`, accumulated from the payoff
/// tables of `cfg` as the discounted sum `ε Σ_ι (1−ε)^{n−1−ι} gap_ι`.
pub fn regret_by_sum(cfg: &GameConfig, spec: &GameSpec, k: usize, history: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let a = cfg.action_counts[k];
    let eps = cfg.epsilon;
    let n = history.len();
    let index = |agents: &[usize], joint: &[usize]| {
        agents
            .iter()
            .fold(0usize, |acc, &j| acc * cfg.action_counts[j] + joint[j])
    };
    let nl: usize = spec.neighbors[k].iter().map(|&j| cfg.action_counts[j]).product();
    let ng: usize = spec.non_neighbors[k].iter().map(|&j| cfg.action_counts[j]).product();
    let local = |own: usize, p: usize| {
        if spec.neighbors[k].is_empty() {
            0.0
        } else {
            cfg.local_payoffs[k][own * nl + p]
        }
    };
    let global = |own: usize, p: usize| cfg.global_payoffs[k][own * ng + p];
    let mut alpha = vec![0.0; a * a];
    let mut beta = vec![0.0; a * a];
    for (iota, joint) in history.iter().enumerate() {
        let weight = eps * (1.0 - eps).powi((n - 1 - iota) as i32);
        let lp = index(&spec.neighbors[k], joint);
        let gp = index(&spec.non_neighbors[k], joint);
        let i = joint[k];
        for j in 0..a {
            alpha[i * a + j] += weight * (local(j, lp) - local(i, lp));
            beta[i * a + j] += weight * (global(j, gp) - global(i, gp));
        }
    }
    (alpha, beta)
}

/// Random game on a path graph `0 − 1 − … − (n−1)` with ξ chosen just
/// above its lower limit times `xi_factor`.
pub fn random_game<R: Rng>(rng: &mut R, n: usize, kappa: f64, xi_factor: f64, eps: f64) -> GameConfig {
    let counts: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
    let edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
    let nbrs = |k: usize| -> Vec<usize> {
        (0..n).filter(|&j| j != k && (j + 1 == k || k + 1 == j)).collect()
    };
    let mut local = Vec::new();
    let mut global = Vec::new();
    let mut xi = Vec::new();
    for k in 0..n {
        let nb = nbrs(k);
        let others: Vec<usize> = (0..n).filter(|&j| j != k && !nb.contains(&j)).collect();
        let nl: usize = nb.iter().map(|&j| counts[j]).product();
        let ng: usize = others.iter().map(|&j| counts[j]).product();
        let lt: Vec<f64> = (0..counts[k] * nl).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gt: Vec<f64> = (0..counts[k] * ng).map(|_| rng.random_range(-1.0..1.0)).collect();
        // U = U_l + U_g ranges within the sum of the two spreads
        let spread = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        xi.push(xi_factor * counts[k] as f64 * (spread(&lt) + spread(&gt)) + 1e-9);
        local.push(lt);
        global.push(gt);
    }
    GameConfig {
        num_agents: n,
        action_counts: counts,
        edges,
        local_payoffs: local,
        global_payoffs: global,
        kappa,
        xi,
        epsilon: eps,
    }
}

/// Least action to reach either end of `[c − h, c + h]` from `c` within
/// `horizon`, for a scalar model, by backward dynamic programming over a
/// position grid with `nx` points, a velocity grid of `nv` points on
/// `[−vmax, vmax]` and `nt` time steps. Positions between grid points are
/// linearly interpolated; a step that crosses the boundary pays the
/// fraction of the step spent inside.
pub fn escape_action_dp(
    sa: &GeneralSA,
    c: f64,
    h: f64,
    horizon: f64,
    nx: usize,
    nv: usize,
    nt: usize,
    vmax: f64,
) -> f64 {
    let (lo, hi) = (c - h, c + h);
    let xs: Vec<f64> = (0..nx).map(|i| lo + (hi - lo) * i as f64 / (nx - 1) as f64).collect();
    let vs: Vec<f64> = (0..nv)
        .map(|j| -vmax + 2.0 * vmax * j as f64 / (nv - 1) as f64)
        .collect();
    let dt = horizon / nt as f64;
    let rates: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            let p = DualProblem::new(sa, &[x]).unwrap();
            vs.iter()
                .map(|&v| p.solve(&[v], None).map(|q| q.value).unwrap_or(f64::INFINITY))
                .collect()
        })
        .collect();
    let interp = |w: &[f64], y: f64| -> f64 {
        let s = (y - lo) / (hi - lo) * (nx - 1) as f64;
        let i = (s.floor() as usize).min(nx - 2);
        let t = s - i as f64;
        if t == 0.0 {
            w[i]
        } else if w[i].is_infinite() || w[i + 1].is_infinite() {
            f64::INFINITY
        } else {
            (1.0 - t) * w[i] + t * w[i + 1]
        }
    };
    let mut w = vec![f64::INFINITY; nx];
    w[0] = 0.0;
    w[nx - 1] = 0.0;
    for _ in 0..nt {
        let mut next = w.clone();
        for i in 1..nx - 1 {
            let x = xs[i];
            let mut best = f64::INFINITY;
            for (j, &v) in vs.iter().enumerate() {
                let l = rates[i][j];
                if !l.is_finite() {
                    continue;
                }
                let y = x + v * dt;
                let cost = if y >= hi {
                    (hi - x) / v * l
                } else if y <= lo {
                    (lo - x) / v * l
                } else {
                    dt * l + interp(&w, y)
                };
                best = best.min(cost);
            }
            next[i] = best;
        }
        w = next;
    }
    w[(nx - 1) / 2]
}

/// Writes one line to the process stdout, bypassing the test harness's
/// output capture so summary lines always show.
pub fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}
