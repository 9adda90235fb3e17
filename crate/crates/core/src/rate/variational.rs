//! Exact check of the discrete variational representation
//!
//! `−ε log E exp(−F(X)/ε) = inf_ν E[F(X̄) + ε Σ_i R(ν_i ‖ ρ_{X̄_{i+1}}(w_i, ·))]`
//!
//! over `N` random noise draws. Starting from `(x0, w_0)` the iterates are
//! `X_{i+1} = X_i + εU(X_i, w_i)` and `w_{i+1} ~ ρ_{X_{i+1}}(w_i, ·)`, so a
//! noise sequence `w_1..w_N` determines the path `X_0..X_{N+1}`.
//! The left side is computed by enumerating all sequences; the right side
//! by backward recursion, whose minimizing control at each step is the
//! Gibbs tilt of the base row by the continuation value.

use std::sync::Arc;

use crate::markov::relative_entropy;
use crate::numeric::fmt17;
use crate::sa::GeneralSA;
use crate::{Error, Result};

const MAX_PATHS: usize = 1_000_000;

type PathFn = dyn Fn(&[Vec<f64>]) -> f64 + Send + Sync;

/// Bounded functional of the iterate path `X_0..X_{N+1}`.
#[derive(Clone)]
pub struct TestFunctional {
    f: Arc<PathFn>,
    pub bound: f64,
}

impl std::fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunctional").field("bound", &self.bound).finish()
    }
}

impl TestFunctional {
    pub fn new<F>(bound: f64, f: F) -> Self
    where
        F: Fn(&[Vec<f64>]) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), bound }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(c.abs(), move |_| c)
    }

    /// `Σ_i Σ_j c_ij tanh(a_ij X_i[j] + b_ij)`, bounded by `Σ |c_ij|`.
    /// Each coefficient triple is `(a, b, c)`, indexed `[i][j]`.
    pub fn tanh_sum(coeffs: Vec<Vec<(f64, f64, f64)>>) -> Self {
        let bound = coeffs.iter().flatten().map(|t| t.2.abs()).sum();
        Self::new(bound, move |path| {
            let mut s = 0.0;
            for (x, row) in path.iter().zip(&coeffs) {
                for (xj, &(a, b, c)) in x.iter().zip(row) {
                    s += c * (a * xj + b).tanh();
                }
            }
            s
        })
    }

    pub fn eval(&self, path: &[Vec<f64>]) -> Result<f64> {
        let v = (self.f)(path);
        if !v.is_finite() || v.abs() > self.bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::Domain(format!(
                "test functional value {v} exceeds its bound {}",
                self.bound
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalCheck {
    pub epsilon: f64,
    pub steps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

impl VariationalCheck {
    /// One comma-separated record `eps,N,lhs,rhs,gap`.
    pub fn to_record(&self) -> String {
        format!(
            "{},{},{},{},{}",
            fmt17(self.epsilon),
            self.steps,
            fmt17(self.lhs),
            fmt17(self.rhs),
            fmt17(self.gap)
        )
    }
}

/// Node of the noise-path tree: iterate reached and last noise state.
struct Node {
    path: Vec<Vec<f64>>,
    noise: usize,
}

struct Tree<'a> {
    sa: &'a GeneralSA,
    eps: f64,
    steps: usize,
    n: usize,
}

impl Tree<'_> {
    fn root(&self) -> Node {
        let (z1, z2) = self.sa.z0;
        let w0 = self.sa.join(z1, z2);
        let x1 = self.advance(&self.sa.x0, w0);
        Node { path: vec![self.sa.x0.clone(), x1], noise: w0 }
    }

    fn advance(&self, x: &[f64], w: usize) -> Vec<f64> {
        let (z1, z2) = self.sa.split(w);
        let u = self.sa.drift.eval(x, z1, z2);
        x.iter().zip(&u).map(|(a, b)| a + self.eps * b).collect()
    }

    /// Base row `ρ_{X_{i+1}}(w_i, ·)` at a node.
    fn base_row(&self, node: &Node) -> Result<Vec<f64>> {
        let k = self.sa.product_at(node.path.last().unwrap())?;
        Ok(k.row(node.noise))
    }

    fn child(&self, node: &Node, w: usize) -> Node {
        let mut path = node.path.clone();
        let x = self.advance(path.last().unwrap(), w);
        path.push(x);
        Node { path, noise: w }
    }

    /// `−ε log Σ_paths P e^{−F/ε}` by summing over every leaf.
    fn enumerate(&self, node: &Node, depth: usize, f: &TestFunctional, out: &mut Vec<(f64, f64)>, logp: f64) -> Result<()> {
        if depth == self.steps {
            out.push((logp, f.eval(&node.path)?));
            return Ok(());
        }
        let row = self.base_row(node)?;
        for (w, &p) in row.iter().enumerate() {
            if p > 0.0 {
                self.enumerate(&self.child(node, w), depth + 1, f, out, logp + p.ln())?;
            }
        }
        Ok(())
    }

    /// Continuation value `V` at a node and, when asked, the Gibbs control
    /// rows along the way.
    fn value(&self, node: &Node, depth: usize, f: &TestFunctional) -> Result<f64> {
        if depth == self.steps {
            return f.eval(&node.path);
        }
        let row = self.base_row(node)?;
        let mut terms = Vec::with_capacity(self.n);
        for (w, &p) in row.iter().enumerate() {
            if p > 0.0 {
                let v = self.value(&self.child(node, w), depth + 1, f)?;
                terms.push(p.ln() - v / self.eps);
            }
        }
        Ok(-self.eps * log_sum_exp(&terms))
    }

    /// `E_ν[F + ε Σ R(ν_i ‖ base_i)]` for the control `control(noise
    /// history, base row)`.
    fn controlled(
        &self,
        node: &Node,
        history: &mut Vec<usize>,
        depth: usize,
        f: &TestFunctional,
        control: &dyn Fn(&[usize], &[f64]) -> Result<Vec<f64>>,
    ) -> Result<f64> {
        if depth == self.steps {
            return f.eval(&node.path);
        }
        let base = self.base_row(node)?;
        let nu = control(history, &base)?;
        let mut total = self.eps * relative_entropy(&nu, &base)?;
        if total.is_infinite() {
            return Ok(f64::INFINITY);
        }
        for (w, &q) in nu.iter().enumerate() {
            if q > 0.0 {
                history.push(w);
                total += q * self.controlled(&self.child(node, w), history, depth + 1, f, control)?;
                history.pop();
            }
        }
        Ok(total)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn tree<'a>(sa: &'a GeneralSA, epsilon: f64, steps: usize) -> Result<Tree<'a>> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {epsilon}")));
    }
    let n = sa.noise_size();
    let leaves = (n as f64).powi(steps as i32);
    if leaves > MAX_PATHS as f64 {
        return Err(Error::StateExplosion(format!(
            "{n}^{steps} noise paths exceed the enumeration limit {MAX_PATHS}"
        )));
    }
    Ok(Tree { sa, eps: epsilon, steps, n })
}

/// Left side by enumeration and right side by backward recursion.
pub fn variational_formula_check(
    sa: &GeneralSA,
    f: &TestFunctional,
    epsilon: f64,
    steps: usize,
) -> Result<VariationalCheck> {
    let t = tree(sa, epsilon, steps)?;
    let root = t.root();
    let mut leaves = Vec::new();
    t.enumerate(&root, 0, f, &mut leaves, 0.0)?;
    let terms: Vec<f64> = leaves.iter().map(|(lp, v)| lp - v / epsilon).collect();
    let lhs = -epsilon * log_sum_exp(&terms);
    let rhs = t.value(&root, 0, f)?;
    Ok(VariationalCheck {
        epsilon,
        steps,
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Cost of a given control: `control(history, base_row)` returns the
/// conditional law of the next noise state given the noise drawn so far.
pub fn control_cost(
    sa: &GeneralSA,
    f: &TestFunctional,
    epsilon: f64,
    steps: usize,
    control: &dyn Fn(&[usize], &[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let t = tree(sa, epsilon, steps)?;
    let root = t.root();
    t.controlled(&root, &mut Vec::new(), 0, f, control)
}

/// Cost of the Gibbs control `ν(w') ∝ ρ(w, w') e^{−V(w')/ε}`, evaluated
/// forward; it attains the infimum.
pub fn gibbs_control_cost(sa: &GeneralSA, f: &TestFunctional, epsilon: f64, steps: usize) -> Result<f64> {
    let t = tree(sa, epsilon, steps)?;
    let root = t.root();
    let gibbs = |history: &[usize], base: &[f64]| -> Result<Vec<f64>> {
        let mut node = t.root();
        for &w in history {
            node = t.child(&node, w);
        }
        let mut logw = vec![f64::NEG_INFINITY; base.len()];
        for (w, &p) in base.iter().enumerate() {
            if p > 0.0 {
                let v = t.value(&t.child(&node, w), history.len() + 1, f)?;
                logw[w] = p.ln() - v / epsilon;
            }
        }
        let z = log_sum_exp(&logw);
        Ok(logw.iter().map(|l| (l - z).exp()).collect())
    };
    t.controlled(&root, &mut Vec::new(), 0, f, &gibbs)
}
