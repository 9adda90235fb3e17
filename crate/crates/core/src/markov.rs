//! Finite-state probability kernels.
//!
//! Everything downstream (noise chains, tilted kernels, control kernels)
//! is built from the three types here:
//!
//! * [`ProbVector`]: a distribution on `{0, .., n-1}`
//! * [`StochasticKernel`]: a square row-stochastic matrix
//! * [`StateDepKernel`]: a continuous family `x ↦ ρ_x` of kernels
//!
//! Invariant measures are found by a direct linear solve with the
//! normalization row substituted in, so periodic irreducible chains work too.
//! Relative entropy uses natural logarithms and `0·log(0/q) = 0`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numeric::LINALG_TOL;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    weights: Vec<f64>,
}

impl ProbVector {
    /// Validates nonnegativity and unit mass (within [`LINALG_TOL`]).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidProb("empty weight vector".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidProb(format!("weight {i} is {w}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > LINALG_TOL {
            return Err(Error::InvalidProb(format!(
                "weights sum to {s}, residual {:e}",
                s - 1.0
            )));
        }
        Ok(Self { weights })
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProb("negative or non-finite weight".into()));
        }
        let s: f64 = weights.iter().sum();
        if s <= 0.0 {
            return Err(Error::InvalidProb("zero total mass".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / s).collect(),
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }

    /// Product measure on the product space, indexed `a * other.len() + b`.
    pub fn tensor(&self, other: &ProbVector) -> ProbVector {
        let mut weights = Vec::with_capacity(self.len() * other.len());
        for &p in &self.weights {
            for &q in &other.weights {
                weights.push(p * q);
            }
        }
        ProbVector { weights }
    }

    pub fn tv_distance(&self, other: &ProbVector) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Findings of [`validate_kernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `row_sum - 1` per row.
    pub row_sum_residuals: Vec<f64>,
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub non_finite_entries: Vec<(usize, usize)>,
    pub zero_rows: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.negative_entries.is_empty()
            && self.non_finite_entries.is_empty()
            && self.zero_rows.is_empty()
            && self
                .row_sum_residuals
                .iter()
                .all(|r| r.abs() <= LINALG_TOL)
    }

    fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.negative_entries.is_empty() {
            parts.push(format!("negative entries {:?}", self.negative_entries));
        }
        if !self.non_finite_entries.is_empty() {
            parts.push(format!("non-finite entries {:?}", self.non_finite_entries));
        }
        if !self.zero_rows.is_empty() {
            parts.push(format!("zero rows {:?}", self.zero_rows));
        }
        let bad: Vec<(usize, f64)> = self
            .row_sum_residuals
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, r)| r.abs() > LINALG_TOL)
            .collect();
        if !bad.is_empty() {
            parts.push(format!("row-sum residuals {bad:?}"));
        }
        parts.join("; ")
    }
}

/// Checks raw rows for stochasticity. Only a non-square input is an error;
/// every other defect is reported.
pub fn validate_kernel(rows: &[Vec<f64>]) -> Result<ValidationReport> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Shape("kernel has no rows".into()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Shape(format!(
            "kernel is not square: {n} rows but row {i} has {} entries",
            r.len()
        )));
    }
    let mut report = ValidationReport {
        row_sum_residuals: Vec::with_capacity(n),
        negative_entries: Vec::new(),
        non_finite_entries: Vec::new(),
        zero_rows: Vec::new(),
    };
    for (i, row) in rows.iter().enumerate() {
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                report.non_finite_entries.push((i, j));
                continue;
            }
            if v < 0.0 {
                report.negative_entries.push((i, j, v));
            }
            s += v;
        }
        if row.iter().all(|&v| v == 0.0) {
            report.zero_rows.push(i);
        }
        report.row_sum_residuals.push(s - 1.0);
    }
    Ok(report)
}

/// Square row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticKernel {
    m: DMatrix<f64>,
}

impl StochasticKernel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let report = validate_kernel(&rows)?;
        if !report.is_valid() {
            return Err(Error::InvalidKernel(report.summary()));
        }
        let n = rows.len();
        Ok(Self {
            m: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        })
    }

    /// Accepts a computed matrix, rescaling rows to remove round-off drift.
    /// Still rejects negative entries and empty rows.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Shape(format!(
                "kernel must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut m = m;
        for i in 0..m.nrows() {
            let mut s = 0.0;
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidKernel(format!("entry ({i},{j}) = {v}")));
                }
                s += v;
            }
            if s <= 0.0 {
                return Err(Error::InvalidKernel(format!("row {i} is zero")));
            }
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidKernel(format!("row {i} sums to {s}")));
            }
            for j in 0..m.ncols() {
                m[(i, j)] /= s;
            }
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn size(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.m.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|i| self.row(i)).collect()
    }

    /// `μK` for a row vector μ.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n];
        for (i, &w) in mu.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += w * self.m[(i, j)];
            }
        }
        out
    }

    /// `Kf` for a column vector f.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|i| (0..n).map(|j| self.m[(i, j)] * f[j]).sum())
            .collect()
    }

    /// Directed graph on states with an edge `i → j` iff `K(i,j) > 0`.
    pub fn support_graph(&self) -> Vec<Vec<usize>> {
        let n = self.size();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.m[(i, j)] > 0.0).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Irreducibility {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Period of the class containing state 0; 0 when that class has no cycle.
    pub period: usize,
    pub components: Vec<Vec<usize>>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reachable_from(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Strongly connected components of a digraph given as adjacency lists,
/// each sorted, ordered by smallest member.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let reach: Vec<Vec<bool>> = (0..n).map(|s| reachable_from(adj, s)).collect();
    let mut assigned = vec![false; n];
    let mut comps = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let comp: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        comps.push(comp);
    }
    comps
}

pub fn check_irreducible_aperiodic(k: &StochasticKernel) -> Irreducibility {
    let adj = k.support_graph();
    let components = strongly_connected_components(&adj);
    let irreducible = components.len() == 1;
    let class0: Vec<bool> = {
        let mut c = vec![false; adj.len()];
        for comp in &components {
            if comp.contains(&0) {
                for &j in comp {
                    c[j] = true;
                }
            }
        }
        c
    };
    // BFS levels inside the class of state 0; the period is the gcd of
    // level(u) + 1 - level(v) over class edges u → v.
    let mut level = vec![usize::MAX; adj.len()];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if class0[v] && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut period = 0usize;
    for u in 0..adj.len() {
        if !class0[u] {
            continue;
        }
        for &v in &adj[u] {
            if class0[v] {
                let diff = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, diff);
            }
        }
    }
    Irreducibility {
        irreducible,
        aperiodic: period == 1,
        period,
        components,
    }
}

/// Unique invariant measure of an irreducible kernel.
pub fn invariant_measure(k: &StochasticKernel) -> Result<ProbVector> {
    let adj = k.support_graph();
    let components = strongly_connected_components(&adj);
    if components.len() != 1 {
        return Err(Error::Reducible { components });
    }
    let n = k.size();
    // (Kᵀ − I) π = 0 with the last equation replaced by Σπ = 1.
    let mut a = k.matrix().transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu
        .solve(&b)
        .ok_or_else(|| Error::InvalidKernel("singular stationarity system".into()))?;
    // one step of iterative refinement
    let r = &b - &a * &pi;
    if let Some(corr) = lu.solve(&r) {
        pi += corr;
    }
    let weights: Vec<f64> = pi.iter().map(|&v| v.max(0.0)).collect();
    ProbVector::normalized(weights)
}

/// `‖πK − π‖∞`.
pub fn stationarity_residual_inf(k: &StochasticKernel, pi: &[f64]) -> f64 {
    k.push_forward(pi)
        .iter()
        .zip(pi)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// `R(p‖q) = Σ p log(p/q)` in nats; `+∞` when p is not absolutely
/// continuous with respect to q.
pub fn relative_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "relative entropy of vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    // rounding can leave a tiny negative value for p ≈ q
    Ok(total.max(0.0))
}

/// Kernel on the product space, entry `K1(a,a')·K2(b,b')` at
/// `(a*n2 + b, a'*n2 + b')`.
pub fn product_kernel(k1: &StochasticKernel, k2: &StochasticKernel) -> StochasticKernel {
    StochasticKernel {
        m: k1.matrix().kronecker(k2.matrix()),
    }
}

/// Smallest `n` with `max_i TV(δ_i Kⁿ, π) < tol`; `None` if not reached by `cap`.
pub fn mixing_steps(k: &StochasticKernel, tol: f64, cap: usize) -> Result<Option<usize>> {
    let pi = invariant_measure(k)?;
    let n = k.size();
    let mut dists: Vec<Vec<f64>> = (0..n).map(|i| ProbVector::point_mass(n, i).into_inner()).collect();
    for step in 0..=cap {
        let worst = dists
            .iter()
            .map(|d| {
                0.5 * d
                    .iter()
                    .zip(pi.weights())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0f64, f64::max);
        if worst < tol {
            return Ok(Some(step));
        }
        for d in dists.iter_mut() {
            *d = k.push_forward(d);
        }
    }
    Ok(None)
}

type KernelEval = dyn Fn(&[f64]) -> Result<StochasticKernel> + Send + Sync;

/// A family `x ↦ ρ_x` of kernels on a fixed finite space.
#[derive(Clone)]
pub struct StateDepKernel {
    size: usize,
    eval: Arc<KernelEval>,
    /// Optional Lipschitz bound of `x ↦ ρ_x` (entrywise, for diagnostics).
    pub continuity_modulus: Option<f64>,
}

impl std::fmt::Debug for StateDepKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateDepKernel")
            .field("size", &self.size)
            .field("continuity_modulus", &self.continuity_modulus)
            .finish()
    }
}

impl StateDepKernel {
    pub fn from_fn<F>(size: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<StochasticKernel> + Send + Sync + 'static,
    {
        Self {
            size,
            eval: Arc::new(f),
            continuity_modulus: None,
        }
    }

    pub fn constant(k: StochasticKernel) -> Self {
        let size = k.size();
        Self {
            size,
            eval: Arc::new(move |_| Ok(k.clone())),
            continuity_modulus: Some(0.0),
        }
    }

    pub fn linear(spec: LinearKernelSpec) -> Result<Self> {
        spec.check()?;
        let size = spec.base.len();
        let modulus = spec
            .slopes
            .iter()
            .flat_map(|s| s.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let spec = Arc::new(spec);
        Ok(Self {
            size,
            eval: Arc::new(move |x| spec.eval(x)),
            continuity_modulus: Some(modulus),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn at(&self, x: &[f64]) -> Result<StochasticKernel> {
        let k = (self.eval)(x)?;
        if k.size() != self.size {
            return Err(Error::Shape(format!(
                "state-dependent kernel returned size {} (expected {})",
                k.size(),
                self.size
            )));
        }
        Ok(k)
    }
}

/// `ρ_x(i,j) ∝ max(floor, base(i,j) + Σ_l x_l·slopes[l](i,j))`, rows renormalized.
/// A positive floor keeps every member irreducible and aperiodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearKernelSpec {
    pub base: Vec<Vec<f64>>,
    #[serde(default)]
    pub slopes: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1e-3
}

impl LinearKernelSpec {
    fn check(&self) -> Result<()> {
        let n = self.base.len();
        if n == 0 || self.base.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("linear kernel base must be square".into()));
        }
        for s in &self.slopes {
            if s.len() != n || s.iter().any(|r| r.len() != n) {
                return Err(Error::Shape("linear kernel slope must match base".into()));
            }
        }
        if !(self.floor >= 0.0) {
            return Err(Error::Domain("kernel floor must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<StochasticKernel> {
        if x.len() < self.slopes.len() {
            return Err(Error::Shape(format!(
                "kernel family has {} slopes but x has dimension {}",
                self.slopes.len(),
                x.len()
            )));
        }
        let n = self.base.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let mut v = self.base[i][j];
            for (l, s) in self.slopes.iter().enumerate() {
                v += x[l] * s[i][j];
            }
            v.max(self.floor)
        });
        let mut m = m;
        for i in 0..n {
            let s: f64 = m.row(i).sum();
            for j in 0..n {
                m[(i, j)] /= s;
            }
        }
        StochasticKernel::from_matrix(m)
    }
}

#[derive(Debug, Deserialize)]
struct KernelFile {
    kernels: BTreeMap<String, KernelBlock>,
}

#[derive(Debug, Deserialize)]
struct KernelBlock {
    rows: Vec<Vec<f64>>,
}

/// Parses named kernel blocks:
///
/// ```toml
/// [kernels.rho2]
/// rows = [[0.9, 0.1], [0.5, 0.5]]
/// ```
pub fn parse_kernels(text: &str) -> Result<BTreeMap<String, StochasticKernel>> {
    let file: KernelFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("kernel file: {e}")))?;
    file.kernels
        .into_iter()
        .map(|(name, block)| {
            StochasticKernel::from_rows(block.rows)
                .map(|k| (name.clone(), k))
                .map_err(|e| e.context(format!("kernel `{name}`")))
        })
        .collect()
}

pub fn load_kernels(path: &Path) -> Result<BTreeMap<String, StochasticKernel>> {
    let text = std::fs::read_to_string(path)?;
    parse_kernels(&text).map_err(|e| e.context(path.display().to_string()))
}
