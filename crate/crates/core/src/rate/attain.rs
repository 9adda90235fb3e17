//! Which mean drifts a noise chain can sustain.
//!
//! For an irreducible chain with support graph `E`, the set of mean drifts
//! `Σ_w U(w) μ(w)` over invariant measures of kernels supported in `E` is
//! the convex hull of simple-cycle averages of `U`. Linear functionals over
//! that polytope are maximized by Karp's maximum cycle mean.

use nalgebra::DMatrix;

use crate::numeric::{dot, norm2};

/// Affine hull of the drift values `{U(w)}`: `U(w) = origin + basis·y_w`.
#[derive(Debug, Clone)]
pub struct AffineHull {
    pub origin: Vec<f64>,
    /// Orthonormal columns, `d × r`.
    pub basis: DMatrix<f64>,
    /// Reduced coordinates `y_w`, one per noise state.
    pub coords: Vec<Vec<f64>>,
}

impl AffineHull {
    pub fn new(points: &[Vec<f64>]) -> Self {
        let d = points[0].len();
        let origin = points[0].clone();
        let n = points.len();
        let diffs = DMatrix::from_fn(d, n, |i, w| points[w][i] - origin[i]);
        let scale = points.iter().map(|p| norm2(p)).fold(1.0, f64::max);
        let svd = diffs.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-10 * scale)
            .collect();
        let basis = DMatrix::from_fn(d, keep.len(), |i, j| u[(i, keep[j])]);
        let coords = points.iter().map(|p| project(&basis, &origin, p).0).collect();
        Self { origin, basis, coords }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Reduced coordinates of `p` and the component of `p − origin`
    /// orthogonal to the hull.
    pub fn split(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        project(&self.basis, &self.origin, p)
    }

    pub fn lift_direction(&self, a: &[f64]) -> Vec<f64> {
        let d = self.origin.len();
        (0..d)
            .map(|i| (0..self.rank()).map(|j| self.basis[(i, j)] * a[j]).sum())
            .collect()
    }
}

fn project(basis: &DMatrix<f64>, origin: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = origin.len();
    let r = basis.ncols();
    let diff: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
    let coords: Vec<f64> = (0..r)
        .map(|j| (0..d).map(|i| basis[(i, j)] * diff[i]).sum())
        .collect();
    let resid = (0..d)
        .map(|i| diff[i] - (0..r).map(|j| basis[(i, j)] * coords[j]).sum::<f64>())
        .collect();
    (coords, resid)
}

/// Maximum cycle mean of node values `f` on a digraph, with one cycle
/// attaining it (as a node sequence, first node not repeated).
pub fn max_cycle_mean(adj: &[Vec<usize>], f: &[f64]) -> Option<(f64, Vec<usize>)> {
    let n = adj.len();
    let neg = f64::NEG_INFINITY;
    // d[k][v]: best weight of a k-edge walk ending at v, any start
    let mut d = vec![vec![neg; n]; n + 1];
    let mut pred = vec![vec![usize::MAX; n]; n + 1];
    d[0].iter_mut().for_each(|v| *v = 0.0);
    for k in 1..=n {
        for u in 0..n {
            if d[k - 1][u] == neg {
                continue;
            }
            for &v in &adj[u] {
                let cand = d[k - 1][u] + f[u];
                if cand > d[k][v] {
                    d[k][v] = cand;
                    pred[k][v] = u;
                }
            }
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for v in 0..n {
        if d[n][v] == neg {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| d[k][v] > neg)
            .map(|k| (d[n][v] - d[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(b, _)| worst > b) {
            best = Some((worst, v));
        }
    }
    let (value, end) = best?;
    // the optimal n-edge walk into `end` contains an optimal cycle
    let mut walk = vec![end];
    let mut v = end;
    for k in (1..=n).rev() {
        v = pred[k][v];
        walk.push(v);
    }
    walk.reverse();
    let mean = |c: &[usize]| c.iter().map(|&w| f[w]).sum::<f64>() / c.len() as f64;
    let mut best_cycle: Option<Vec<usize>> = None;
    for i in 0..walk.len() {
        for j in (i + 1)..walk.len() {
            if walk[j] == walk[i] {
                let c = walk[i..j].to_vec();
                if best_cycle.as_ref().is_none_or(|b| mean(&c) > mean(b)) {
                    best_cycle = Some(c);
                }
                break;
            }
        }
    }
    let cycle = best_cycle?;
    Some((value.max(mean(&cycle)), cycle))
}

fn cycle_average(points: &[Vec<f64>], cycle: &[usize]) -> Vec<f64> {
    let d = points[0].len();
    let mut out = vec![0.0; d];
    for &w in cycle {
        for i in 0..d {
            out[i] += points[w][i];
        }
    }
    out.iter_mut().for_each(|v| *v /= cycle.len() as f64);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attainability {
    /// Within `distance` of the achievable polytope.
    Inside { distance: f64 },
    /// Unit `direction` with `⟨v, β⟩ − max_cycle ⟨v, U⟩ = margin > 0`.
    Outside { direction: Vec<f64>, margin: f64 },
}

/// Largest `⟨v, c⟩` over achievable drifts `c`.
pub fn support_value(adj: &[Vec<usize>], points: &[Vec<f64>], v: &[f64]) -> (f64, Vec<f64>) {
    let f: Vec<f64> = points.iter().map(|p| dot(v, p)).collect();
    let (val, cycle) = max_cycle_mean(adj, &f).expect("graph has a cycle");
    (val, cycle_average(points, &cycle))
}

/// Separating margin of a candidate direction, if positive.
pub fn certify_outside(
    adj: &[Vec<usize>],
    points: &[Vec<f64>],
    beta: &[f64],
    direction: &[f64],
) -> Option<Attainability> {
    let n = norm2(direction);
    if !(n > 0.0) {
        return None;
    }
    let v: Vec<f64> = direction.iter().map(|a| a / n).collect();
    let (sup, _) = support_value(adj, points, &v);
    let margin = dot(&v, beta) - sup;
    let scale = 1.0 + points.iter().map(|p| norm2(p)).fold(0.0, f64::max);
    (margin > 1e-9 * scale).then_some(Attainability::Outside { direction: v, margin })
}

/// Frank–Wolfe projection of `beta` onto the achievable polytope, stopping
/// at a separating direction or at distance `tol`.
pub fn attainability(
    adj: &[Vec<usize>],
    points: &[Vec<f64>],
    beta: &[f64],
    start: &[f64],
    tol: f64,
) -> Attainability {
    let mut p = start.to_vec();
    let mut best = f64::INFINITY;
    for _ in 0..5_000 {
        let g: Vec<f64> = p.iter().zip(beta).map(|(a, b)| a - b).collect();
        let dist = norm2(&g);
        best = best.min(dist);
        if dist <= tol {
            return Attainability::Inside { distance: dist };
        }
        let v: Vec<f64> = g.iter().map(|a| -a).collect();
        if let Some(out) = certify_outside(adj, points, beta, &v) {
            return out;
        }
        let (_, s) = support_value(adj, points, &v);
        let dir: Vec<f64> = s.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dd = dot(&dir, &dir);
        if dd == 0.0 {
            break;
        }
        let step = (-dot(&g, &dir) / dd).clamp(0.0, 1.0);
        if step == 0.0 {
            break;
        }
        for (pi, di) in p.iter_mut().zip(&dir) {
            *pi += step * di;
        }
    }
    Attainability::Inside { distance: best }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_cycles(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
        // cycles whose smallest node is the start, by DFS
        let n = adj.len();
        let mut out = Vec::new();
        fn dfs(
            adj: &[Vec<usize>],
            start: usize,
            path: &mut Vec<usize>,
            on: &mut Vec<bool>,
            out: &mut Vec<Vec<usize>>,
        ) {
            let u = *path.last().unwrap();
            for &v in &adj[u] {
                if v == start {
                    out.push(path.clone());
                } else if v > start && !on[v] {
                    on[v] = true;
                    path.push(v);
                    dfs(adj, start, path, on, out);
                    path.pop();
                    on[v] = false;
                }
            }
        }
        for s in 0..n {
            let mut on = vec![false; n];
            on[s] = true;
            dfs(adj, s, &mut vec![s], &mut on, &mut out);
        }
        out
    }

    #[test]
    fn karp_matches_cycle_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let adj: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    let mut row: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
                    if row.is_empty() {
                        row.push((i + 1) % n);
                    }
                    row
                })
                .collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let brute = simple_cycles(&adj)
                .iter()
                .map(|c| c.iter().map(|&w| f[w]).sum::<f64>() / c.len() as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let (val, cycle) = max_cycle_mean(&adj, &f).unwrap();
            assert!((val - brute).abs() < 1e-12, "{val} vs {brute}");
            let m = cycle.iter().map(|&w| f[w]).sum::<f64>() / cycle.len() as f64;
            assert!((m - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_of_collinear_points_has_rank_one() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let h = AffineHull::new(&pts);
        assert_eq!(h.rank(), 1);
        let (_, r) = h.split(&[1.0, 0.0]);
        assert!((norm2(&r) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn alternating_chain_cannot_sit_at_a_vertex() {
        // deterministic 0 ↔ 1 flip: only the average (0.5) is sustainable
        let adj = vec![vec![1], vec![0]];
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            attainability(&adj, &pts, &[0.5], &[0.5], 1e-10),
            Attainability::Inside { .. }
        ));
        match attainability(&adj, &pts, &[0.9], &[0.5], 1e-10) {
            Attainability::Outside { direction, margin } => {
                assert_eq!(direction, vec![1.0]);
                assert!((margin - 0.4).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interior_of_full_graph_is_inside() {
        let adj = vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]];
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            attainability(&adj, &pts, &[0.3, 0.3], &[1.0 / 3.0, 1.0 / 3.0], 1e-9),
            Attainability::Inside { .. }
        ));
        assert!(matches!(
            attainability(&adj, &pts, &[0.6, 0.6], &[1.0 / 3.0, 1.0 / 3.0], 1e-9),
            Attainability::Outside { .. }
        ));
    }
}
