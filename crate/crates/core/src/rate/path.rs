//! Action `I(φ) = ∫ L(φ, φ̇) dt` of a piecewise-linear path.

use std::io::Write;

use rayon::prelude::*;

use super::dual::DualProblem;
use crate::numeric::fmt17;
use crate::sa::GeneralSA;
use crate::{Error, Result};

/// Knots on a uniform grid `t_i = i·T/n`, interpolated linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub horizon: f64,
    pub knots: Vec<Vec<f64>>,
}

impl PathSpec {
    pub fn new(horizon: f64, knots: Vec<Vec<f64>>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("path horizon must be positive, got {horizon}")));
        }
        if knots.len() < 2 {
            return Err(Error::Shape("a path needs at least two knots".into()));
        }
        let d = knots[0].len();
        if knots.iter().any(|k| k.len() != d) {
            return Err(Error::Shape("path knots have mixed dimensions".into()));
        }
        if knots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("path knots must be finite".into()));
        }
        Ok(Self { horizon, knots })
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn velocity(&self, i: usize) -> Vec<f64> {
        let dt = self.dt();
        self.knots[i + 1]
            .iter()
            .zip(&self.knots[i])
            .map(|(b, a)| (b - a) / dt)
            .collect()
    }

    /// Position at time `t`, clamped to `[0, T]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.segments();
        let s = (t / self.dt()).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        self.knots[i]
            .iter()
            .zip(&self.knots[i + 1])
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }

    /// The same path with every segment split at its midpoint.
    pub fn refined(&self) -> PathSpec {
        let mut knots = Vec::with_capacity(2 * self.knots.len() - 1);
        for w in self.knots.windows(2) {
            knots.push(w[0].clone());
            knots.push(w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect());
        }
        knots.push(self.knots.last().unwrap().clone());
        PathSpec { horizon: self.horizon, knots }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathAction {
    pub value: f64,
    /// `L` at the left knot of each segment.
    pub segment_rates: Vec<f64>,
    /// First segment with infinite rate.
    pub infinite_segment: Option<usize>,
    /// Action on the grid refined by two.
    pub refined_value: f64,
    /// First-order extrapolation `2 I_{h/2} − I_h`.
    pub richardson: f64,
}

/// Left-knot rates of every segment, in parallel.
pub fn segment_rates(sa: &GeneralSA, path: &PathSpec) -> Result<Vec<f64>> {
    (0..path.segments())
        .into_par_iter()
        .map(|i| {
            let q = DualProblem::new(sa, &path.knots[i])?.solve(&path.velocity(i), None);
            q.map(|q| q.value)
                .map_err(|e| e.context(format!("rate on path segment {i}")))
        })
        .collect()
}

fn left_sum(rates: &[f64], dt: f64) -> (f64, Option<usize>) {
    match rates.iter().position(|r| r.is_infinite()) {
        Some(i) => (f64::INFINITY, Some(i)),
        None => (dt * crate::numeric::pairwise_sum(rates), None),
    }
}

pub fn path_action(sa: &GeneralSA, path: &PathSpec) -> Result<PathAction> {
    let rates = segment_rates(sa, path)?;
    let (value, infinite_segment) = left_sum(&rates, path.dt());
    let fine = path.refined();
    let (refined_value, _) = left_sum(&segment_rates(sa, &fine)?, fine.dt());
    let richardson = if value.is_finite() && refined_value.is_finite() {
        2.0 * refined_value - value
    } else {
        f64::INFINITY
    };
    Ok(PathAction {
        value,
        segment_rates: rates,
        infinite_segment,
        refined_value,
        richardson,
    })
}

/// Records `t,phi_0,…,segment_L`; the final knot carries an empty rate.
pub fn write_path_csv<W: Write>(path: &PathSpec, rates: &[f64], mut out: W) -> std::io::Result<()> {
    let d = path.knots[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("phi{i}")));
    header.push("segment_L".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, k) in path.knots.iter().enumerate() {
        let mut row = vec![fmt17(path.time(i))];
        row.extend(k.iter().map(|v| fmt17(*v)));
        row.push(rates.get(i).map_or(String::new(), |r| fmt17(*r)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
