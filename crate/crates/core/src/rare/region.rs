//! Bounded convex regions around a stable point.

use serde::{Deserialize, Serialize};

use crate::numeric::norm2;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Geometry {
    /// Axis-aligned box `|x_i − c_i| < h_i`.
    Box { half_widths: Vec<f64> },
    /// Open ball `‖x − c‖ < r`.
    Ball { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeRegion {
    pub center: Vec<f64>,
    pub geometry: Geometry,
}

impl EscapeRegion {
    pub fn new(center: Vec<f64>, geometry: Geometry) -> Result<Self> {
        match &geometry {
            Geometry::Box { half_widths } => {
                if half_widths.len() != center.len() {
                    return Err(Error::Shape(format!(
                        "box has {} half-widths for a {}-dimensional center",
                        half_widths.len(),
                        center.len()
                    )));
                }
                if half_widths.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                    return Err(Error::Domain("box half-widths must be positive and finite".into()));
                }
            }
            Geometry::Ball { radius } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
                }
            }
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("region center must be finite and non-empty".into()));
        }
        Ok(Self { center, geometry })
    }

    pub fn interval(center: f64, half_width: f64) -> Result<Self> {
        Self::new(vec![center], Geometry::Box { half_widths: vec![half_width] })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Negative inside (minus the distance to the boundary), positive
    /// outside (the distance to the region).
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.geometry {
            Geometry::Ball { radius } => {
                let r: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
                norm2(&r) - radius
            }
            Geometry::Box { half_widths } => {
                let excess: Vec<f64> = x
                    .iter()
                    .zip(&self.center)
                    .zip(half_widths)
                    .map(|((a, c), h)| (a - c).abs() - h)
                    .collect();
                let outside: Vec<f64> = excess.iter().map(|e| e.max(0.0)).collect();
                let out = norm2(&outside);
                if out > 0.0 {
                    out
                } else {
                    excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                }
            }
        }
    }

    /// Nearest point of the boundary.
    pub fn project_to_boundary(&self, x: &[f64]) -> Vec<f64> {
        match &self.geometry {
            Geometry::Ball { radius } => {
                let r: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
                let n = norm2(&r);
                if n == 0.0 {
                    let mut p = self.center.clone();
                    p[0] += radius;
                    return p;
                }
                self.center.iter().zip(&r).map(|(c, ri)| c + radius * ri / n).collect()
            }
            Geometry::Box { half_widths } => {
                let clamped: Vec<f64> = x
                    .iter()
                    .zip(&self.center)
                    .zip(half_widths)
                    .map(|((a, c), h)| a.clamp(c - h, c + h))
                    .collect();
                if !self.contains(x) {
                    return clamped;
                }
                // push the coordinate with the least slack onto its face
                let (i, _) = x
                    .iter()
                    .zip(&self.center)
                    .zip(half_widths)
                    .map(|((a, c), h)| h - (a - c).abs())
                    .enumerate()
                    .fold((0, f64::INFINITY), |b, (i, s)| if s < b.1 { (i, s) } else { b });
                let mut p = x.to_vec();
                let side = if x[i] >= self.center[i] { 1.0 } else { -1.0 };
                p[i] = self.center[i] + side * half_widths[i];
                p
            }
        }
    }

    /// Boundary points used as optimization targets: face centers of a
    /// box, or `c ± r e_i` for a ball.
    pub fn boundary_targets(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(2 * d);
        for i in 0..d {
            for side in [1.0, -1.0] {
                let mut p = self.center.clone();
                p[i] += side
                    * match &self.geometry {
                        Geometry::Box { half_widths } => half_widths[i],
                        Geometry::Ball { radius } => *radius,
                    };
                out.push(p);
            }
        }
        out
    }

    /// Same shape scaled about the center by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let geometry = match &self.geometry {
            Geometry::Box { half_widths } => Geometry::Box {
                half_widths: half_widths.iter().map(|h| h * factor).collect(),
            },
            Geometry::Ball { radius } => Geometry::Ball { radius: radius * factor },
        };
        Self::new(self.center.clone(), geometry)
    }
}
