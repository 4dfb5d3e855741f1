//! Bounded spatial domains and their signed boundary functions.
//!
//! The boundary function is negative strictly inside, zero on the boundary
//! and positive outside, so ray exit detection reduces to a sign change.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::LowDiscrepancy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Box { center: Vec<f64>, half_widths: Vec<f64> },
}

impl DomainSpec {
    pub fn unit_ball(dim: usize) -> Self {
        DomainSpec::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Ball { center, .. } => center.len(),
            DomainSpec::Box { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ball { center, radius } => {
                if center.is_empty() || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidMetric("ball center must be finite and non-empty".into()));
                }
                if !(*radius > 0.0) {
                    return Err(Error::InvalidMetric(format!("ball radius must be positive, got {radius}")));
                }
            }
            DomainSpec::Box { center, half_widths } => {
                if center.len() != half_widths.len() {
                    return Err(Error::DimensionMismatch {
                        left: center.len(),
                        right: half_widths.len(),
                        context: "box center vs half_widths",
                    });
                }
                if center.is_empty() || !half_widths.iter().all(|h| *h > 0.0) {
                    return Err(Error::InvalidMetric("box half_widths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Signed boundary value: negative inside, zero on the boundary, positive
    /// outside. For a ball this is `|x - center| - radius`.
    pub fn boundary_value(&self, x: &DVector<f64>) -> f64 {
        match self {
            DomainSpec::Ball { center, radius } => {
                let mut s = 0.0;
                for (xi, ci) in x.iter().zip(center) {
                    s += (xi - ci) * (xi - ci);
                }
                s.sqrt() - radius
            }
            DomainSpec::Box { center, half_widths } => {
                let mut m = f64::NEG_INFINITY;
                for ((xi, ci), hi) in x.iter().zip(center).zip(half_widths) {
                    m = m.max((xi - ci).abs() - hi);
                }
                m
            }
        }
    }

    /// Gradient of the boundary function. For boxes the gradient of the active
    /// face is returned (edges pick the first maximizing coordinate).
    pub fn boundary_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        match self {
            DomainSpec::Ball { center, .. } => {
                let mut g = DVector::zeros(n);
                let mut r = 0.0;
                for (k, (xi, ci)) in x.iter().zip(center).enumerate() {
                    g[k] = xi - ci;
                    r += (xi - ci) * (xi - ci);
                }
                let r = r.sqrt();
                if r > 1e-14 {
                    g /= r;
                } else {
                    g[0] = 1.0;
                }
                g
            }
            DomainSpec::Box { center, half_widths } => {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (k, ((xi, ci), hi)) in x.iter().zip(center).zip(half_widths).enumerate() {
                    let v = (xi - ci).abs() - hi;
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                let mut g = DVector::zeros(n);
                g[best] = (x[best] - center[best]).signum();
                g
            }
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.boundary_value(x) < 0.0
    }

    /// Axis-aligned bounding box as (lower, upper) corners.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainSpec::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            DomainSpec::Box { center, half_widths } => (
                center.iter().zip(half_widths).map(|(c, h)| c - h).collect(),
                center.iter().zip(half_widths).map(|(c, h)| c + h).collect(),
            ),
        }
    }

    /// Low-discrepancy interior sample, deterministic in the seed.
    pub fn sample_interior(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let n = self.dim();
        let (lo, hi) = self.bounding_box();
        let ld = LowDiscrepancy::new(n, seed);
        let mut out = Vec::with_capacity(count);
        let mut index = 0u64;
        while out.len() < count && index < 1_000_000 {
            let u = ld.point(index);
            index += 1;
            let x = DVector::from_iterator(
                n,
                (0..n).map(|k| lo[k] + u[k] * (hi[k] - lo[k])),
            );
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    /// Nearest boundary point, used to re-anchor numerically-exited rays.
    pub fn project_to_boundary(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            DomainSpec::Ball { center, radius } => {
                let c = DVector::from_row_slice(center);
                let d = x - &c;
                let r = d.norm();
                if r < 1e-14 {
                    let mut p = c.clone();
                    p[0] += radius;
                    return p;
                }
                &c + d * (*radius / r)
            }
            DomainSpec::Box { center, half_widths } => {
                let n = center.len();
                let mut p = x.clone();
                let mut face = 0usize;
                let mut best = f64::NEG_INFINITY;
                for k in 0..n {
                    let v = (x[k] - center[k]).abs() - half_widths[k];
                    if v > best {
                        best = v;
                        face = k;
                    }
                }
                p[face] = center[face] + half_widths[face] * (x[face] - center[face]).signum();
                for k in 0..n {
                    if k != face {
                        p[k] = p[k].clamp(center[k] - half_widths[k], center[k] + half_widths[k]);
                    }
                }
                p
            }
        }
    }

    /// A boundary point addressed by angles: one polar angle for n = 2,
    /// inclination/azimuth style angles for higher dimensions.
    pub fn boundary_point_from_angles(&self, angles: &[f64]) -> Result<DVector<f64>> {
        match self {
            DomainSpec::Ball { center, radius } => {
                let n = center.len();
                if angles.len() != n - 1 {
                    return Err(Error::DimensionMismatch {
                        left: angles.len(),
                        right: n - 1,
                        context: "boundary angles vs dim-1",
                    });
                }
                // Spherical coordinates: x_k = r * prod(sin(a_1..a_{k-1})) * cos(a_k).
                let mut x = DVector::zeros(n);
                let mut sin_prod = 1.0;
                for k in 0..n {
                    if k < n - 1 {
                        x[k] = radius * sin_prod * angles[k].cos();
                        sin_prod *= angles[k].sin();
                    } else {
                        x[k] = radius * sin_prod;
                    }
                }
                // n = 1 degenerates to the two endpoints; angles is empty.
                if n == 1 {
                    x[0] = *radius;
                }
                for k in 0..n {
                    x[k] += center[k];
                }
                Ok(x)
            }
            DomainSpec::Box { .. } => Err(Error::InvalidFan(
                "angle addressing is only defined for ball domains".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    #[test]
    fn unit_ball_boundary_values() {
        let d = DomainSpec::unit_ball(2);
        assert_eq!(d.boundary_value(&v(&[0.0, 0.0])), -1.0);
        assert_eq!(d.boundary_value(&v(&[1.0, 0.0])), 0.0);
        assert_eq!(d.boundary_value(&v(&[2.0, 0.0])), 1.0);
    }

    #[test]
    fn box_boundary_values_and_gradient() {
        let d = DomainSpec::Box {
            center: vec![0.0, 0.0],
            half_widths: vec![1.0, 2.0],
        };
        assert_eq!(d.boundary_value(&v(&[0.0, 0.0])), -1.0);
        assert_eq!(d.boundary_value(&v(&[1.0, 0.0])), 0.0);
        assert_eq!(d.boundary_value(&v(&[0.0, 2.5])), 0.5);
        let g = d.boundary_gradient(&v(&[0.9, 0.0]));
        assert_eq!(g, v(&[1.0, 0.0]));
    }

    #[test]
    fn ball_gradient_is_unit_radial() {
        let d = DomainSpec::unit_ball(2);
        let g = d.boundary_gradient(&v(&[0.6, 0.8]));
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert!((g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn interior_samples_are_interior_and_deterministic() {
        let d = DomainSpec::unit_ball(2);
        let a = d.sample_interior(64, 7);
        let b = d.sample_interior(64, 7);
        assert_eq!(a.len(), 64);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p, q);
            assert!(d.contains(p));
        }
    }

    #[test]
    fn boundary_point_from_angle_n2() {
        let d = DomainSpec::unit_ball(2);
        let p = d.boundary_point_from_angles(&[0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        let q = d
            .boundary_point_from_angles(&[std::f64::consts::FRAC_PI_2])
            .unwrap();
        assert!(q[0].abs() < 1e-15 && (q[1] - 1.0).abs() < 1e-15);
    }
}
