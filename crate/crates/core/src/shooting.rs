//! Forward null initial data on the boundary and geodesic fans.
//!
//! A fan is a bundle of rays launched from equi-spaced base points in a small
//! boundary neighborhood of an anchor point, either sharing one spatial
//! covector or aiming each ray inward along the local normal chord.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::metric::{hamiltonian, MetricSpec};

/// Absolute boundary tolerance for unit-scale domains.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// A ray is degenerate when the launch velocity is this close to tangential.
pub const GRAZING_TOL: f64 = 1e-8;

fn null_tol(eta: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + eta.norm_squared())
}

/// Initial phase data for one forward null ray starting on the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    /// Base point on the boundary.
    pub y: DVector<f64>,
    /// Spatial covector.
    pub eta: DVector<f64>,
    /// Conserved time covector solving the null condition.
    pub eta0: f64,
    /// Time coordinate at launch; always zero.
    pub x0_start: f64,
}

impl InitialData {
    /// Checks the boundary, null and forward conditions.
    pub fn check(&self, metric: &MetricSpec, domain: &DomainSpec) -> Result<()> {
        let phi = domain.boundary_value(&self.y);
        if phi.abs() > BOUNDARY_TOL {
            return Err(Error::InvalidFan(format!(
                "base point is off the boundary (phi = {phi:.3e})"
            )));
        }
        let blocks = metric.eval_blocks(&self.y);
        let h = hamiltonian(&blocks, self.eta0, &self.eta);
        if h.abs() > null_tol(&self.eta) {
            return Err(Error::InvalidFan(format!("initial data is not null (H = {h:.3e})")));
        }
        let dh_dxi0 = blocks.q00 * self.eta0 + blocks.q0.dot(&self.eta);
        if dh_dxi0 <= 0.0 {
            return Err(Error::InvalidFan(format!(
                "initial data is not forward (dH/dxi0 = {dh_dxi0:.3e})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRule {
    /// Aim each ray so the spatial velocity q' eta points inward along the
    /// boundary normal at its own base point.
    InwardChords,
    /// One shared spatial covector for every base point.
    FixedEta,
}

/// A fan of rays over a boundary neighborhood of the anchor point.
#[derive(Clone, Debug, PartialEq)]
pub struct FanSpec {
    pub y0: DVector<f64>,
    pub epsilon: f64,
    pub count: usize,
    pub direction_rule: DirectionRule,
    /// Shared covector for `FixedEta`; ignored for `InwardChords`.
    pub eta: Option<DVector<f64>>,
}

impl FanSpec {
    pub fn inward(y0: DVector<f64>, epsilon: f64, count: usize) -> Self {
        FanSpec { y0, epsilon, count, direction_rule: DirectionRule::InwardChords, eta: None }
    }

    pub fn fixed(y0: DVector<f64>, epsilon: f64, count: usize, eta: DVector<f64>) -> Self {
        FanSpec { y0, epsilon, count, direction_rule: DirectionRule::FixedEta, eta: Some(eta) }
    }
}

/// Diagnostics for rays dropped during fan construction.
#[derive(Clone, Debug)]
pub struct FanWarning {
    pub ray: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Fan {
    pub rays: Vec<InitialData>,
    pub warnings: Vec<FanWarning>,
}

/// Solves 1/2 q00 eta0^2 + (q0 . eta) eta0 + 1/2 q' eta . eta = 0 for the
/// root satisfying the forward condition q00 eta0 + q0 . eta > 0. In the
/// strict reduced form this is eta0 = sqrt(-q' eta . eta).
pub fn null_covector(metric: &MetricSpec, y: &DVector<f64>, eta: &DVector<f64>) -> Result<f64> {
    if eta.norm() == 0.0 {
        return Err(Error::NoForwardRoot { discriminant: f64::NAN });
    }
    let blocks = metric.eval_blocks(y);
    let a = blocks.q00;
    let b = blocks.q0.dot(eta);
    let c = (eta.transpose() * &blocks.qprime * eta)[(0, 0)];
    // 1/2 a t^2 + b t + 1/2 c = 0  =>  t = (-b +- sqrt(b^2 - a c)) / a
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return Err(Error::NoForwardRoot { discriminant: disc });
    }
    // Forward root: a t + b > 0 picks the plus branch (a > 0).
    let eta0 = (-b + disc.sqrt()) / a;
    if a * eta0 + b <= 0.0 {
        return Err(Error::NoForwardRoot { discriminant: disc });
    }
    Ok(eta0)
}

/// Base points equi-spaced within arc distance `epsilon` of the anchor.
fn base_points(domain: &DomainSpec, y0: &DVector<f64>, epsilon: f64, count: usize) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::InvalidFan("fan count must be >= 1".into()));
    }
    if domain.boundary_value(y0).abs() > BOUNDARY_TOL {
        return Err(Error::InvalidFan(format!(
            "anchor is off the boundary (phi = {:.3e})",
            domain.boundary_value(y0)
        )));
    }
    if count == 1 || epsilon == 0.0 {
        return Ok(vec![y0.clone(); count]);
    }
    let n = domain.dim();
    if n < 2 {
        return Err(Error::InvalidFan(
            "boundary neighborhoods need dim >= 2; use count = 1 with epsilon = 0".into(),
        ));
    }
    match domain {
        DomainSpec::Ball { center, radius } => {
            // Rotate y0 in the plane spanned by the radial direction and a
            // tangent direction; arc-length offsets s in [-eps, eps].
            let c = DVector::from_row_slice(center);
            let r = *radius;
            let radial = (y0 - &c) / r;
            // Tangent: first coordinate direction orthogonalized against the radial.
            let mut t = DVector::zeros(n);
            let mut best = 0;
            for k in 1..n {
                if radial[k].abs() < radial[best].abs() {
                    best = k;
                }
            }
            t[best] = 1.0;
            let t = (&t - &radial * radial.dot(&t)).normalize();
            let mut pts = Vec::with_capacity(count);
            for i in 0..count {
                let s = -epsilon + 2.0 * epsilon * i as f64 / (count as f64 - 1.0);
                let ang = s / r;
                let p = &c + (&radial * ang.cos() + &t * ang.sin()) * r;
                pts.push(p);
            }
            Ok(pts)
        }
        DomainSpec::Box { center, half_widths } => {
            // Stay on the face of the anchor; offsets along the first tangent
            // coordinate of that face.
            let mut face = 0usize;
            let mut best = f64::NEG_INFINITY;
            for k in 0..n {
                let v = (y0[k] - center[k]).abs() - half_widths[k];
                if v > best {
                    best = v;
                    face = k;
                }
            }
            let tangent = (0..n).find(|k| *k != face).ok_or_else(|| {
                Error::InvalidFan("box fans need dim >= 2".into())
            })?;
            let mut pts = Vec::with_capacity(count);
            for i in 0..count {
                let s = -epsilon + 2.0 * epsilon * i as f64 / (count as f64 - 1.0);
                let mut p = y0.clone();
                p[tangent] += s;
                if domain.boundary_value(&p).abs() > BOUNDARY_TOL {
                    return Err(Error::InvalidFan(
                        "fan neighborhood leaves the anchor face".into(),
                    ));
                }
                pts.push(p);
            }
            Ok(pts)
        }
    }
}

/// Builds the fan: equi-spaced base points, one covector per the direction
/// rule, null root per ray. Grazing or outward rays are excluded with a
/// warning; an empty result is an error.
pub fn make_fan(domain: &DomainSpec, metric: &MetricSpec, fan: &FanSpec) -> Result<Fan> {
    let pts = base_points(domain, &fan.y0, fan.epsilon, fan.count)?;
    let mut rays = Vec::with_capacity(pts.len());
    let mut warnings = Vec::new();
    for (i, y) in pts.into_iter().enumerate() {
        let blocks = metric.eval_blocks(&y);
        let grad = domain.boundary_gradient(&y);
        let eta = match fan.direction_rule {
            DirectionRule::FixedEta => match &fan.eta {
                Some(e) => e.clone(),
                None => {
                    return Err(Error::InvalidFan(
                        "direction_rule fixed_eta requires an eta vector".into(),
                    ))
                }
            },
            DirectionRule::InwardChords => {
                // Want q' eta = -grad(phi): eta = (q')^{-1} (-grad), unit-normalized.
                let lu = blocks.qprime.clone().lu();
                match lu.solve(&(-&grad)) {
                    Some(e) => {
                        let norm = e.norm();
                        if norm == 0.0 {
                            warnings.push(FanWarning { ray: i, reason: "zero aim direction".into() });
                            continue;
                        }
                        e / norm
                    }
                    None => {
                        warnings.push(FanWarning { ray: i, reason: "singular spatial block".into() });
                        continue;
                    }
                }
            }
        };
        let velocity = &blocks.qprime * &eta;
        let transversal = grad.dot(&velocity);
        if transversal.abs() < GRAZING_TOL * grad.norm() * velocity.norm() {
            warnings.push(FanWarning { ray: i, reason: "grazing at t = 0".into() });
            continue;
        }
        if transversal >= 0.0 {
            warnings.push(FanWarning { ray: i, reason: "launch velocity points outward".into() });
            continue;
        }
        let eta0 = match null_covector(metric, &y, &eta) {
            Ok(e) => e,
            Err(err) => {
                warnings.push(FanWarning { ray: i, reason: err.to_string() });
                continue;
            }
        };
        let init = InitialData { y, eta, eta0, x0_start: 0.0 };
        init.check(metric, domain)?;
        rays.push(init);
    }
    if rays.is_empty() {
        return Err(Error::EmptyFan);
    }
    Ok(Fan { rays, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    #[test]
    fn null_covector_minkowski() {
        let m = MetricSpec::minkowski(2);
        let eta0 = null_covector(&m, &v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((eta0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_covector_bump_center() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let eta0 = null_covector(&m, &v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((eta0 - 1.1).abs() < 1e-15);
    }

    #[test]
    fn null_covector_general_block() {
        let m = MetricSpec::GeneralBlock {
            q00: 1.0,
            q0: vec![0.2, 0.0],
            spatial: Box::new(MetricSpec::minkowski(2)),
        };
        let y = v(&[1.0, 0.0]);
        let eta = v(&[1.0, 0.0]);
        let eta0 = null_covector(&m, &y, &eta).unwrap();
        // Quadratic-formula root -0.2 + sqrt(1.04).
        assert!((eta0 - 0.8198039027185569).abs() < 1e-14);
        let h = hamiltonian(&m.eval_blocks(&y), eta0, &eta);
        assert!(h.abs() <= 1e-12);
    }

    #[test]
    fn eta0_even_in_eta_for_time_symmetric_metrics() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.2, 0.1], sigma: 0.4 };
        let y = v(&[1.0, 0.0]);
        let eta = v(&[0.3, -0.8]);
        let a = null_covector(&m, &y, &eta).unwrap();
        let b = null_covector(&m, &y, &(-&eta)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fan_of_three_inward_rays() {
        let dom = DomainSpec::unit_ball(2);
        let m = MetricSpec::minkowski(2);
        let fan = make_fan(&dom, &m, &FanSpec::inward(v(&[1.0, 0.0]), 0.1, 3)).unwrap();
        assert_eq!(fan.rays.len(), 3);
        assert!(fan.warnings.is_empty());
        for ray in &fan.rays {
            assert!(dom.boundary_value(&ray.y).abs() <= BOUNDARY_TOL);
            assert!((&ray.y - v(&[1.0, 0.0])).norm() <= 0.1 + 1e-12);
            assert!((ray.eta0 - ray.eta.norm()).abs() < 1e-14);
            ray.check(&m, &dom).unwrap();
        }
    }

    #[test]
    fn fixed_eta_fan_shares_covector() {
        let dom = DomainSpec::unit_ball(2);
        let m = MetricSpec::minkowski(2);
        let eta = v(&[1.0, 0.0]); // inward at (1,0): q' eta = -eta
        let fan = make_fan(&dom, &m, &FanSpec::fixed(v(&[1.0, 0.0]), 0.05, 5, eta.clone())).unwrap();
        assert_eq!(fan.rays.len(), 5);
        for ray in &fan.rays {
            assert_eq!(ray.eta, eta);
        }
    }

    #[test]
    fn tangent_ray_is_excluded_with_warning() {
        let dom = DomainSpec::unit_ball(2);
        let m = MetricSpec::minkowski(2);
        // Tangent covector at (1,0): velocity -eta is tangent to the circle.
        let fan = make_fan(&dom, &m, &FanSpec::fixed(v(&[1.0, 0.0]), 0.0, 1, v(&[0.0, 1.0])));
        assert!(matches!(fan, Err(Error::EmptyFan)));
        // With a wider fan the non-tangent base points survive.
        let fan = make_fan(&dom, &m, &FanSpec::fixed(v(&[1.0, 0.0]), 0.3, 9, v(&[0.0, 1.0]))).unwrap();
        assert!(!fan.warnings.is_empty());
        assert!(fan.rays.len() < 9);
    }

    #[test]
    fn degenerate_neighborhood_single_anchor_ray() {
        let dom = DomainSpec::unit_ball(2);
        let m = MetricSpec::minkowski(2);
        let fan = make_fan(&dom, &m, &FanSpec::inward(v(&[1.0, 0.0]), 0.0, 1)).unwrap();
        assert_eq!(fan.rays.len(), 1);
        assert_eq!(fan.rays[0].y, v(&[1.0, 0.0]));
        // Inward aim at (1,0) under minkowski is eta = (1,0).
        assert!((&fan.rays[0].eta - v(&[1.0, 0.0])).norm() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// The forward null root leaves a Hamiltonian residual within the
            /// null tolerance and satisfies the strict forward inequality.
            #[test]
            fn null_root_is_null_and_forward(
                angle in 0.0..std::f64::consts::TAU,
                ex in -2.0..2.0f64,
                ey in -2.0..2.0f64,
                q01 in -0.4..0.4f64,
            ) {
                prop_assume!(ex.abs() + ey.abs() > 1e-3);
                let m = MetricSpec::GeneralBlock {
                    q00: 1.0,
                    q0: vec![q01, 0.0],
                    spatial: Box::new(MetricSpec::ConformalBump {
                        a: 0.1,
                        center: vec![0.0, 0.0],
                        sigma: 0.5,
                    }),
                };
                let y = v(&[angle.cos(), angle.sin()]);
                let eta = v(&[ex, ey]);
                let eta0 = null_covector(&m, &y, &eta).unwrap();
                let blocks = m.eval_blocks(&y);
                let h = hamiltonian(&blocks, eta0, &eta);
                prop_assert!(h.abs() <= 1e-12 * (1.0 + eta.norm_squared()));
                prop_assert!(blocks.q00 * eta0 + blocks.q0.dot(&eta) > 0.0);
            }
        }
    }

    #[test]
    fn box_fan_stays_on_face() {
        let dom = DomainSpec::Box { center: vec![0.0, 0.0], half_widths: vec![1.0, 1.0] };
        let m = MetricSpec::minkowski(2);
        let fan = make_fan(&dom, &m, &FanSpec::inward(v(&[1.0, 0.0]), 0.2, 5)).unwrap();
        assert_eq!(fan.rays.len(), 5);
        for ray in &fan.rays {
            assert_eq!(ray.y[0], 1.0);
            assert!(ray.y[1].abs() <= 0.2 + 1e-12);
        }
    }
}
