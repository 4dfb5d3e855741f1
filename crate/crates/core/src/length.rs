//! Time-space length of traced rays.
//!
//! The length is the Euclidean arc length of the curve (x0(t), x(t)) over
//! [0, T] -- written exactly as the integral of sqrt((dx0/dt)^2 + |dx/dt|^2),
//! not the identically-zero Lorentzian length of a null curve. The integrand
//! is always evaluated from the analytic right-hand sides at quadrature
//! nodes, never by differencing stored positions, so the integrator's order
//! carries over to the length value.

use nalgebra::DVector;

use crate::domain::DomainSpec;
use crate::error::Result;
use crate::integrator::{integrate_fixed_interval, IntegratorControls, Trajectory};
use crate::metric::{homotopy, MetricSpec};
use crate::shooting::InitialData;

#[derive(Clone, Debug)]
pub struct LengthRecord {
    pub length: f64,
    pub t_used: f64,
    /// True when T comes from the reference-metric exit time rather than
    /// from exit detection in the integrated metric.
    pub frozen_t: bool,
    pub quadrature_error_estimate: f64,
    /// Set when a frozen-interval trace left the domain before t_used; the
    /// length is still integrated over the full interval.
    pub left_domain: bool,
}

/// Arc-length integrand at a packed state, from the analytic right-hand side.
fn speed(metric: &MetricSpec, xi0: f64, y: &DVector<f64>) -> f64 {
    let n = metric.dim();
    let x = y.rows(0, n).into_owned();
    let xi = y.rows(n, n).into_owned();
    let blocks = metric.eval_blocks(&x);
    let dx = &blocks.qprime * &xi;
    let dx0 = blocks.q00 * xi0 + blocks.q0.dot(&xi);
    (dx0 * dx0 + dx.norm_squared()).sqrt()
}

/// Length of a traced ray over its own interval.
pub fn timespace_length(metric: &MetricSpec, traj: &Trajectory) -> LengthRecord {
    let xi0 = traj.init.eta0;
    let (length, estimate) =
        crate::integrator::simpson_dense(&traj.nodes, |_, y| speed(metric, xi0, y));
    let min_speed = traj
        .nodes
        .iter()
        .map(|node| speed(metric, xi0, &node.y))
        .fold(f64::INFINITY, f64::min);
    debug_assert!(length >= traj.t_exit * min_speed - 1e-12 * (1.0 + length.abs()));
    LengthRecord {
        length,
        t_used: traj.t_exit,
        frozen_t: false,
        quadrature_error_estimate: estimate,
        left_domain: traj.left_domain,
    }
}

/// Length in the homotopy metric at `tau`, integrated from the same
/// (y, eta, eta0) over the fixed interval [0, t_frozen] with no exit
/// detection. Departures from the domain are flagged, not fatal: the
/// integral runs to t_frozen regardless (all families are globally defined).
pub fn length_at_tau(
    q1: &MetricSpec,
    q2: &MetricSpec,
    tau: f64,
    init: &InitialData,
    t_frozen: f64,
    domain: &DomainSpec,
    controls: &IntegratorControls,
) -> Result<LengthRecord> {
    let metric = homotopy(q1, q2, tau)?;
    let traj = integrate_fixed_interval(&metric, init, t_frozen, Some(domain), controls)?;
    let mut rec = timespace_length(&metric, &traj);
    rec.frozen_t = true;
    Ok(rec)
}
