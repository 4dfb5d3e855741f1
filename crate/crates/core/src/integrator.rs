//! Reduced Hamiltonian flow with dense output and exit-time detection.
//!
//! The state is (x, xi, x0): the spatial dynamics are driven by the spatial
//! block alone, dx/dt = q' xi, dxi/dt = -1/2 (dq'/dx xi) . xi, while the time
//! coordinate advances by simultaneous quadrature of
//! dx0/dt = q00 xi0 + q0 . xi. The time covector xi0 is carried as a
//! parameter, never stepped, so it is constant to the bit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::metric::{hamiltonian, MetricSpec};
use crate::shooting::{InitialData, BOUNDARY_TOL, GRAZING_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

/// Stepper configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorControls {
    pub method: Method,
    /// Fixed step for rk4; initial step for rk45.
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub t_max: f64,
    /// Bisection width for exit-time localization.
    pub event_tol: f64,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            method: Method::Rk4Fixed,
            step: 1e-3,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            t_max: 100.0,
            event_tol: 1e-10,
        }
    }
}

impl IntegratorControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.t_max > 0.0) || !(self.event_tol > 0.0) {
            return Err(Error::InvalidMetric(
                "integrator step, t_max and event_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Phase-space sample along the flow.
#[derive(Clone, Debug)]
pub struct PhaseState {
    pub t: f64,
    pub x0: f64,
    pub x: DVector<f64>,
    pub xi0: f64,
    pub xi: DVector<f64>,
}

/// One dense-output node: state plus its time derivative (for the cubic
/// Hermite interpolant and for quadratures over analytic right-hand sides).
#[derive(Clone, Debug)]
pub struct Node {
    pub t: f64,
    /// Packed state [x, xi, x0].
    pub y: DVector<f64>,
    /// Packed derivative at t.
    pub dy: DVector<f64>,
}

/// Dense record of one traced ray.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub init: InitialData,
    pub nodes: Vec<Node>,
    pub t_exit: f64,
    pub exit_point: DVector<f64>,
    pub exit_grazing: bool,
    pub h_drift_max: f64,
    /// Set when a frozen-interval trace left the domain before its end time.
    pub left_domain: bool,
}

pub(crate) fn pack(x: &DVector<f64>, xi: &DVector<f64>, x0: f64) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(2 * n + 1);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, n).copy_from(xi);
    y[2 * n] = x0;
    y
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        (self.nodes[0].y.len() - 1) / 2
    }

    pub fn state_at_node(&self, i: usize) -> PhaseState {
        let n = self.dim();
        let node = &self.nodes[i];
        PhaseState {
            t: node.t,
            x0: node.y[2 * n],
            x: node.y.rows(0, n).into_owned(),
            xi0: self.init.eta0,
            xi: node.y.rows(n, n).into_owned(),
        }
    }

    /// Cubic Hermite interpolation of the packed state at time t.
    pub fn dense_state(&self, t: f64) -> DVector<f64> {
        dense_eval(&self.nodes, t)
    }

    pub fn last(&self) -> &Node {
        self.nodes.last().expect("trajectory has at least one node")
    }
}

/// Cubic Hermite interpolation over an ordered node list.
pub(crate) fn dense_eval(nodes: &[Node], t: f64) -> DVector<f64> {
    let idx = match nodes.binary_search_by(|n| n.t.partial_cmp(&t).unwrap()) {
        Ok(i) => return nodes[i].y.clone(),
        Err(i) => i,
    };
    let i = idx.clamp(1, nodes.len() - 1);
    hermite(&nodes[i - 1], &nodes[i], t)
}

/// Composite Simpson over a dense node list with midpoints from the Hermite
/// interpolant, plus one refinement level for a Richardson error estimate.
/// Returns (refined value, estimate).
pub(crate) fn simpson_dense(nodes: &[Node], f: impl Fn(f64, &DVector<f64>) -> f64) -> (f64, f64) {
    let (fine, coarse) = simpson_dense_many::<1>(nodes, |t, y| [f(t, y)]);
    (fine[0], (fine[0] - coarse[0]).abs() / 15.0)
}

/// Simpson for several integrands sharing the interpolated evaluation points.
/// Returns (refined values, coarse values).
pub(crate) fn simpson_dense_many<const K: usize>(
    nodes: &[Node],
    f: impl Fn(f64, &DVector<f64>) -> [f64; K],
) -> ([f64; K], [f64; K]) {
    let mut coarse = [0.0; K];
    let mut fine = [0.0; K];
    for w in nodes.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.t - a.t;
        if h == 0.0 {
            continue;
        }
        let fa = f(a.t, &a.y);
        let fb = f(b.t, &b.y);
        let tm = a.t + 0.5 * h;
        let fm = f(tm, &hermite(a, b, tm));
        let (tq1, tq3) = (a.t + 0.25 * h, a.t + 0.75 * h);
        let fq1 = f(tq1, &hermite(a, b, tq1));
        let fq3 = f(tq3, &hermite(a, b, tq3));
        for k in 0..K {
            coarse[k] += h / 6.0 * (fa[k] + 4.0 * fm[k] + fb[k]);
            fine[k] += h / 12.0 * (fa[k] + 4.0 * fq1[k] + 2.0 * fm[k] + 4.0 * fq3[k] + fb[k]);
        }
    }
    (fine, coarse)
}

fn hermite(a: &Node, b: &Node, t: f64) -> DVector<f64> {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    &a.y * h00 + &a.dy * (h10 * h) + &b.y * h01 + &b.dy * (h11 * h)
}

/// Reduced-system right-hand side for a fixed metric and xi0.
pub(crate) struct GeodesicSystem<'a> {
    pub metric: &'a MetricSpec,
    pub xi0: f64,
}

impl GeodesicSystem<'_> {
    pub fn rhs(&self, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.metric.dim();
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n).into_owned();
        let blocks = self.metric.eval_blocks(&x);
        let d = self
            .metric
            .eval_derivatives(&x, 1)
            .expect("first derivatives are available for all families");
        let dx = &blocks.qprime * &xi;
        for k in 0..n {
            dy[k] = dx[k];
            dy[n + k] = -0.5 * (xi.transpose() * &d.d1[k] * &xi)[(0, 0)];
        }
        dy[2 * n] = blocks.q00 * self.xi0 + blocks.q0.dot(&xi);
    }
}

fn rk4_step(sys: &GeodesicSystem, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> DVector<f64> {
    let dim = y.len();
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    sys.rhs(&(y + k1 * (h / 2.0)), &mut k2);
    sys.rhs(&(y + &k2 * (h / 2.0)), &mut k3);
    sys.rhs(&(y + &k3 * h), &mut k4);
    y + (k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0)
}

/// Dormand-Prince 5(4) step returning (y5, error-estimate norm).
fn dopri_step(sys: &GeodesicSystem, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> (DVector<f64>, f64, DVector<f64>) {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0,
    ];
    let dim = y.len();
    let mut k = vec![k1.clone()];
    for stage in 0..6 {
        let mut arg = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[stage][j];
            if a != 0.0 {
                arg += kj * (a * h);
            }
        }
        let mut ki = DVector::zeros(dim);
        sys.rhs(&arg, &mut ki);
        k.push(ki);
    }
    let mut y5 = y.clone();
    let mut err = DVector::zeros(dim);
    for (j, kj) in k.iter().enumerate() {
        if B5[j] != 0.0 {
            y5 += kj * (B5[j] * h);
        }
        err += kj * ((B5[j] - B4[j]) * h);
    }
    let k_last = k.pop().expect("seven stages");
    (y5, err.amax(), k_last)
}

struct RawPath {
    nodes: Vec<Node>,

}

/// Advances the system to t_end (or until `stop` returns true at a node),
/// recording every accepted node with its derivative.
fn advance(
    sys: &GeodesicSystem,
    y0: DVector<f64>,
    t_end: f64,
    controls: &IntegratorControls,
    mut stop: impl FnMut(f64, &DVector<f64>) -> bool,
) -> RawPath {
    let dim = y0.len();
    let mut nodes = Vec::new();
    let mut t = 0.0;
    let mut y = y0;
    let mut dy = DVector::zeros(dim);
    sys.rhs(&y, &mut dy);
    nodes.push(Node { t, y: y.clone(), dy: dy.clone() });
    match controls.method {
        Method::Rk4Fixed => {
            let h = controls.step;
            while t < t_end {
                if stop(t, &y) {
                    return RawPath { nodes };
                }
                let step = h.min(t_end - t);
                y = rk4_step(sys, &y, &dy, step);
                // Exact grid times to keep the node set reproducible.
                t = if t_end - (t + step) < 1e-15 * t_end.max(1.0) { t_end } else { t + step };
                sys.rhs(&y, &mut dy);
                nodes.push(Node { t, y: y.clone(), dy: dy.clone() });
            }
            RawPath { nodes }
        }
        Method::Rk45Adaptive => {
            let mut h = controls.step;
            while t < t_end {
                if stop(t, &y) {
                    return RawPath { nodes };
                }
                let step = h.min(t_end - t);
                let (y5, err, k_last) = dopri_step(sys, &y, &dy, step);
                let tol = controls.abs_tol + controls.rel_tol * y.amax();
                if err <= tol || step <= 1e-14 {
                    t += step;
                    y = y5;
                    dy = k_last; // FSAL: stage 7 is the derivative at the new point
                    nodes.push(Node { t, y: y.clone(), dy: dy.clone() });
                }
                let scale = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 2.0 };
                h = (step * scale.clamp(0.2, 5.0)).min(controls.t_max);
            }
            RawPath { nodes }
        }
    }
}

/// Traces a ray from the boundary until its first exit, localizing the
/// maximal time T by bisection on the dense output.
pub fn integrate_null_geodesic(
    metric: &MetricSpec,
    init: &InitialData,
    domain: &DomainSpec,
    controls: &IntegratorControls,
) -> Result<Trajectory> {
    controls.validate()?;
    let n = metric.dim();
    let sys = GeodesicSystem { metric, xi0: init.eta0 };
    let y0 = pack(&init.y, &init.eta, init.x0_start);

    // A ray that starts on the boundary touches phi = 0 at t = 0; skip the
    // launch window before arming exit detection. Interior starts arm at once.
    let on_boundary = domain.boundary_value(&init.y).abs() <= BOUNDARY_TOL;
    let arm_after = if on_boundary { 10.0 * controls.step } else { 0.0 };

    let mut crossed: Option<(f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    let path = advance(&sys, y0, controls.t_max, controls, |t, y| {
        let x = y.rows(0, n).into_owned();
        let phi = domain.boundary_value(&x);
        if let Some((tp, phip)) = prev {
            if t > arm_after && phip < 0.0 && phi >= 0.0 {
                crossed = Some((tp, t));
                return true;
            }
        }
        prev = Some((t, phi));
        false
    });

    let (bracket_lo, bracket_hi) = match crossed {
        Some(b) => b,
        None => return Err(Error::NoExit { t_max: controls.t_max }),
    };

    // Assemble a provisional trajectory for dense evaluation on the bracket.
    let mut traj = Trajectory {
        init: init.clone(),
        nodes: path.nodes,
        t_exit: bracket_hi,
        exit_point: DVector::zeros(n),
        exit_grazing: false,
        h_drift_max: 0.0,
        left_domain: false,
    };

    // Bisection on the Hermite interpolant.
    let (mut lo, mut hi) = (bracket_lo, bracket_hi);
    while hi - lo > controls.event_tol {
        let mid = 0.5 * (lo + hi);
        let x = traj.dense_state(mid).rows(0, n).into_owned();
        if domain.boundary_value(&x) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_exit = 0.5 * (lo + hi);

    // Truncate nodes strictly inside, then append the exit node.
    let y_exit = traj.dense_state(t_exit);
    traj.nodes.retain(|node| node.t < t_exit);
    let mut dy_exit = DVector::zeros(2 * n + 1);
    sys.rhs(&y_exit, &mut dy_exit);
    traj.nodes.push(Node { t: t_exit, y: y_exit.clone(), dy: dy_exit.clone() });
    traj.t_exit = t_exit;
    traj.exit_point = y_exit.rows(0, n).into_owned();

    // Grazing flag at the exit.
    let grad = domain.boundary_gradient(&traj.exit_point);
    let vel = dy_exit.rows(0, n).into_owned();
    traj.exit_grazing = grad.dot(&vel).abs() < GRAZING_TOL * grad.norm() * vel.norm();

    finalize_diagnostics(metric, &mut traj)?;
    Ok(traj)
}

/// Traces over the fixed interval [0, t_end] with no exit detection,
/// flagging (not failing) departures from the domain.
pub fn integrate_fixed_interval(
    metric: &MetricSpec,
    init: &InitialData,
    t_end: f64,
    domain: Option<&DomainSpec>,
    controls: &IntegratorControls,
) -> Result<Trajectory> {
    controls.validate()?;
    let n = metric.dim();
    let sys = GeodesicSystem { metric, xi0: init.eta0 };
    let y0 = pack(&init.y, &init.eta, init.x0_start);
    let path = advance(&sys, y0, t_end, controls, |_, _| false);
    let last = path.nodes.last().expect("nonempty path");
    let exit_point = last.y.rows(0, n).into_owned();
    let left_domain = match domain {
        Some(dom) => path.nodes.iter().skip(1).any(|node| {
            let x = node.y.rows(0, n).into_owned();
            dom.boundary_value(&x) > BOUNDARY_TOL
        }),
        None => false,
    };
    let mut traj = Trajectory {
        init: init.clone(),
        nodes: path.nodes,
        t_exit: t_end,
        exit_point,
        exit_grazing: false,
        h_drift_max: 0.0,
        left_domain,
    };
    finalize_diagnostics(metric, &mut traj)?;
    Ok(traj)
}

/// Computes the |H| diagnostic and enforces the forward condition.
fn finalize_diagnostics(metric: &MetricSpec, traj: &mut Trajectory) -> Result<()> {
    let n = traj.dim();
    let mut max_h: f64 = 0.0;
    for node in &traj.nodes {
        let dx0 = node.dy[2 * n];
        if dx0 <= 0.0 {
            return Err(Error::ForwardViolation { t: node.t, value: dx0 });
        }
        let x = node.y.rows(0, n).into_owned();
        let xi = node.y.rows(n, n).into_owned();
        let blocks = metric.eval_blocks(&x);
        max_h = max_h.max(hamiltonian(&blocks, traj.init.eta0, &xi).abs());
    }
    traj.h_drift_max = max_h;
    Ok(())
}

/// Maximum |H| over the nodes of a trajectory (zero for exact null data).
pub fn hamiltonian_drift(metric: &MetricSpec, traj: &Trajectory) -> f64 {
    let n = traj.dim();
    let mut worst: f64 = 0.0;
    for node in &traj.nodes {
        let x = node.y.rows(0, n).into_owned();
        let xi = node.y.rows(n, n).into_owned();
        let blocks = metric.eval_blocks(&x);
        worst = worst.max(hamiltonian(&blocks, traj.init.eta0, &xi).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shooting::null_covector;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    fn init_ray(metric: &MetricSpec, y: &[f64], eta: &[f64]) -> InitialData {
        let y = v(y);
        let eta = v(eta);
        let eta0 = null_covector(metric, &y, &eta).unwrap();
        InitialData { y, eta, eta0, x0_start: 0.0 }
    }

    #[test]
    fn minkowski_diameter_chord() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[1.0, 0.0]);
        let traj = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        assert!((traj.t_exit - 2.0).abs() <= 1e-10);
        assert!((&traj.exit_point - v(&[-1.0, 0.0])).norm() <= 1e-10);
        let last = traj.state_at_node(traj.nodes.len() - 1);
        assert!((last.x0 - 2.0).abs() <= 1e-10);
        // xi stays the launch covector to round-off.
        for i in 0..traj.nodes.len() {
            let s = traj.state_at_node(i);
            assert!((s.xi[0] - 1.0).abs() < 1e-13 && s.xi[1].abs() < 1e-13);
        }
        assert!(!traj.exit_grazing);
    }

    #[test]
    fn minkowski_oblique_chord() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let s = 1.0 / 2.0f64.sqrt();
        let init = init_ray(&m, &[1.0, 0.0], &[s, s]);
        let traj = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        assert!((traj.t_exit - 2.0f64.sqrt()).abs() <= 1e-10);
        assert!((&traj.exit_point - v(&[0.0, -1.0])).norm() <= 1e-10);
    }

    #[test]
    fn conservation_minkowski_exact() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[1.0, 0.0]);
        let traj = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        assert!(hamiltonian_drift(&m, &traj) < 1e-14);
    }

    #[test]
    fn bump_drift_small_and_fourth_order() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[0.9, 0.3]);
        let t1 = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        assert!(hamiltonian_drift(&m, &t1) <= 1e-9);
        // Order-4 evidence: halve the step from a size where truncation still
        // dominates the 1e-15 round-off floor.
        let drift_at = |step: f64| {
            let c = IntegratorControls { step, ..Default::default() };
            hamiltonian_drift(&m, &integrate_null_geodesic(&m, &init, &dom, &c).unwrap())
        };
        let (coarse, fine) = (drift_at(4e-3), drift_at(2e-3));
        assert!(coarse > 1e-13, "coarse drift {coarse} too near round-off to measure order");
        assert!(coarse / fine >= 12.0, "order-4 halving ratio {}", coarse / fine);
    }

    #[test]
    fn non_null_level_set_is_conserved() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let mut init = init_ray(&m, &[1.0, 0.0], &[0.9, 0.3]);
        init.eta0 += 1e-3;
        let traj = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        let h0 = hamiltonian(&m.eval_blocks(&init.y), init.eta0, &init.eta);
        assert!(h0.abs() > 1e-4);
        // |H| stays at |H(0)|: any level set of H is conserved by the flow.
        let drift = hamiltonian_drift(&m, &traj);
        assert!((drift - h0.abs()).abs() <= 1e-9);
        assert_eq!(traj.h_drift_max, drift);
    }

    #[test]
    fn self_convergence_of_exit_data() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[0.9, 0.3]);
        let at = |step: f64| {
            let c = IntegratorControls { step, event_tol: 1e-13, ..Default::default() };
            integrate_null_geodesic(&m, &init, &dom, &c).unwrap()
        };
        let h = 4e-3;
        let (full, half, quarter) = (at(h), at(h / 2.0), at(h / 4.0));
        assert!((full.t_exit - half.t_exit).abs() <= 1e-8);
        assert!((&full.exit_point - &half.exit_point).norm() <= 1e-8);
        // Fourth-order self-convergence of the exit point under halving.
        let e1 = (&full.exit_point - &half.exit_point).norm();
        let e2 = (&half.exit_point - &quarter.exit_point).norm();
        assert!(
            e1 / e2 >= 8.0,
            "exit-point halving ratio {} (errs {e1:.3e}, {e2:.3e})",
            e1 / e2
        );
    }

    #[test]
    fn trapped_ray_reports_no_exit() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[1.0, 0.0]);
        let controls = IntegratorControls { t_max: 1.0, ..Default::default() };
        assert!(matches!(
            integrate_null_geodesic(&m, &init, &dom, &controls),
            Err(Error::NoExit { .. })
        ));
    }

    #[test]
    fn forward_violation_detected() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let init = InitialData {
            y: v(&[1.0, 0.0]),
            eta: v(&[1.0, 0.0]),
            eta0: -1.0, // backward branch of the null cone
            x0_start: 0.0,
        };
        assert!(matches!(
            integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()),
            Err(Error::ForwardViolation { .. })
        ));
    }

    #[test]
    fn fixed_interval_flags_domain_departure() {
        let m = MetricSpec::minkowski(2);
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[1.0, 0.0]);
        let traj =
            integrate_fixed_interval(&m, &init, 3.0, Some(&dom), &IntegratorControls::default())
                .unwrap();
        assert!(traj.left_domain);
        assert!((traj.exit_point[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn dense_output_matches_interior_nodes() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[0.9, 0.3]);
        let coarse = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        let fine_controls = IntegratorControls { step: 5e-4, ..Default::default() };
        let fine = integrate_null_geodesic(&m, &init, &dom, &fine_controls).unwrap();
        // Coarse dense output at fine nodes: O(h^4) interpolation error.
        for node in fine.nodes.iter().take(fine.nodes.len() - 1).skip(1).step_by(100) {
            let interp = coarse.dense_state(node.t);
            assert!((&interp - &node.y).amax() < 1e-12);
        }
    }

    #[test]
    fn rk45_matches_rk4_on_bump() {
        let m = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&m, &[1.0, 0.0], &[0.9, 0.3]);
        let rk4 = integrate_null_geodesic(&m, &init, &dom, &IntegratorControls::default()).unwrap();
        let rk45 = integrate_null_geodesic(
            &m,
            &init,
            &dom,
            &IntegratorControls { method: Method::Rk45Adaptive, ..Default::default() },
        )
        .unwrap();
        assert!((rk4.t_exit - rk45.t_exit).abs() < 1e-8);
        assert!((&rk4.exit_point - &rk45.exit_point).norm() < 1e-8);
    }
}
