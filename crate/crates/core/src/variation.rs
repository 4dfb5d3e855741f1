//! First- and second-variation systems along the metric homotopy.
//!
//! For q = q1 + tau (q2 - q1) the variation state (dx/dtau, dxi/dtau) obeys a
//! linear ODE driven by the metric difference, with zero initial data because
//! the launch point and covector do not depend on tau. The systems here are
//! the exact tau-derivatives of the reduced flow for the linear homotopy: the
//! cross terms from differentiating the interpolated coefficients through the
//! moving ray are kept in closed form rather than bounded away, so finite
//! differences of re-traced rays converge to these solutions at second order.
//!
//! The variation equations are integrated jointly with the base ray on the
//! baseline's own time grid, which avoids interpolation error between the
//! carrier and the variation.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::integrator::{dense_eval, simpson_dense, Node, PhaseState, Trajectory};
use crate::length::LengthRecord;
use crate::metric::MetricSpec;

/// Variation of the phase state with respect to the homotopy parameter.
#[derive(Clone, Debug)]
pub struct VariationState {
    pub dx_dtau: DVector<f64>,
    pub dxi_dtau: DVector<f64>,
    pub dx0_dtau: f64,
    pub d2x_dtau2: Option<DVector<f64>>,
    pub d2xi_dtau2: Option<DVector<f64>>,
    pub d2x0_dtau2: Option<f64>,
}

/// Time derivative of a first-variation state.
#[derive(Clone, Debug)]
pub struct VariationRates {
    pub v_dot: DVector<f64>,
    pub w_dot: DVector<f64>,
    pub x0_var_dot: f64,
}

/// Dense record of the variation along one baseline ray.
///
/// Nodes pack the jointly integrated state, so the carrier ray and the
/// variation share one grid by construction: [x, xi, x0, v, w, dx0/dtau] and,
/// when the second variation is integrated, [.., v2, w2, d2x0/dtau2].
#[derive(Clone, Debug)]
pub struct VariationTrajectory {
    pub tau: f64,
    pub nodes: Vec<Node>,
    dim: usize,
    has_second: bool,
}

/// First variation of the length functional over the full homotopy span.
#[derive(Clone, Debug)]
pub struct LengthVariation {
    /// dL/dtau at tau = 0.
    pub dl_dtau: f64,
    /// Linear part of L(q2) - L(q1); equals dl_dtau for the unit tau span.
    pub l_value: f64,
    /// Exact difference L(q2, T) - L(q1, T) on the frozen interval.
    pub delta_l: f64,
    /// Taylor remainder: delta_l - l_value, exactly by construction.
    pub g2: f64,
}

impl VariationTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_second(&self) -> bool {
        self.has_second
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i].t
    }

    pub fn state(&self, i: usize) -> VariationState {
        let n = self.dim;
        let y = &self.nodes[i].y;
        let second = self.has_second;
        VariationState {
            dx_dtau: y.rows(2 * n + 1, n).into_owned(),
            dxi_dtau: y.rows(3 * n + 1, n).into_owned(),
            dx0_dtau: y[4 * n + 1],
            d2x_dtau2: second.then(|| y.rows(4 * n + 2, n).into_owned()),
            d2xi_dtau2: second.then(|| y.rows(5 * n + 2, n).into_owned()),
            d2x0_dtau2: second.then(|| y[6 * n + 2]),
        }
    }

    pub fn dense_joint(&self, t: f64) -> DVector<f64> {
        dense_eval(&self.nodes, t)
    }
}

/// Metric data at a point needed by the variation right-hand sides:
/// tau-interpolated coefficients plus the endpoint differences.
struct Coefficients {
    a: DMatrix<f64>,            // q'_tau
    s: Vec<DMatrix<f64>>,       // d q'_tau / dx_k
    t2: Vec<Vec<DMatrix<f64>>>, // d2 q'_tau / dx_k dx_l
    delta: DMatrix<f64>,        // q2' - q1'
    u: Vec<DMatrix<f64>>,       // d(q2' - q1') / dx_k
    w2d: Vec<Vec<DMatrix<f64>>>, // d2(q2' - q1') / dx_k dx_l (second variation only)
    q00_tau: f64,
    q0_tau: DVector<f64>,
    dq00: f64,
    dq0: DVector<f64>,
}

struct VariationSystem<'a> {
    q1: &'a MetricSpec,
    q2: &'a MetricSpec,
    tau: f64,
    xi0: f64,
    second: bool,
}

impl VariationSystem<'_> {
    fn coefficients(&self, x: &DVector<f64>) -> Result<Coefficients> {
        let n = self.q1.dim();
        let tau = self.tau;
        let b1 = self.q1.eval_blocks(x);
        let b2 = self.q2.eval_blocks(x);
        let d1 = self.q1.eval_derivatives(x, 2)?;
        let d2 = self.q2.eval_derivatives(x, 2)?;
        let d1_d2 = d1.d2.as_ref().expect("order 2 requested");
        let d2_d2 = d2.d2.as_ref().expect("order 2 requested");
        // Interpolation written as (1 - tau) q1 + tau q2, matching the
        // homotopy blend arithmetic exactly.
        let comb_m = |m1: &DMatrix<f64>, m2: &DMatrix<f64>| m1 * (1.0 - tau) + m2 * tau;
        let a = comb_m(&b1.qprime, &b2.qprime);
        let s: Vec<_> = (0..n).map(|k| comb_m(&d1.d1[k], &d2.d1[k])).collect();
        let t2: Vec<Vec<_>> = (0..n)
            .map(|k| (0..n).map(|l| comb_m(&d1_d2[k][l], &d2_d2[k][l])).collect())
            .collect();
        let delta = &b2.qprime - &b1.qprime;
        let u: Vec<_> = (0..n).map(|k| &d2.d1[k] - &d1.d1[k]).collect();
        let w2d: Vec<Vec<_>> = if self.second {
            (0..n)
                .map(|k| (0..n).map(|l| &d2_d2[k][l] - &d1_d2[k][l]).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Coefficients {
            a,
            s,
            t2,
            delta,
            u,
            w2d,
            q00_tau: (1.0 - tau) * b1.q00 + tau * b2.q00,
            q0_tau: &b1.q0 * (1.0 - tau) + &b2.q0 * tau,
            dq00: b2.q00 - b1.q00,
            dq0: &b2.q0 - &b1.q0,
        })
    }

    fn state_len(&self, n: usize) -> usize {
        if self.second {
            6 * n + 3
        } else {
            4 * n + 2
        }
    }

    fn rhs(&self, y: &DVector<f64>, dy: &mut DVector<f64>) -> Result<()> {
        let n = self.q1.dim();
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n).into_owned();
        let v = y.rows(2 * n + 1, n).into_owned();
        let w = y.rows(3 * n + 1, n).into_owned();
        let c = self.coefficients(&x)?;

        // Carrier ray.
        let dx = &c.a * &xi;
        for k in 0..n {
            dy[k] = dx[k];
            dy[n + k] = -0.5 * quad_form(&c.s[k], &xi, &xi);
        }
        dy[2 * n] = c.q00_tau * self.xi0 + c.q0_tau.dot(&xi);

        // First variation: dv = Delta' xi + (S . v) xi + A w,
        // dw_k = -1/2 xi.(dDelta'/dx_k) xi - 1/2 xi.(T_k . v) xi - xi.S_k w.
        let sv = contract(&c.s, &v); // sum_k v_k S_k
        let dv = &c.delta * &xi + &sv * &xi + &c.a * &w;
        for k in 0..n {
            dy[2 * n + 1 + k] = dv[k];
            let tkv = contract(&c.t2[k], &v);
            dy[3 * n + 1 + k] = -0.5 * quad_form(&c.u[k], &xi, &xi)
                - 0.5 * quad_form(&tkv, &xi, &xi)
                - quad_form(&c.s[k], &xi, &w);
        }
        // Time-coordinate variation integrand; the time rows of every family
        // are constant in x, so only the coefficient difference and the
        // covector variation contribute.
        dy[4 * n + 1] = c.dq00 * self.xi0 + c.dq0.dot(&xi) + c.q0_tau.dot(&w);

        if self.second {
            let v2 = y.rows(4 * n + 2, n).into_owned();
            let w2 = y.rows(5 * n + 2, n).into_owned();
            let uv = contract(&c.u, &v);
            let ttvv = contract2(&c.t2, &v, &v);
            let sv2 = contract(&c.s, &v2);
            let d3 = self.q1.qprime_d3_contract(&x, &v, &xi) * (1.0 - self.tau)
                + self.q2.qprime_d3_contract(&x, &v, &xi) * self.tau;
            let dv2 = &uv * &xi * 2.0
                + &c.delta * &w * 2.0
                + &ttvv * &xi
                + &sv * &w * 2.0
                + &sv2 * &xi
                + &c.a * &w2;
            for k in 0..n {
                dy[4 * n + 2 + k] = dv2[k];
                let wkv = contract(&c.w2d[k], &v);
                let tkv = contract(&c.t2[k], &v);
                let tkv2 = contract(&c.t2[k], &v2);
                dy[5 * n + 2 + k] = -quad_form(&wkv, &xi, &xi)
                    - 2.0 * quad_form(&c.u[k], &xi, &w)
                    - 0.5 * d3[k]
                    - 0.5 * quad_form(&tkv2, &xi, &xi)
                    - 2.0 * quad_form(&tkv, &xi, &w)
                    - quad_form(&c.s[k], &w, &w)
                    - quad_form(&c.s[k], &xi, &w2);
            }
            dy[6 * n + 2] = 2.0 * c.dq0.dot(&w) + c.q0_tau.dot(&w2);
        }
        Ok(())
    }
}

fn quad_form(m: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.transpose() * m * b)[(0, 0)]
}

/// sum_k v_k M_k for a family of matrices.
fn contract(mats: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let n = mats[0].nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, m) in mats.iter().enumerate() {
        out += m * v[k];
    }
    out
}

/// sum_kl a_k b_l M_kl.
fn contract2(mats: &[Vec<DMatrix<f64>>], a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = mats[0][0].nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, row) in mats.iter().enumerate() {
        for (l, m) in row.iter().enumerate() {
            out += m * (a[k] * b[l]);
        }
    }
    out
}

/// Right-hand side of the first-variation system at one phase point.
pub fn variational_rhs(
    q1: &MetricSpec,
    q2: &MetricSpec,
    tau: f64,
    state: &PhaseState,
    vstate: &VariationState,
) -> Result<VariationRates> {
    let n = q1.dim();
    let sys = VariationSystem { q1, q2, tau, xi0: state.xi0, second: false };
    let mut y = DVector::zeros(4 * n + 2);
    y.rows_mut(0, n).copy_from(&state.x);
    y.rows_mut(n, n).copy_from(&state.xi);
    y[2 * n] = state.x0;
    y.rows_mut(2 * n + 1, n).copy_from(&vstate.dx_dtau);
    y.rows_mut(3 * n + 1, n).copy_from(&vstate.dxi_dtau);
    y[4 * n + 1] = vstate.dx0_dtau;
    let mut dy = DVector::zeros(4 * n + 2);
    sys.rhs(&y, &mut dy)?;
    Ok(VariationRates {
        v_dot: dy.rows(2 * n + 1, n).into_owned(),
        w_dot: dy.rows(3 * n + 1, n).into_owned(),
        x0_var_dot: dy[4 * n + 1],
    })
}

/// RK4 over the exact time grid of the baseline, carrying the joint state.
fn integrate_joint(sys: &VariationSystem, baseline: &Trajectory) -> Result<VariationTrajectory> {
    let n = sys.q1.dim();
    let len = sys.state_len(n);
    let mut y = DVector::zeros(len);
    y.rows_mut(0, n).copy_from(&baseline.init.y);
    y.rows_mut(n, n).copy_from(&baseline.init.eta);
    y[2 * n] = baseline.init.x0_start;
    // Variation components start at zero: the initial data are tau-independent.
    let mut dy = DVector::zeros(len);
    sys.rhs(&y, &mut dy)?;
    let mut nodes = Vec::with_capacity(baseline.nodes.len());
    nodes.push(Node { t: baseline.nodes[0].t, y: y.clone(), dy: dy.clone() });
    for pair in baseline.nodes.windows(2) {
        let h = pair[1].t - pair[0].t;
        if h == 0.0 {
            nodes.push(Node { t: pair[1].t, y: y.clone(), dy: dy.clone() });
            continue;
        }
        let mut k2 = DVector::zeros(len);
        let mut k3 = DVector::zeros(len);
        let mut k4 = DVector::zeros(len);
        sys.rhs(&(&y + &dy * (h / 2.0)), &mut k2)?;
        sys.rhs(&(&y + &k2 * (h / 2.0)), &mut k3)?;
        sys.rhs(&(&y + &k3 * h), &mut k4)?;
        y = &y + (&dy + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        sys.rhs(&y, &mut dy)?;
        nodes.push(Node { t: pair[1].t, y: y.clone(), dy: dy.clone() });
    }
    Ok(VariationTrajectory { tau: sys.tau, nodes, dim: n, has_second: sys.second })
}

/// Integrates the first-variation system along the baseline grid, with the
/// time-coordinate variation accumulated by simultaneous quadrature.
pub fn integrate_first_variation(
    q1: &MetricSpec,
    q2: &MetricSpec,
    tau: f64,
    baseline: &Trajectory,
) -> Result<VariationTrajectory> {
    let sys = VariationSystem { q1, q2, tau, xi0: baseline.init.eta0, second: false };
    integrate_joint(&sys, baseline)
}

/// Integrates first and second variations together (the second-variation
/// inhomogeneity needs the first variation at the same instant).
pub fn integrate_second_variation(
    q1: &MetricSpec,
    q2: &MetricSpec,
    tau: f64,
    baseline: &Trajectory,
) -> Result<VariationTrajectory> {
    let sys = VariationSystem { q1, q2, tau, xi0: baseline.init.eta0, second: true };
    integrate_joint(&sys, baseline)
}

/// First variation of the length functional at tau = 0 and the exact Taylor
/// split of the length difference over the frozen interval.
///
/// The integrand pairs the carrier velocity with the tau-derivative of the
/// velocity (the first-variation right-hand side) and the time-row term with
/// its own variation integrand, normalized by the arc-length speed. The
/// remainder G2 is the exact difference minus the linear part, never a
/// Taylor-point evaluation.
pub fn length_first_variation(
    q1: &MetricSpec,
    q2: &MetricSpec,
    baseline: &Trajectory,
    first: &VariationTrajectory,
) -> Result<LengthVariation> {
    assert_eq!(first.tau, 0.0, "length variation is taken at tau = 0");
    let n = q1.dim();
    let xi0 = baseline.init.eta0;
    let sys = VariationSystem { q1, q2, tau: 0.0, xi0, second: false };

    let integrand = |y: &DVector<f64>| -> f64 {
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n).into_owned();
        let v = y.rows(2 * n + 1, n).into_owned();
        let w = y.rows(3 * n + 1, n).into_owned();
        let c = sys.coefficients(&x).expect("order-2 derivatives available");
        let dx = &c.a * &xi;
        let dx0 = c.q00_tau * xi0 + c.q0_tau.dot(&xi);
        let speed = (dx0 * dx0 + dx.norm_squared()).sqrt();
        let sv = contract(&c.s, &v);
        let dv = &c.delta * &xi + &sv * &xi + &c.a * &w;
        let dx0_var = c.dq00 * xi0 + c.dq0.dot(&xi) + c.q0_tau.dot(&w);
        (dx.dot(&dv) + dx0 * dx0_var) / speed
    };
    let (l_value, _estimate) = simpson_dense(&first.nodes, |_, y| integrand(y));

    // Exact length difference on the same grid: re-trace the tau = 1 ray over
    // the baseline's time grid and measure both endpoints with the same
    // quadrature construction, so q2 = q1 gives a bitwise-zero difference.
    let q_end = crate::metric::homotopy(q1, q2, 1.0)?;
    let end_sys = VariationSystem { q1, q2, tau: 1.0, xi0, second: false };
    let end_path = integrate_joint(&end_sys, baseline)?;
    let l2 = length_of_joint(&q_end, xi0, &end_path);
    let l1 = length_of_joint(q1, xi0, first);
    let delta_l = l2.length - l1.length;

    Ok(LengthVariation {
        dl_dtau: l_value,
        l_value,
        delta_l,
        g2: delta_l - l_value,
    })
}

/// Length of the carrier ray embedded in a joint variation path.
fn length_of_joint(metric: &MetricSpec, xi0: f64, path: &VariationTrajectory) -> LengthRecord {
    let n = path.dim();
    let (length, estimate) = simpson_dense(&path.nodes, |_, y| {
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n).into_owned();
        let blocks = metric.eval_blocks(&x);
        let dx = &blocks.qprime * &xi;
        let dx0 = blocks.q00 * xi0 + blocks.q0.dot(&xi);
        (dx0 * dx0 + dx.norm_squared()).sqrt()
    });
    LengthRecord {
        length,
        t_used: path.nodes.last().map_or(0.0, |node| node.t),
        frozen_t: true,
        quadrature_error_estimate: estimate,
        left_domain: false,
    }
}
