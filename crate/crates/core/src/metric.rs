//! Static inverse Lorentzian metrics in block form.
//!
//! A metric is represented by its inverse-tensor blocks: the time-time entry
//! `q00(x)`, the time-space row `q0j(x)` and the spatial block `q'(x)`. All
//! built-in families are independent of the time coordinate and carry
//! constant time rows; the spatial block has closed-form first, second and
//! third derivatives so the variational systems can be driven analytically.
//!
//! The blocks of a convex combination of two metrics are exactly the convex
//! combination of the blocks, which is what [`homotopy`] returns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};

/// Quadratic polynomial `c0 + lin . x + x . quad x` with symmetric `quad`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyQuadratic {
    pub c0: f64,
    #[serde(default)]
    pub lin: Vec<f64>,
    #[serde(default)]
    pub quad: Vec<Vec<f64>>,
}

impl PolyQuadratic {
    pub fn constant(c0: f64) -> Self {
        Self { c0, lin: Vec::new(), quad: Vec::new() }
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.c0;
        for (k, l) in self.lin.iter().enumerate() {
            v += l * x[k];
        }
        for (k, row) in self.quad.iter().enumerate() {
            for (l, a) in row.iter().enumerate() {
                v += a * x[k] * x[l];
            }
        }
        v
    }

    fn grad(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for (k, l) in self.lin.iter().enumerate() {
            out[k] += l;
        }
        for (k, row) in self.quad.iter().enumerate() {
            for (l, a) in row.iter().enumerate() {
                out[k] += a * x[l];
                out[l] += a * x[k];
            }
        }
    }

    /// Constant Hessian entry (k, l).
    fn hess(&self, k: usize, l: usize) -> f64 {
        let a = self.quad.get(k).and_then(|r| r.get(l)).copied().unwrap_or(0.0);
        let b = self.quad.get(l).and_then(|r| r.get(k)).copied().unwrap_or(0.0);
        a + b
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !self.lin.is_empty() && self.lin.len() != dim {
            return Err(Error::InvalidMetric(format!(
                "polynomial linear part has {} entries, expected {dim}",
                self.lin.len()
            )));
        }
        if !self.quad.is_empty() {
            if self.quad.len() != dim || self.quad.iter().any(|r| r.len() != dim) {
                return Err(Error::InvalidMetric("polynomial quadratic part must be dim x dim".into()));
            }
            for k in 0..dim {
                for l in 0..dim {
                    if (self.quad[k][l] - self.quad[l][k]).abs() > 1e-12 {
                        return Err(Error::InvalidMetric("polynomial quadratic part must be symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One weighted term of an affine metric combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendTerm {
    pub weight: f64,
    pub metric: MetricSpec,
}

/// A static inverse metric given by one of the built-in analytic families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    /// q00 = 1, q0 = 0, q' = -I.
    Minkowski { dim: usize },
    /// q' = -(1 + w)^2 I with the Gaussian bump w = a exp(-|x-c|^2 / (2 sigma^2)).
    ConformalBump {
        a: f64,
        center: Vec<f64>,
        sigma: f64,
    },
    /// Diagonal spatial block with quadratic-polynomial entries (signed values).
    DiagonalPoly { diag: Vec<PolyQuadratic> },
    /// Constant time row over an arbitrary spatial block. Also serves as the
    /// strict reduced form: q00 = 1, q0 = 0 pins the time row of any family.
    GeneralBlock {
        q00: f64,
        q0: Vec<f64>,
        spatial: Box<MetricSpec>,
    },
    /// Affine combination of families; block evaluation is exactly linear in
    /// the weights.
    Blend { terms: Vec<BlendTerm> },
}

/// Inverse-tensor blocks at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseMetricBlocks {
    pub q00: f64,
    pub q0: DVector<f64>,
    pub qprime: DMatrix<f64>,
}

/// Spatial derivatives of the blocks at a point.
///
/// `d1[k]` is the matrix dq'/dx_k; `d2[k][l]` (present for order 2) is
/// d2q'/dx_k dx_l, symmetric in (k, l). The time-row gradients are zero for
/// every built-in family but participate in the general formulas.
#[derive(Clone, Debug)]
pub struct MetricDerivatives {
    pub d1: Vec<DMatrix<f64>>,
    pub d2: Option<Vec<Vec<DMatrix<f64>>>>,
    pub d1_q00: DVector<f64>,
    pub d1_q0: DMatrix<f64>,
}

impl MetricSpec {
    pub fn minkowski(dim: usize) -> Self {
        MetricSpec::Minkowski { dim }
    }

    /// Constant diagonal spatial block `scale * I` under a unit time row.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        MetricSpec::DiagonalPoly {
            diag: (0..dim).map(|_| PolyQuadratic::constant(scale)).collect(),
        }
    }

    /// Pins the time row to q00 = 1, q0 = 0 while keeping the spatial block.
    pub fn strict_goursat(self) -> Self {
        let dim = self.dim();
        MetricSpec::GeneralBlock {
            q00: 1.0,
            q0: vec![0.0; dim],
            spatial: Box::new(self),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            MetricSpec::Minkowski { .. } => "minkowski",
            MetricSpec::ConformalBump { .. } => "conformal_bump",
            MetricSpec::DiagonalPoly { .. } => "diagonal_poly",
            MetricSpec::GeneralBlock { .. } => "general_block",
            MetricSpec::Blend { .. } => "blend",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Minkowski { dim } => *dim,
            MetricSpec::ConformalBump { center, .. } => center.len(),
            MetricSpec::DiagonalPoly { diag } => diag.len(),
            MetricSpec::GeneralBlock { q0, .. } => q0.len(),
            MetricSpec::Blend { terms } => terms.first().map_or(0, |t| t.metric.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MetricSpec::Minkowski { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidMetric("dim must be >= 1".into()));
                }
            }
            MetricSpec::ConformalBump { a, center, sigma } => {
                if center.is_empty() {
                    return Err(Error::InvalidMetric("bump center must be non-empty".into()));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidMetric(format!("bump sigma must be positive, got {sigma}")));
                }
                if !a.is_finite() || *a <= -1.0 {
                    return Err(Error::InvalidMetric(format!("bump amplitude must be finite and > -1, got {a}")));
                }
            }
            MetricSpec::DiagonalPoly { diag } => {
                if diag.is_empty() {
                    return Err(Error::InvalidMetric("diagonal_poly needs at least one entry".into()));
                }
                for p in diag {
                    p.validate(diag.len())?;
                }
            }
            MetricSpec::GeneralBlock { q00, q0, spatial } => {
                if !(*q00 > 0.0) {
                    return Err(Error::InvalidMetric(format!("q00 must be positive, got {q00}")));
                }
                if q0.len() != spatial.dim() {
                    return Err(Error::DimensionMismatch {
                        left: q0.len(),
                        right: spatial.dim(),
                        context: "time row vs spatial block",
                    });
                }
                spatial.validate()?;
            }
            MetricSpec::Blend { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidMetric("blend needs at least one term".into()));
                }
                let dim = terms[0].metric.dim();
                for t in terms {
                    if t.metric.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            left: t.metric.dim(),
                            right: dim,
                            context: "blend term dims",
                        });
                    }
                    t.metric.validate()?;
                }
            }
        }
        Ok(())
    }

    /// The constant time row (q00, q0j). Staticity plus constant time rows
    /// hold for every family, so this is position independent.
    pub fn time_row(&self) -> (f64, DVector<f64>) {
        let n = self.dim();
        match self {
            MetricSpec::Minkowski { .. }
            | MetricSpec::ConformalBump { .. }
            | MetricSpec::DiagonalPoly { .. } => (1.0, DVector::zeros(n)),
            MetricSpec::GeneralBlock { q00, q0, .. } => {
                (*q00, DVector::from_row_slice(q0))
            }
            MetricSpec::Blend { terms } => {
                let mut q00 = 0.0;
                let mut q0 = DVector::zeros(n);
                for t in terms {
                    let (a, b) = t.metric.time_row();
                    q00 += t.weight * a;
                    q0 += b * t.weight;
                }
                (q00, q0)
            }
        }
    }

    /// True when the time row is exactly (1, 0), the strict reduced form in
    /// which dx0/dt = xi0.
    pub fn is_strict_goursat(&self) -> bool {
        let (q00, q0) = self.time_row();
        q00 == 1.0 && q0.iter().all(|v| *v == 0.0)
    }

    fn qprime_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n = self.dim();
        match self {
            MetricSpec::Minkowski { .. } => {
                out.fill(0.0);
                for k in 0..n {
                    out[(k, k)] = -1.0;
                }
            }
            MetricSpec::ConformalBump { .. } => {
                let f = self.bump_profile(x).0;
                out.fill(0.0);
                for k in 0..n {
                    out[(k, k)] = f;
                }
            }
            MetricSpec::DiagonalPoly { diag } => {
                out.fill(0.0);
                for (k, p) in diag.iter().enumerate() {
                    out[(k, k)] = p.eval(x);
                }
            }
            MetricSpec::GeneralBlock { spatial, .. } => spatial.qprime_into(x, out),
            MetricSpec::Blend { terms } => {
                out.fill(0.0);
                let mut tmp = DMatrix::zeros(n, n);
                for t in terms {
                    t.metric.qprime_into(x, &mut tmp);
                    tmp *= t.weight;
                    *out += &tmp;
                }
            }
        }
    }

    /// Spatial block q'(x).
    pub fn qprime(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        self.qprime_into(x, &mut out);
        out
    }

    /// Exact analytic block evaluation at x.
    pub fn eval_blocks(&self, x: &DVector<f64>) -> InverseMetricBlocks {
        let (q00, q0) = self.time_row();
        InverseMetricBlocks {
            q00,
            q0,
            qprime: self.qprime(x),
        }
    }

    /// Profile (f, f_k, f_kl, third-derivative pieces) of the conformal bump,
    /// where q' = f(x) I.
    fn bump_profile(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        if let MetricSpec::ConformalBump { a, center, sigma } = self {
            let n = center.len();
            let s2 = sigma * sigma;
            let mut r2 = 0.0;
            let mut g = DVector::zeros(n);
            for k in 0..n {
                let d = x[k] - center[k];
                r2 += d * d;
                g[k] = -d / s2;
            }
            let w = a * (-r2 / (2.0 * s2)).exp();
            let f = -(1.0 + w) * (1.0 + w);
            // f_k = -2 (1+w) w_k, w_k = w g_k
            let mut grad = DVector::zeros(n);
            for k in 0..n {
                grad[k] = -2.0 * (1.0 + w) * w * g[k];
            }
            // f_kl = -2 (w_k w_l + (1+w) w_kl), w_kl = w (g_k g_l - delta_kl / s2)
            let mut hess = DMatrix::zeros(n, n);
            for k in 0..n {
                for l in 0..n {
                    let wk = w * g[k];
                    let wl = w * g[l];
                    let wkl = w * (g[k] * g[l] - if k == l { 1.0 / s2 } else { 0.0 });
                    hess[(k, l)] = -2.0 * (wk * wl + (1.0 + w) * wkl);
                }
            }
            (f, grad, hess)
        } else {
            unreachable!("bump_profile called on a non-bump family")
        }
    }

    fn d1_into(&self, x: &DVector<f64>, out: &mut [DMatrix<f64>]) {
        let n = self.dim();
        match self {
            MetricSpec::Minkowski { .. } => {
                for m in out.iter_mut() {
                    m.fill(0.0);
                }
            }
            MetricSpec::ConformalBump { .. } => {
                let (_, grad, _) = self.bump_profile(x);
                for (k, m) in out.iter_mut().enumerate() {
                    m.fill(0.0);
                    for i in 0..n {
                        m[(i, i)] = grad[k];
                    }
                }
            }
            MetricSpec::DiagonalPoly { diag } => {
                let mut g = DVector::zeros(n);
                for m in out.iter_mut() {
                    m.fill(0.0);
                }
                for (i, p) in diag.iter().enumerate() {
                    p.grad(x, &mut g);
                    for k in 0..n {
                        out[k][(i, i)] = g[k];
                    }
                }
            }
            MetricSpec::GeneralBlock { spatial, .. } => spatial.d1_into(x, out),
            MetricSpec::Blend { terms } => {
                for m in out.iter_mut() {
                    m.fill(0.0);
                }
                let mut tmp: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::zeros(n, n)).collect();
                for t in terms {
                    t.metric.d1_into(x, &mut tmp);
                    for k in 0..n {
                        tmp[k] *= t.weight;
                        out[k] += &tmp[k];
                    }
                }
            }
        }
    }

    fn d2_into(&self, x: &DVector<f64>, out: &mut Vec<Vec<DMatrix<f64>>>) -> Result<()> {
        let n = self.dim();
        match self {
            MetricSpec::Minkowski { .. } => {
                for row in out.iter_mut() {
                    for m in row.iter_mut() {
                        m.fill(0.0);
                    }
                }
            }
            MetricSpec::ConformalBump { .. } => {
                let (_, _, hess) = self.bump_profile(x);
                for (k, row) in out.iter_mut().enumerate() {
                    for (l, m) in row.iter_mut().enumerate() {
                        m.fill(0.0);
                        for i in 0..n {
                            m[(i, i)] = hess[(k, l)];
                        }
                    }
                }
            }
            MetricSpec::DiagonalPoly { diag } => {
                for (k, row) in out.iter_mut().enumerate() {
                    for (l, m) in row.iter_mut().enumerate() {
                        m.fill(0.0);
                        for (i, p) in diag.iter().enumerate() {
                            m[(i, i)] = p.hess(k, l);
                        }
                    }
                }
            }
            MetricSpec::GeneralBlock { spatial, .. } => spatial.d2_into(x, out)?,
            MetricSpec::Blend { terms } => {
                for row in out.iter_mut() {
                    for m in row.iter_mut() {
                        m.fill(0.0);
                    }
                }
                let mut tmp: Vec<Vec<DMatrix<f64>>> = (0..n)
                    .map(|_| (0..n).map(|_| DMatrix::zeros(n, n)).collect())
                    .collect();
                for t in terms {
                    t.metric.d2_into(x, &mut tmp)?;
                    for k in 0..n {
                        for l in 0..n {
                            tmp[k][l] *= t.weight;
                            out[k][l] += &tmp[k][l];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Analytic spatial derivatives of the blocks; `order` = 1 omits the
    /// second-derivative arrays.
    pub fn eval_derivatives(&self, x: &DVector<f64>, order: u8) -> Result<MetricDerivatives> {
        assert!(order == 1 || order == 2, "order must be 1 or 2");
        let n = self.dim();
        let mut d1: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::zeros(n, n)).collect();
        self.d1_into(x, &mut d1);
        let d2 = if order == 2 {
            let mut d2: Vec<Vec<DMatrix<f64>>> = (0..n)
                .map(|_| (0..n).map(|_| DMatrix::zeros(n, n)).collect())
                .collect();
            self.d2_into(x, &mut d2)?;
            Some(d2)
        } else {
            None
        };
        Ok(MetricDerivatives {
            d1,
            d2,
            d1_q00: DVector::zeros(n),
            d1_q0: DMatrix::zeros(n, n),
        })
    }

    /// Third-derivative contraction sum_{i,j,l,m} d3 q'_{ij} / dx_k dx_l dx_m
    /// v_l v_m xi_i xi_j, indexed by k. Drives the exact second-variation
    /// system; zero for constant and quadratic-polynomial families.
    pub fn qprime_d3_contract(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        xi: &DVector<f64>,
    ) -> DVector<f64> {
        let n = self.dim();
        match self {
            MetricSpec::Minkowski { .. } | MetricSpec::DiagonalPoly { .. } => DVector::zeros(n),
            MetricSpec::ConformalBump { a, center, sigma } => {
                let s2 = sigma * sigma;
                let mut r2 = 0.0;
                let mut g = DVector::zeros(n);
                for k in 0..n {
                    let d = x[k] - center[k];
                    r2 += d * d;
                    g[k] = -d / s2;
                }
                let w = a * (-r2 / (2.0 * s2)).exp();
                let gv = g.dot(v);
                let vnorm2 = v.dot(v);
                let xinorm2 = xi.dot(xi);
                // w_klm contracted with v_l v_m:
                //   w [ g_k (g.v)^2 - (2 g.v v_k + g_k |v|^2) / s2 ]
                // f_klm = -2 ( w_kl w_m + w_km w_l + w_lm w_k + (1+w) w_klm )
                let mut out = DVector::zeros(n);
                for k in 0..n {
                    let wk = w * g[k];
                    // sum_lm w_kl v_l w_m v_m = w^2 (g_k g.v - v_k / s2) g.v, three symmetric pairings
                    let wkl_v = w * (g[k] * gv - v[k] / s2);
                    let wm_v = w * gv;
                    let wlm_vv = w * (gv * gv - vnorm2 / s2);
                    let wklm_vv = w * (g[k] * gv * gv - (2.0 * gv * v[k] + g[k] * vnorm2) / s2);
                    let f3 = -2.0 * (2.0 * wkl_v * wm_v + wlm_vv * wk + (1.0 + w) * wklm_vv);
                    out[k] = xinorm2 * f3;
                }
                out
            }
            MetricSpec::GeneralBlock { spatial, .. } => spatial.qprime_d3_contract(x, v, xi),
            MetricSpec::Blend { terms } => {
                let mut out = DVector::zeros(n);
                for t in terms {
                    out += t.metric.qprime_d3_contract(x, v, xi) * t.weight;
                }
                out
            }
        }
    }
}

/// Hamiltonian value 1/2 q00 xi0^2 + (q0 . xi) xi0 + 1/2 xi . q' xi.
pub fn hamiltonian(blocks: &InverseMetricBlocks, xi0: f64, xi: &DVector<f64>) -> f64 {
    0.5 * blocks.q00 * xi0 * xi0
        + blocks.q0.dot(xi) * xi0
        + 0.5 * (xi.transpose() * &blocks.qprime * xi)[(0, 0)]
}

/// Convex-combination metric q1 + tau (q2 - q1), represented so that block
/// evaluation is exactly (1 - tau) q1 + tau q2 componentwise.
pub fn homotopy(q1: &MetricSpec, q2: &MetricSpec, tau: f64) -> Result<MetricSpec> {
    if q1.dim() != q2.dim() {
        return Err(Error::DimensionMismatch {
            left: q1.dim(),
            right: q2.dim(),
            context: "homotopy endpoints",
        });
    }
    Ok(MetricSpec::Blend {
        terms: vec![
            BlendTerm { weight: 1.0 - tau, metric: q1.clone() },
            BlendTerm { weight: tau, metric: q2.clone() },
        ],
    })
}

/// Outcome of a signature sweep; `failure` carries the first offending point.
#[derive(Clone, Debug)]
pub struct SignatureReport {
    pub checked: usize,
    pub failure: Option<(Vec<f64>, String)>,
}

impl SignatureReport {
    pub fn pass(&self) -> bool {
        self.failure.is_none()
    }

    pub fn ok(&self) -> Result<()> {
        match &self.failure {
            None => Ok(()),
            Some((p, detail)) => Err(Error::SignatureViolation {
                point: p.clone(),
                detail: detail.clone(),
            }),
        }
    }
}

/// Reconstructs the full (n+1) x (n+1) inverse tensor at low-discrepancy
/// interior points and checks its eigenvalue signature (one positive, n
/// negative) together with negative-definiteness of q'.
pub fn validate_signature(
    metric: &MetricSpec,
    domain: &DomainSpec,
    samples: usize,
    seed: u64,
) -> SignatureReport {
    assert!(samples >= 1, "samples must be >= 1");
    let n = metric.dim();
    let pts = domain.sample_interior(samples, seed);
    for x in &pts {
        let blocks = metric.eval_blocks(x);
        let mut full = DMatrix::zeros(n + 1, n + 1);
        full[(0, 0)] = blocks.q00;
        for j in 0..n {
            full[(0, j + 1)] = blocks.q0[j];
            full[(j + 1, 0)] = blocks.q0[j];
            for i in 0..n {
                full[(i + 1, j + 1)] = blocks.qprime[(i, j)];
            }
        }
        let eigs = full.symmetric_eigenvalues();
        let pos = eigs.iter().filter(|e| **e > 0.0).count();
        let neg = eigs.iter().filter(|e| **e < 0.0).count();
        if pos != 1 || neg != n {
            return SignatureReport {
                checked: samples,
                failure: Some((
                    x.iter().copied().collect(),
                    format!("eigenvalue signature ({pos}+, {neg}-), expected (1+, {n}-)"),
                )),
            };
        }
        let qp_eigs = blocks.qprime.symmetric_eigenvalues();
        if qp_eigs.iter().any(|e| *e >= 0.0) {
            return SignatureReport {
                checked: samples,
                failure: Some((
                    x.iter().copied().collect(),
                    "spatial block is not negative-definite".into(),
                )),
            };
        }
    }
    SignatureReport { checked: samples, failure: None }
}
