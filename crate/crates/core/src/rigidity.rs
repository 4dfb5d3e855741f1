//! Weighted trajectory norms, empirical estimate constants, the stability
//! verdict, linearized recovery and the whole-domain scan.
//!
//! The central quantity is the weighted norm of a metric perturbation along a
//! ray family: exponentially weighted integrals of the spatial-block
//! difference and its gradient over re-traced rays, with the sup taken over a
//! uniform grid of homotopy parameters, plus the unweighted time-row term.
//! Boundary length differences are then compared against this norm: a
//! uniformly positive ratio |dL| / |q2 - q1| over a fan is the numerical
//! rigidity certificate, and the linear functional underneath it drives a
//! least-squares recovery of perturbation coefficients from length data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::integrator::{
    integrate_fixed_interval, integrate_null_geodesic, simpson_dense_many, IntegratorControls,
    Trajectory,
};
use crate::length::{length_at_tau, timespace_length};
use crate::metric::{homotopy, MetricSpec};
use crate::shooting::{make_fan, null_covector, FanSpec, InitialData};
use crate::variation::{
    integrate_first_variation, integrate_second_variation, length_first_variation,
};

/// Norm tuning knobs shared by the report-producing operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityControls {
    /// Exponential weight; `None` selects it from the flow linearization.
    pub n_weight: Option<f64>,
    /// Uniform homotopy-parameter samples for the sup in the norm.
    pub tau_samples: usize,
    /// Ridge term for recovery; `None` uses a scale-relative floor.
    pub reg: Option<f64>,
}

impl Default for RigidityControls {
    fn default() -> Self {
        RigidityControls { n_weight: None, tau_samples: 5, reg: None }
    }
}

/// Weighted-norm pieces for one ray; the total is their sum, each maximized
/// over the homotopy-parameter grid.
#[derive(Clone, Debug)]
pub struct NormBreakdown {
    pub term_qprime: f64,
    pub term_dqprime: f64,
    pub term_timerow: f64,
    pub total: f64,
    pub n_used: f64,
    pub tau_grid: Vec<f64>,
}

/// Stability data for one ray of a fan.
#[derive(Clone, Debug)]
pub struct RayRecord {
    pub ray: usize,
    pub t_exit: f64,
    pub l1: f64,
    pub l2: f64,
    pub delta_l: f64,
    pub l_value: f64,
    pub g2: f64,
    pub norm: NormBreakdown,
    /// |delta_l| / norm.total; zero for degenerate (invisible) rays.
    pub ratio: f64,
    pub degenerate: bool,
    pub left_domain: bool,
    pub grazing_exit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Norm small enough that the length difference controls it.
    RigidRegime,
    /// Certificate holds numerically but the smallness premise fails.
    OutsideSmallness,
    /// The two metric specifications are structurally identical.
    IdenticalAlongFan,
    /// Perturbation invisible from this fan: zero norm on every ray.
    NotRigidTestable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::RigidRegime => "rigid-regime",
            Verdict::OutsideSmallness => "outside-smallness",
            Verdict::IdenticalAlongFan => "identical along fan",
            Verdict::NotRigidTestable => "not rigid-testable from \u{0393}_{y\u{2080}}",
        };
        f.write_str(s)
    }
}

/// Fan-level aggregates of the stability data.
#[derive(Clone, Debug)]
pub struct FanAggregates {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Largest |G2| / norm^2 over the fan.
    pub measured_c_n: f64,
    /// Largest |l| / norm over the fan; a lower bound for the functional norm.
    pub l0_estimate: f64,
    /// 2 C_N max-norm / l0: below one means the smallness premise holds.
    pub smallness: f64,
    /// l0 / (2 C_N) minus the largest norm: slack left under the premise.
    pub stability_margin: f64,
    pub n_used: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub struct RigidityReport {
    pub rays: Vec<RayRecord>,
    pub aggregates: FanAggregates,
    pub warnings: Vec<String>,
}

/// Selects the exponential weight from the first-variation coefficient
/// matrix along the baseline: the returned N dominates the largest eigenvalue
/// of the symmetric part with a 10% margin, and is at least one.
pub fn select_weight_n(q1: &MetricSpec, baseline: &Trajectory) -> Result<f64> {
    let n = q1.dim();
    let mut mu_max = f64::NEG_INFINITY;
    for node in &baseline.nodes {
        let x = node.y.rows(0, n).into_owned();
        let xi = node.y.rows(n, n).into_owned();
        let q = variation_matrix(q1, &x, &xi)?;
        let sym = (&q + q.transpose()) * 0.5;
        let mu = sym.symmetric_eigenvalues().max();
        mu_max = mu_max.max(mu);
    }
    Ok(1.0f64.max(1.1 * mu_max))
}

/// The 2n x 2n coefficient matrix of the first-variation system at one
/// phase point (built from the base metric only).
fn variation_matrix(q1: &MetricSpec, x: &DVector<f64>, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = q1.dim();
    let blocks = q1.eval_blocks(x);
    let derivs = q1.eval_derivatives(x, 2)?;
    let d2 = derivs.d2.as_ref().expect("order 2 requested");
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let col = &derivs.d1[k] * xi;
        for i in 0..n {
            q[(i, k)] = col[i]; // dv row, v column
            q[(i, n + k)] = blocks.qprime[(i, k)]; // dv row, w column
        }
        for l in 0..n {
            q[(n + k, l)] = -0.5 * (xi.transpose() * &d2[k][l] * xi)[(0, 0)];
        }
        let row = (xi.transpose() * &derivs.d1[k]).transpose();
        for j in 0..n {
            q[(n + k, n + j)] = -row[j];
        }
    }
    Ok(q)
}

/// Blocks of the perturbation q2 - q1 at a point.
fn delta_blocks(
    q1: &MetricSpec,
    q2: &MetricSpec,
    x: &DVector<f64>,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>, f64, DVector<f64>) {
    let b1 = q1.eval_blocks(x);
    let b2 = q2.eval_blocks(x);
    let d1 = q1.eval_derivatives(x, 1).expect("first derivatives");
    let d2 = q2.eval_derivatives(x, 1).expect("first derivatives");
    let grads = (0..q1.dim()).map(|k| &d2.d1[k] - &d1.d1[k]).collect();
    (&b2.qprime - &b1.qprime, grads, b2.q00 - b1.q00, &b2.q0 - &b1.q0)
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn stacked_norm(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter()
        .map(|m| m.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn tau_grid(samples: usize) -> Vec<f64> {
    if samples <= 1 {
        return vec![0.0];
    }
    (0..samples)
        .map(|i| i as f64 / (samples as f64 - 1.0))
        .collect()
}

/// Weighted norm of the perturbation along the ray family of one initial
/// datum: for each homotopy parameter on the grid the ray is re-traced over
/// the frozen interval [0, T] and three integrals are taken; each term is the
/// sup over the grid. Matrix sizes use the Frobenius norm, the stacked
/// gradient the Euclidean norm, and the time-row term is unweighted.
pub fn perturbation_norm(
    q1: &MetricSpec,
    q2: &MetricSpec,
    init: &InitialData,
    t_frozen: f64,
    n_weight: f64,
    tau_samples: usize,
    controls: &IntegratorControls,
) -> Result<NormBreakdown> {
    assert!(tau_samples >= 1, "tau_samples must be >= 1");
    let grid = tau_grid(tau_samples);
    let n = q1.dim();
    let mut term_qprime: f64 = 0.0;
    let mut term_dqprime: f64 = 0.0;
    let mut term_timerow: f64 = 0.0;
    for &tau in &grid {
        let metric = homotopy(q1, q2, tau)?;
        let traj = integrate_fixed_interval(&metric, init, t_frozen, None, controls)?;
        let ([iq, idq, itime], _) = simpson_dense_many::<3>(&traj.nodes, |t, y| {
            let x = y.rows(0, n).into_owned();
            let (dq, grads, dq00, dq0) = delta_blocks(q1, q2, &x);
            let e2 = (-2.0 * n_weight * t).exp();
            [
                e2 * frobenius(&dq),
                e2 * stacked_norm(&grads),
                dq00.abs() + dq0.iter().map(|v| v.abs()).sum::<f64>(),
            ]
        });
        term_qprime = term_qprime.max(iq);
        term_dqprime = term_dqprime.max(idq);
        term_timerow = term_timerow.max(itime);
    }
    Ok(NormBreakdown {
        term_qprime,
        term_dqprime,
        term_timerow,
        total: term_qprime + term_dqprime + term_timerow,
        n_used: n_weight,
        tau_grid: grid,
    })
}

/// Empirical left/right ratios for the variation estimates of one ray,
/// maximized over the homotopy grid. A zero perturbation reports zeros.
#[derive(Clone, Debug)]
pub struct EstimateRatios {
    /// Weighted first-variation peak over the weighted perturbation integrals.
    pub first_variation: f64,
    /// Weighted second-variation peak over its quadratic majorant.
    pub second_variation: f64,
    /// Time-coordinate variation peak over time-row norm plus variation peak.
    pub time_variation: f64,
    /// |G2| over the squared norm.
    pub remainder: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub per_ray: Vec<EstimateRatios>,
    /// Componentwise maxima over the fan.
    pub aggregate: EstimateRatios,
    pub measured_c_n: f64,
    pub n_used: f64,
}

fn ratio_or_zero(lhs: f64, rhs: f64) -> f64 {
    if rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Measures the estimate constants along every baseline ray.
pub fn estimate_report(
    q1: &MetricSpec,
    q2: &MetricSpec,
    baselines: &[Trajectory],
    n_weight: f64,
    tau_samples: usize,
    controls: &IntegratorControls,
) -> Result<EstimateReport> {
    let n = q1.dim();
    let grid = tau_grid(tau_samples);
    let per_ray: Vec<EstimateRatios> = baselines
        .par_iter()
        .map(|baseline| -> Result<EstimateRatios> {
            let t_frozen = baseline.t_exit;
            let mut r28: f64 = 0.0;
            let mut r214: f64 = 0.0;
            let mut r220: f64 = 0.0;
            // Time-row norm term, shared by the time-variation estimate.
            let norm = perturbation_norm(q1, q2, &baseline.init, t_frozen, n_weight, tau_samples, controls)?;
            for &tau in &grid {
                let path = integrate_second_variation(q1, q2, tau, baseline)?;
                let mut lhs28: f64 = 0.0;
                let mut lhs214: f64 = 0.0;
                let mut lhs220: f64 = 0.0;
                let mut peak_vw: f64 = 0.0;
                for (i, node) in path.nodes.iter().enumerate() {
                    let t = node.t;
                    let s = path.state(i);
                    let vw = s.dx_dtau.norm() + s.dxi_dtau.norm();
                    lhs28 = lhs28.max((-n_weight * t).exp() * vw);
                    peak_vw = peak_vw.max(vw);
                    let v2w2 = s.d2x_dtau2.as_ref().unwrap().norm()
                        + s.d2xi_dtau2.as_ref().unwrap().norm();
                    lhs214 = lhs214.max((-2.0 * n_weight * t).exp() * v2w2);
                    lhs220 = lhs220.max(s.dx0_dtau.abs());
                }
                // Single-weight perturbation integrals along this tau path.
                let ([iq, idq, i_vw2], _) = simpson_dense_many::<3>(&path.nodes, |t, y| {
                    let x = y.rows(0, n).into_owned();
                    let (dq, grads, _, _) = delta_blocks(q1, q2, &x);
                    let e1 = (-n_weight * t).exp();
                    let vsq = y.rows(2 * n + 1, n).norm_squared();
                    let wsq = y.rows(3 * n + 1, n).norm_squared();
                    [
                        e1 * frobenius(&dq),
                        e1 * stacked_norm(&grads),
                        (-2.0 * n_weight * t).exp() * (vsq + wsq),
                    ]
                });
                r28 = r28.max(ratio_or_zero(lhs28, iq + idq));
                r214 = r214.max(ratio_or_zero(lhs214, i_vw2 + iq * iq + idq * idq));
                r220 = r220.max(ratio_or_zero(lhs220, norm.term_timerow + peak_vw));
            }
            // Remainder constant from the exact Taylor split at tau = 0.
            let first = integrate_first_variation(q1, q2, 0.0, baseline)?;
            let lv = length_first_variation(q1, q2, baseline, &first)?;
            if norm.total == 0.0 && lv.g2.abs() > 1e-12 {
                return Err(Error::DegenerateNorm { g2: lv.g2 });
            }
            let remainder = ratio_or_zero(lv.g2.abs(), norm.total * norm.total);
            Ok(EstimateRatios {
                first_variation: r28,
                second_variation: r214,
                time_variation: r220,
                remainder,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fold = |f: fn(&EstimateRatios) -> f64| per_ray.iter().map(f).fold(0.0f64, f64::max);
    let aggregate = EstimateRatios {
        first_variation: fold(|r| r.first_variation),
        second_variation: fold(|r| r.second_variation),
        time_variation: fold(|r| r.time_variation),
        remainder: fold(|r| r.remainder),
    };
    Ok(EstimateReport {
        measured_c_n: aggregate.remainder,
        aggregate,
        per_ray,
        n_used: n_weight,
    })
}

/// Runs the full stability pipeline over one fan: freeze exit times in the
/// base metric, compare lengths, split them into linear part and remainder,
/// weigh the perturbation along each ray and aggregate into a verdict.
pub fn stability_check(
    q1: &MetricSpec,
    q2: &MetricSpec,
    domain: &DomainSpec,
    fan: &FanSpec,
    controls: &IntegratorControls,
    rig: &RigidityControls,
) -> Result<RigidityReport> {
    let fan_data = make_fan(domain, q1, fan)?;
    let mut warnings: Vec<String> = fan_data
        .warnings
        .iter()
        .map(|w| format!("ray {}: {}", w.ray, w.reason))
        .collect();

    let baselines: Vec<Trajectory> = fan_data
        .rays
        .par_iter()
        .map(|init| integrate_null_geodesic(q1, init, domain, controls))
        .collect::<Result<Vec<_>>>()?;

    let n_used = match rig.n_weight {
        Some(n) => n,
        None => baselines
            .iter()
            .map(|b| select_weight_n(q1, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(1.0f64, f64::max),
    };

    let rays: Vec<RayRecord> = baselines
        .par_iter()
        .enumerate()
        .map(|(i, baseline)| -> Result<RayRecord> {
            let init = &baseline.init;
            let t_frozen = baseline.t_exit;
            let l1 = timespace_length(q1, baseline);
            let l2 = length_at_tau(q1, q2, 1.0, init, t_frozen, domain, controls)?;
            let first = integrate_first_variation(q1, q2, 0.0, baseline)?;
            let lv = length_first_variation(q1, q2, baseline, &first)?;
            let norm =
                perturbation_norm(q1, q2, init, t_frozen, n_used, rig.tau_samples, controls)?;
            let degenerate = norm.total == 0.0;
            if degenerate && lv.g2.abs() > 1e-12 {
                return Err(Error::DegenerateNorm { g2: lv.g2 });
            }
            let ratio = ratio_or_zero(lv.delta_l.abs(), norm.total);
            Ok(RayRecord {
                ray: i,
                t_exit: t_frozen,
                l1: l1.length,
                l2: l2.length,
                delta_l: lv.delta_l,
                l_value: lv.l_value,
                g2: lv.g2,
                norm,
                ratio,
                degenerate,
                left_domain: l2.left_domain,
                grazing_exit: baseline.exit_grazing,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for r in &rays {
        if r.left_domain {
            warnings.push(format!(
                "ray {}: interpolated trajectory left the domain before the frozen time",
                r.ray
            ));
        }
        if r.grazing_exit {
            warnings.push(format!("ray {}: grazing exit", r.ray));
        }
    }

    let live: Vec<&RayRecord> = rays.iter().filter(|r| !r.degenerate).collect();
    let aggregates = if live.is_empty() {
        let verdict = if q1 == q2 {
            Verdict::IdenticalAlongFan
        } else {
            Verdict::NotRigidTestable
        };
        FanAggregates {
            min_ratio: 0.0,
            max_ratio: 0.0,
            measured_c_n: 0.0,
            l0_estimate: 0.0,
            smallness: 0.0,
            stability_margin: 0.0,
            n_used,
            verdict,
        }
    } else {
        let min_ratio = live.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let max_ratio = live.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
        let measured_c_n = live
            .iter()
            .map(|r| r.g2.abs() / (r.norm.total * r.norm.total))
            .fold(0.0f64, f64::max);
        let l0_estimate = live
            .iter()
            .map(|r| r.l_value.abs() / r.norm.total)
            .fold(0.0f64, f64::max);
        let max_norm = live.iter().map(|r| r.norm.total).fold(0.0f64, f64::max);
        // Smallness premise |q2 - q1| < l0 / (2 C_N), expressed both as a
        // ratio and as the slack under the bound.
        let smallness = if l0_estimate > 0.0 {
            2.0 * measured_c_n * max_norm / l0_estimate
        } else {
            f64::MAX
        };
        let stability_margin = if measured_c_n > 0.0 {
            l0_estimate / (2.0 * measured_c_n) - max_norm
        } else if l0_estimate > 0.0 {
            f64::MAX
        } else {
            0.0
        };
        let verdict = if smallness < 1.0 {
            Verdict::RigidRegime
        } else {
            Verdict::OutsideSmallness
        };
        FanAggregates {
            min_ratio,
            max_ratio,
            measured_c_n,
            l0_estimate,
            smallness,
            stability_margin,
            n_used,
            verdict,
        }
    };

    Ok(RigidityReport { rays, aggregates, warnings })
}

/// Basis of metric perturbations: each element is a full metric whose
/// difference from the base metric is one basis direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBasis {
    pub elements: Vec<MetricSpec>,
}

impl PerturbationBasis {
    /// The metric q1 + sum_k c_k (b_k - q1) as an affine blend.
    pub fn compose(&self, q1: &MetricSpec, coefficients: &[f64]) -> Result<MetricSpec> {
        if coefficients.len() != self.elements.len() {
            return Err(Error::DimensionMismatch {
                left: coefficients.len(),
                right: self.elements.len(),
                context: "coefficients vs basis",
            });
        }
        let mut terms = vec![crate::metric::BlendTerm {
            weight: 1.0 - coefficients.iter().sum::<f64>(),
            metric: q1.clone(),
        }];
        for (c, b) in coefficients.iter().zip(&self.elements) {
            terms.push(crate::metric::BlendTerm { weight: *c, metric: b.clone() });
        }
        Ok(MetricSpec::Blend { terms })
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub coefficients: Vec<f64>,
    /// ||A c - dL|| / max(||dL||, tiny).
    pub relative_residual: f64,
    pub gram_condition: f64,
    pub rank_deficient: bool,
    pub reg_used: f64,
}

/// Ridge least squares for the perturbation coefficients from observed
/// per-ray length differences: the sensitivity matrix holds the linear
/// length response of each basis direction along each baseline ray.
pub fn linearized_recover(
    q1: &MetricSpec,
    basis: &PerturbationBasis,
    baselines: &[Trajectory],
    observed_delta_l: &[f64],
    reg: Option<f64>,
) -> Result<RecoveryResult> {
    assert!(!basis.elements.is_empty(), "basis must be nonempty");
    assert_eq!(baselines.len(), observed_delta_l.len(), "one observation per ray");
    let rays = baselines.len();
    let k = basis.elements.len();
    let entries: Vec<f64> = (0..rays * k)
        .into_par_iter()
        .map(|idx| -> Result<f64> {
            let (r, j) = (idx / k, idx % k);
            let baseline = &baselines[r];
            let first = integrate_first_variation(q1, &basis.elements[j], 0.0, baseline)?;
            Ok(length_first_variation(q1, &basis.elements[j], baseline, &first)?.l_value)
        })
        .collect::<Result<Vec<_>>>()?;
    let a = DMatrix::from_row_slice(rays, k, &entries);
    let d = DVector::from_row_slice(observed_delta_l);
    let gram = a.transpose() * &a;
    let eigs = gram.clone().symmetric_eigenvalues();
    let (e_min, e_max) = (eigs.min(), eigs.max());
    let gram_condition = if e_min > 0.0 { e_max / e_min } else { f64::MAX };
    let rank_deficient = gram_condition > 1e12;
    let reg_used = reg.unwrap_or_else(|| 1e-10 * gram.trace() / k as f64);
    let mut ridge = gram;
    for i in 0..k {
        ridge[(i, i)] += reg_used;
    }
    let rhs = a.transpose() * &d;
    let c = ridge
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidMetric("singular ridge system".into()))?;
    let residual = (&a * &c - &d).norm() / d.norm().max(1e-300);
    Ok(RecoveryResult {
        coefficients: c.iter().copied().collect(),
        relative_residual: residual,
        gram_condition,
        rank_deficient,
        reg_used,
    })
}

/// One chord-and-fan probe of the scan.
#[derive(Clone, Debug)]
pub struct TubeRecord {
    pub grid_index: usize,
    pub direction_index: usize,
    pub seed_point: Vec<f64>,
    pub entry_point: Vec<f64>,
    pub verdict: Option<Verdict>,
    pub min_ratio: f64,
    pub covered: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    /// Fraction of grid points covered by at least one conclusive tube.
    pub coverage: f64,
    pub tubes: Vec<TubeRecord>,
}

/// Spatial probe directions: axis pairs first, then hypercube diagonals,
/// capped at eight.
pub fn scan_directions(dim: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = DVector::zeros(dim);
            d[k] = sign;
            dirs.push(d);
        }
    }
    let scale = 1.0 / (dim as f64).sqrt();
    for mask in 0..(1u32 << dim) {
        let mut d = DVector::zeros(dim);
        for k in 0..dim {
            d[k] = if mask & (1 << k) != 0 { -scale } else { scale };
        }
        dirs.push(d);
    }
    dirs.truncate(8);
    dirs
}

/// Parameters for the whole-domain scan.
#[derive(Clone, Debug)]
pub struct ScanControls {
    pub directions: usize,
    pub fan_epsilon: f64,
    pub fan_count: usize,
}

impl Default for ScanControls {
    fn default() -> Self {
        ScanControls { directions: 8, fan_epsilon: 0.05, fan_count: 5 }
    }
}

/// Probes every interior grid point along a fixed direction set: each probe
/// traces the through-chord (forward plus reversed continuation), re-anchors
/// at its entry point and runs the stability pipeline on a small fan there.
/// A point is covered when at least one of its tubes is conclusive: a
/// positive minimum ratio, or structural identity of the metrics.
pub fn global_scan(
    q1: &MetricSpec,
    q2: &MetricSpec,
    domain: &DomainSpec,
    grid: &[DVector<f64>],
    controls: &IntegratorControls,
    rig: &RigidityControls,
    scan: &ScanControls,
) -> Result<ScanReport> {
    let dirs: Vec<DVector<f64>> = scan_directions(q1.dim())
        .into_iter()
        .take(scan.directions.max(1))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..dirs.len()).map(move |d| (g, d)))
        .collect();
    let tubes: Vec<TubeRecord> = jobs
        .par_iter()
        .map(|&(g, d)| {
            let z0 = &grid[g];
            let dir = &dirs[d];
            let mut rec = TubeRecord {
                grid_index: g,
                direction_index: d,
                seed_point: z0.iter().copied().collect(),
                entry_point: Vec::new(),
                verdict: None,
                min_ratio: 0.0,
                covered: false,
                failure: None,
            };
            match probe_tube(q1, q2, domain, z0, dir, controls, rig, scan) {
                Ok((entry, report)) => {
                    rec.entry_point = entry.iter().copied().collect();
                    rec.min_ratio = report.aggregates.min_ratio;
                    // A zero norm along every ray of the tube certifies that
                    // the difference vanishes on the swept region, so at tube
                    // level "invisible" means locally indistinguishable.
                    let verdict = match report.aggregates.verdict {
                        Verdict::NotRigidTestable => Verdict::IdenticalAlongFan,
                        v => v,
                    };
                    rec.covered = match verdict {
                        Verdict::IdenticalAlongFan => true,
                        _ => report.aggregates.min_ratio > 0.0,
                    };
                    rec.verdict = Some(verdict);
                }
                Err(e) => rec.failure = Some(e.to_string()),
            }
            rec
        })
        .collect();
    let covered_points = (0..grid.len())
        .filter(|g| tubes.iter().any(|t| t.grid_index == *g && t.covered))
        .count();
    let coverage = if grid.is_empty() {
        0.0
    } else {
        covered_points as f64 / grid.len() as f64
    };
    Ok(ScanReport { coverage, tubes })
}

fn probe_tube(
    q1: &MetricSpec,
    q2: &MetricSpec,
    domain: &DomainSpec,
    z0: &DVector<f64>,
    dir: &DVector<f64>,
    controls: &IntegratorControls,
    rig: &RigidityControls,
    scan: &ScanControls,
) -> Result<(DVector<f64>, RigidityReport)> {
    // Aim the spatial velocity along dir: eta = (q')^{-1} dir.
    let blocks = q1.eval_blocks(z0);
    let eta_raw = blocks
        .qprime
        .clone()
        .lu()
        .solve(dir)
        .ok_or_else(|| Error::InvalidMetric("singular spatial block at scan point".into()))?;
    let eta = &eta_raw / eta_raw.norm();

    // Backward continuation: reverse the covector and trace forward; the
    // reduced flow is symmetric under (t, xi) -> (-t, -xi).
    let eta_back = -&eta;
    let eta0_back = null_covector(q1, z0, &eta_back)?;
    let back = integrate_null_geodesic(
        q1,
        &InitialData { y: z0.clone(), eta: eta_back, eta0: eta0_back, x0_start: 0.0 },
        domain,
        controls,
    )?;
    // Entry covector of the through-chord at the re-anchored entry point.
    let n = q1.dim();
    let entry = domain.project_to_boundary(&back.exit_point);
    let xi_back_exit = back.last().y.rows(n, n).into_owned();
    let eta_entry = -&xi_back_exit;
    let fan = FanSpec::fixed(entry.clone(), scan.fan_epsilon, scan.fan_count, eta_entry);
    let report = stability_check(q1, q2, domain, &fan, controls, rig)?;
    Ok((entry, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    fn init_ray(metric: &MetricSpec, y: &[f64], eta: &[f64]) -> InitialData {
        let y = v(y);
        let eta = v(eta);
        let eta0 = null_covector(metric, &y, &eta).unwrap();
        InitialData { y, eta, eta0, x0_start: 0.0 }
    }

    fn diameter_baseline(q1: &MetricSpec) -> Trajectory {
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(q1, &[1.0, 0.0], &[1.0, 0.0]);
        integrate_null_geodesic(q1, &init, &dom, &IntegratorControls::default()).unwrap()
    }

    #[test]
    fn weight_selection_flat_metric() {
        let q1 = MetricSpec::minkowski(2);
        let baseline = diameter_baseline(&q1);
        // sym(Q) for the flat metric has eigenvalues +-1/2: N = max(1, 0.55).
        let n = select_weight_n(&q1, &baseline).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_selection_is_grid_stable() {
        let q1 = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&q1, &[1.0, 0.0], &[0.9, 0.3]);
        let coarse = integrate_null_geodesic(&q1, &init, &dom, &IntegratorControls::default()).unwrap();
        let fine_controls = IntegratorControls { step: 5e-4, ..Default::default() };
        let fine = integrate_null_geodesic(&q1, &init, &dom, &fine_controls).unwrap();
        let n1 = select_weight_n(&q1, &coarse).unwrap();
        let n2 = select_weight_n(&q1, &fine).unwrap();
        assert!(n1 >= 1.0);
        assert!((n1 - n2).abs() < 1e-6, "N drifted with the grid: {n1} vs {n2}");
    }

    #[test]
    fn weight_margin_keeps_shifted_matrix_positive() {
        let q1 = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let dom = DomainSpec::unit_ball(2);
        let init = init_ray(&q1, &[1.0, 0.0], &[0.9, 0.3]);
        let baseline =
            integrate_null_geodesic(&q1, &init, &dom, &IntegratorControls::default()).unwrap();
        let n_weight = select_weight_n(&q1, &baseline).unwrap();
        for node in baseline.nodes.iter().step_by(97) {
            let x = node.y.rows(0, 2).into_owned();
            let xi = node.y.rows(2, 2).into_owned();
            let q = variation_matrix(&q1, &x, &xi).unwrap();
            let shifted = DMatrix::identity(4, 4) * n_weight - (&q + q.transpose()) * 0.5;
            assert!(shifted.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn norm_closed_form_constant_perturbation() {
        let eps = 0.1;
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::scaled_identity(2, -(1.0 - eps));
        let baseline = diameter_baseline(&q1);
        let norm = perturbation_norm(
            &q1,
            &q2,
            &baseline.init,
            2.0,
            5.0,
            5,
            &IntegratorControls::default(),
        )
        .unwrap();
        // |eps I|_F = eps sqrt(2); integral of exp(-10 t) over [0, 2].
        let expect = eps * 2.0f64.sqrt() * (1.0 - (-20.0f64).exp()) / 10.0;
        assert!(
            (norm.term_qprime - expect).abs() / expect < 1e-9,
            "{} vs {expect}",
            norm.term_qprime
        );
        assert_eq!(norm.term_dqprime, 0.0);
        assert_eq!(norm.term_timerow, 0.0);
        assert!((norm.total - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn norm_zero_for_identical_metrics() {
        let q1 = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let baseline = {
            let dom = DomainSpec::unit_ball(2);
            let init = init_ray(&q1, &[1.0, 0.0], &[0.9, 0.3]);
            integrate_null_geodesic(&q1, &init, &dom, &IntegratorControls::default()).unwrap()
        };
        let norm = perturbation_norm(
            &q1,
            &q1.clone(),
            &baseline.init,
            baseline.t_exit,
            5.0,
            3,
            &IntegratorControls::default(),
        )
        .unwrap();
        assert_eq!(norm.total, 0.0);
    }

    #[test]
    fn norm_time_row_term() {
        let delta = 0.05;
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::GeneralBlock {
            q00: 1.0,
            q0: vec![delta, 0.0],
            spatial: Box::new(MetricSpec::minkowski(2)),
        };
        let baseline = diameter_baseline(&q1);
        let norm = perturbation_norm(
            &q1,
            &q2,
            &baseline.init,
            2.0,
            5.0,
            5,
            &IntegratorControls::default(),
        )
        .unwrap();
        // Unweighted integral of the constant |delta| over [0, 2].
        assert!((norm.term_timerow - 2.0 * delta).abs() < 1e-9);
        assert_eq!(norm.term_qprime, 0.0);
    }

    #[test]
    fn norm_is_homogeneous_in_the_perturbation() {
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::ConformalBump { a: 0.08, center: vec![0.1, 0.0], sigma: 0.4 };
        let baseline = diameter_baseline(&q1);
        let controls = IntegratorControls::default();
        // Freeze the trajectory set: tau grid of one point (tau = 0) keeps the
        // re-traced family fixed while the perturbation scales.
        let base = perturbation_norm(&q1, &q2, &baseline.init, 2.0, 5.0, 1, &controls).unwrap();
        for s in [0.5, 0.25] {
            let scaled = homotopy(&q1, &q2, s).unwrap();
            let norm =
                perturbation_norm(&q1, &scaled, &baseline.init, 2.0, 5.0, 1, &controls).unwrap();
            assert!(
                (norm.total - s * base.total).abs() < 1e-12 * base.total.max(1.0),
                "scale {s}: {} vs {}",
                norm.total,
                s * base.total
            );
        }
    }

    #[test]
    fn stability_ratio_constant_family() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let fan = FanSpec::fixed(v(&[1.0, 0.0]), 0.0, 1, v(&[1.0, 0.0]));
        let rig = RigidityControls { n_weight: Some(5.0), ..Default::default() };
        let controls = IntegratorControls::default();
        let mut ratios = Vec::new();
        for eps in [1e-2, 1e-3] {
            let q2 = MetricSpec::scaled_identity(2, -(1.0 - eps));
            let report = stability_check(&q1, &q2, &dom, &fan, &controls, &rig).unwrap();
            assert_eq!(report.rays.len(), 1);
            ratios.push(report.aggregates.min_ratio);
        }
        for r in &ratios {
            assert!((r - 10.0).abs() / 10.0 < 0.01, "ratio {r} not within 1% of 10");
        }
        // Converging toward the closed-form limit 10 / (1 - exp(-20)).
        assert!((ratios[1] - 10.0).abs() < (ratios[0] - 10.0).abs());
    }

    #[test]
    fn stability_identical_metrics_verdict() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::ConformalBump { a: 0.1, center: vec![0.0, 0.0], sigma: 0.5 };
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.1, 4);
        let report = stability_check(
            &q1,
            &q1.clone(),
            &dom,
            &fan,
            &IntegratorControls::default(),
            &RigidityControls::default(),
        )
        .unwrap();
        assert_eq!(report.aggregates.verdict, Verdict::IdenticalAlongFan);
        for r in &report.rays {
            assert_eq!(r.delta_l, 0.0);
            assert_eq!(r.norm.total, 0.0);
            assert!(r.degenerate);
        }
    }

    #[test]
    fn stability_invisible_perturbation_verdict() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        // Bump centered far outside: its values underflow to exact zero on
        // the closed unit disk, so no ray can see it.
        let q2 = MetricSpec::ConformalBump { a: 1e-3, center: vec![3.0, 0.0], sigma: 0.04 };
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.1, 4);
        let report = stability_check(
            &q1,
            &q2,
            &dom,
            &fan,
            &IntegratorControls::default(),
            &RigidityControls::default(),
        )
        .unwrap();
        assert_eq!(report.aggregates.verdict, Verdict::NotRigidTestable);
        assert_eq!(
            report.aggregates.verdict.to_string(),
            "not rigid-testable from \u{0393}_{y\u{2080}}"
        );
        for r in &report.rays {
            assert_eq!(r.delta_l, 0.0);
            assert_eq!(r.norm.total, 0.0);
        }
    }

    #[test]
    fn stability_chain_inequality_per_ray() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::ConformalBump { a: 1e-2, center: vec![0.0, 0.0], sigma: 0.5 };
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.1, 8);
        let report = stability_check(
            &q1,
            &q2,
            &dom,
            &fan,
            &IntegratorControls::default(),
            &RigidityControls::default(),
        )
        .unwrap();
        let c_n = report.aggregates.measured_c_n;
        for r in &report.rays {
            let rhs = r.delta_l.abs() + c_n * r.norm.total * r.norm.total;
            assert!(
                r.l_value.abs() <= rhs + 1e-12,
                "ray {}: |l| = {} exceeds {}",
                r.ray,
                r.l_value.abs(),
                rhs
            );
        }
        assert!(report.aggregates.min_ratio > 0.0);
    }

    #[test]
    fn quadratic_remainder_scaling() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let fan = FanSpec::fixed(v(&[1.0, 0.0]), 0.0, 1, v(&[1.0, 0.0]));
        let controls = IntegratorControls::default();
        let rig = RigidityControls { n_weight: Some(5.0), ..Default::default() };
        let mut logs: Vec<(f64, f64)> = Vec::new();
        let mut cns = Vec::new();
        for eps in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3] {
            let q2 = MetricSpec::scaled_identity(2, -(1.0 - eps));
            let report = stability_check(&q1, &q2, &dom, &fan, &controls, &rig).unwrap();
            let r = &report.rays[0];
            logs.push((r.norm.total.ln(), r.g2.abs().ln()));
            cns.push(report.aggregates.measured_c_n);
        }
        // Least-squares slope of log |G2| against log norm.
        let m = logs.len() as f64;
        let sx: f64 = logs.iter().map(|p| p.0).sum();
        let sy: f64 = logs.iter().map(|p| p.1).sum();
        let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        assert!(slope >= 1.9, "quadratic remainder slope {slope}");
        let (lo, hi) = cns.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), c| {
            (lo.min(*c), hi.max(*c))
        });
        assert!(hi / lo < 1.1, "C_N spread {lo}..{hi} exceeds 10%");
    }

    #[test]
    fn estimate_report_zero_and_finite() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.05, 3);
        let controls = IntegratorControls::default();
        let fan_data = make_fan(&dom, &q1, &fan).unwrap();
        let baselines: Vec<Trajectory> = fan_data
            .rays
            .iter()
            .map(|i| integrate_null_geodesic(&q1, i, &dom, &controls).unwrap())
            .collect();
        // Identical metrics: every ratio is zero by the 0/0 convention.
        let zero = estimate_report(&q1, &q1.clone(), &baselines, 5.0, 3, &controls).unwrap();
        assert_eq!(zero.aggregate.first_variation, 0.0);
        assert_eq!(zero.aggregate.remainder, 0.0);
        // Bump perturbation: all four ratios finite and positive.
        let q2 = MetricSpec::ConformalBump { a: 1e-2, center: vec![0.0, 0.0], sigma: 0.5 };
        let rep = estimate_report(&q1, &q2, &baselines, 5.0, 3, &controls).unwrap();
        for r in &rep.per_ray {
            assert!(r.first_variation.is_finite() && r.first_variation > 0.0);
            assert!(r.second_variation.is_finite());
            assert!(r.time_variation.is_finite());
            assert!(r.remainder.is_finite() && r.remainder > 0.0);
        }
        assert_eq!(rep.measured_c_n, rep.aggregate.remainder);
    }

    #[test]
    fn estimate_constants_stable_under_amplitude_sweep() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let controls = IntegratorControls::default();
        let fan = FanSpec::fixed(v(&[1.0, 0.0]), 0.0, 1, v(&[1.0, 0.0]));
        let fan_data = make_fan(&dom, &q1, &fan).unwrap();
        let baselines: Vec<Trajectory> = fan_data
            .rays
            .iter()
            .map(|i| integrate_null_geodesic(&q1, i, &dom, &controls).unwrap())
            .collect();
        let mut cns = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let q2 = MetricSpec::ConformalBump { a: eps, center: vec![0.0, 0.0], sigma: 0.5 };
            let rep = estimate_report(&q1, &q2, &baselines, 5.0, 3, &controls).unwrap();
            cns.push(rep.measured_c_n);
        }
        let (lo, hi) = cns.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), c| {
            (lo.min(*c), hi.max(*c))
        });
        assert!(hi / lo < 1.15, "C_N sweep spread {cns:?}");
    }

    #[test]
    fn recovery_single_coefficient() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let basis = PerturbationBasis {
            elements: vec![MetricSpec::ConformalBump { a: 1.0, center: vec![0.0, 0.0], sigma: 0.5 }],
        };
        let controls = IntegratorControls::default();
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.2, 8);
        let fan_data = make_fan(&dom, &q1, &fan).unwrap();
        let baselines: Vec<Trajectory> = fan_data
            .rays
            .iter()
            .map(|i| integrate_null_geodesic(&q1, i, &dom, &controls).unwrap())
            .collect();
        // Synthetic truth c = 1e-3, data at half step to avoid the inverse crime.
        let truth = 1e-3;
        let q2 = basis.compose(&q1, &[truth]).unwrap();
        let fine = IntegratorControls { step: controls.step / 2.0, ..controls.clone() };
        let data: Vec<f64> = fan_data
            .rays
            .iter()
            .map(|init| {
                let b = integrate_null_geodesic(&q1, init, &dom, &fine).unwrap();
                let l1 = timespace_length(&q1, &b).length;
                let l2 = length_at_tau(&q1, &q2, 1.0, init, b.t_exit, &dom, &fine)
                    .unwrap()
                    .length;
                l2 - l1
            })
            .collect();
        let result = linearized_recover(&q1, &basis, &baselines, &data, Some(0.0)).unwrap();
        let c = result.coefficients[0];
        assert!(
            (0.99 * truth..=1.01 * truth).contains(&c),
            "recovered {c} for truth {truth}"
        );
        assert!(!result.rank_deficient);
    }

    #[test]
    fn recovery_zero_data_gives_zero_coefficients() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let basis = PerturbationBasis {
            elements: vec![MetricSpec::ConformalBump { a: 1.0, center: vec![0.0, 0.0], sigma: 0.5 }],
        };
        let controls = IntegratorControls::default();
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.1, 4);
        let fan_data = make_fan(&dom, &q1, &fan).unwrap();
        let baselines: Vec<Trajectory> = fan_data
            .rays
            .iter()
            .map(|i| integrate_null_geodesic(&q1, i, &dom, &controls).unwrap())
            .collect();
        let data = vec![0.0; baselines.len()];
        let result = linearized_recover(&q1, &basis, &baselines, &data, Some(1e-8)).unwrap();
        assert_eq!(result.coefficients[0], 0.0);
    }

    #[test]
    fn partially_visible_perturbation_aggregates_over_live_rays() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        // Narrow bump on the diagonal: radial chords near the diagonal pass
        // through it, chords far enough away see exact zeros (underflow).
        // Three radial chords: the center one runs through the bump, the two
        // offset ones stay far enough away that its values underflow to zero.
        let q2 = MetricSpec::ConformalBump { a: 1e-3, center: vec![0.6, 0.6], sigma: 0.01 };
        let anchor_angle = std::f64::consts::FRAC_PI_4;
        let anchor = v(&[anchor_angle.cos(), anchor_angle.sin()]);
        let fan = FanSpec::inward(anchor, 0.6, 3);
        let report = stability_check(
            &q1,
            &q2,
            &dom,
            &fan,
            &IntegratorControls::default(),
            &RigidityControls::default(),
        )
        .unwrap();
        let (seen, blind): (Vec<_>, Vec<_>) = report.rays.iter().partition(|r| !r.degenerate);
        assert!(!seen.is_empty() && !blind.is_empty(), "fan should straddle the support");
        for r in &blind {
            assert_eq!(r.delta_l, 0.0);
            assert_eq!(r.ratio, 0.0);
        }
        for r in &seen {
            assert!(r.ratio > 0.0);
        }
        assert!(report.aggregates.min_ratio > 0.0);
    }

    #[test]
    fn stability_on_box_domain_matches_chord_closed_form() {
        // Face-to-face chord of a box has the same closed forms as the
        // diameter chord of the unit disk.
        let dom = DomainSpec::Box { center: vec![0.0, 0.0], half_widths: vec![1.0, 1.0] };
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::scaled_identity(2, -0.99);
        let fan = FanSpec::fixed(v(&[1.0, 0.0]), 0.0, 1, v(&[1.0, 0.0]));
        let rig = RigidityControls { n_weight: Some(5.0), ..Default::default() };
        let report =
            stability_check(&q1, &q2, &dom, &fan, &IntegratorControls::default(), &rig).unwrap();
        assert!((report.rays[0].t_exit - 2.0).abs() < 1e-9);
        assert!((report.aggregates.min_ratio - 10.0).abs() / 10.0 < 0.01);
    }

    #[test]
    fn three_dimensional_fan_traces_and_certifies() {
        let dom = DomainSpec::unit_ball(3);
        let q1 = MetricSpec::minkowski(3);
        let q2 = MetricSpec::ConformalBump { a: 1e-2, center: vec![0.0, 0.0, 0.0], sigma: 0.5 };
        let anchor = dom.boundary_point_from_angles(&[0.4, 0.9]).unwrap();
        let fan = FanSpec::inward(anchor, 0.1, 4);
        let controls = IntegratorControls::default();
        let report = stability_check(&q1, &q2, &dom, &fan, &controls, &RigidityControls::default())
            .unwrap();
        assert_eq!(report.rays.len(), 4);
        assert!(report.aggregates.min_ratio > 0.0);
        // Conservation carries over to three dimensions.
        let fan_data = make_fan(&dom, &q2, &FanSpec::inward(v(&[0.0, 0.0, 1.0]), 0.1, 2)).unwrap();
        for init in &fan_data.rays {
            let traj = integrate_null_geodesic(&q2, init, &dom, &controls).unwrap();
            assert!(traj.h_drift_max <= 1e-9);
        }
    }

    #[test]
    fn scan_identical_metrics_full_coverage() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let grid: Vec<DVector<f64>> = [-0.5, 0.0, 0.5]
            .iter()
            .flat_map(|&a| [-0.5, 0.0, 0.5].iter().map(move |&b| v(&[a, b])))
            .collect();
        let report = global_scan(
            &q1,
            &q1.clone(),
            &dom,
            &grid,
            &IntegratorControls::default(),
            &RigidityControls::default(),
            &ScanControls { directions: 4, ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.coverage, 1.0);
        for tube in &report.tubes {
            assert_eq!(tube.verdict, Some(Verdict::IdenticalAlongFan));
            assert_eq!(tube.min_ratio, 0.0);
        }
    }

    #[test]
    fn scan_tube_missing_support_is_locally_indistinguishable() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        // Narrow bump inside the domain but more than 38 sigma away from the
        // axis tube through the origin: its values underflow along the tube.
        let q2 = MetricSpec::ConformalBump { a: 1e-3, center: vec![0.6, 0.6], sigma: 0.01 };
        let grid = vec![v(&[0.0, 0.0])];
        let report = global_scan(
            &q1,
            &q2,
            &dom,
            &grid,
            &IntegratorControls::default(),
            &RigidityControls::default(),
            &ScanControls { directions: 2, fan_epsilon: 0.02, fan_count: 3 },
        )
        .unwrap();
        // Both axis tubes miss the support entirely.
        for tube in &report.tubes {
            assert_eq!(tube.verdict, Some(Verdict::IdenticalAlongFan), "{tube:?}");
            assert_eq!(tube.min_ratio, 0.0);
            assert!(tube.covered);
        }
    }

    #[test]
    fn recovery_flags_rank_deficiency() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let element = MetricSpec::ConformalBump { a: 1.0, center: vec![0.0, 0.0], sigma: 0.5 };
        // Two identical basis directions cannot be separated by any fan.
        let basis = PerturbationBasis { elements: vec![element.clone(), element] };
        let controls = IntegratorControls::default();
        let fan = FanSpec::inward(v(&[1.0, 0.0]), 0.1, 4);
        let fan_data = make_fan(&dom, &q1, &fan).unwrap();
        let baselines: Vec<Trajectory> = fan_data
            .rays
            .iter()
            .map(|i| integrate_null_geodesic(&q1, i, &dom, &controls).unwrap())
            .collect();
        let data = vec![1e-4; baselines.len()];
        let result = linearized_recover(&q1, &basis, &baselines, &data, None).unwrap();
        assert!(result.rank_deficient, "condition {}", result.gram_condition);
    }

    #[test]
    fn scan_sees_central_bump() {
        let dom = DomainSpec::unit_ball(2);
        let q1 = MetricSpec::minkowski(2);
        let q2 = MetricSpec::ConformalBump { a: 1e-3, center: vec![0.0, 0.0], sigma: 0.2 };
        let grid = vec![v(&[0.0, 0.0]), v(&[0.5, 0.0])];
        let report = global_scan(
            &q1,
            &q2,
            &dom,
            &grid,
            &IntegratorControls::default(),
            &RigidityControls::default(),
            &ScanControls { directions: 4, ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.coverage, 1.0);
        for tube in &report.tubes {
            assert!(tube.min_ratio > 0.0, "tube {tube:?}");
        }
    }
}
