//! Scenario configuration: one JSON document describing the metrics, domain,
//! fan, integrator and report settings for a batch run.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use nullray_core::{
    validate_signature, DirectionRule, DomainSpec, FanSpec, IntegratorControls, MetricSpec,
    RigidityControls, ScanControls,
};

/// `"auto"` or an explicit number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOrValue {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl AutoOrValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            AutoOrValue::Auto(_) => None,
            AutoOrValue::Value(v) => Some(*v),
        }
    }
}

impl Default for AutoOrValue {
    fn default() -> Self {
        AutoOrValue::Auto(AutoTag::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanConfig {
    /// Boundary anchor for two-dimensional ball domains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_angle: Option<f64>,
    /// Spherical angles for higher-dimensional ball domains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_angles: Option<Vec<f64>>,
    /// Explicit anchor point (required for box domains).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    pub epsilon: f64,
    pub count: usize,
    pub direction_rule: DirectionRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
}

impl FanConfig {
    pub fn resolve(&self, domain: &DomainSpec) -> Result<FanSpec, String> {
        let y0 = if let Some(p) = &self.y0 {
            DVector::from_row_slice(p)
        } else if let Some(angle) = self.y0_angle {
            domain
                .boundary_point_from_angles(&[angle])
                .map_err(|e| format!("fan.y0_angle: {e}"))?
        } else if let Some(angles) = &self.y0_angles {
            domain
                .boundary_point_from_angles(angles)
                .map_err(|e| format!("fan.y0_angles: {e}"))?
        } else {
            return Err("fan: one of y0_angle, y0_angles or y0 is required".into());
        };
        let eta = self.eta.as_ref().map(|e| DVector::from_row_slice(e));
        if self.direction_rule == DirectionRule::FixedEta && eta.is_none() {
            return Err("fan.eta is required for direction_rule \"fixed_eta\"".into());
        }
        Ok(FanSpec {
            y0,
            epsilon: self.epsilon,
            count: self.count,
            direction_rule: self.direction_rule,
            eta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RigidityConfig {
    #[serde(rename = "N")]
    pub n_weight: AutoOrValue,
    pub tau_grid: Option<usize>,
    pub reg: Option<f64>,
}

impl RigidityConfig {
    pub fn resolve(&self) -> RigidityControls {
        let defaults = RigidityControls::default();
        RigidityControls {
            n_weight: self.n_weight.value(),
            tau_samples: self.tau_grid.unwrap_or(defaults.tau_samples),
            reg: self.reg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverConfig {
    pub basis: Vec<MetricSpec>,
    /// Either direct observations or synthetic-truth coefficients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_delta_l: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_coefficients: Option<Vec<f64>>,
    /// Step multiplier for synthetic data generation (guards the inverse
    /// crime by decoupling the data discretization from the solver's).
    #[serde(default = "default_data_step_factor")]
    pub data_step_factor: f64,
}

fn default_data_step_factor() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Lattice resolution per axis over the domain bounding box.
    pub grid: Vec<usize>,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_fan_epsilon")]
    pub fan_epsilon: f64,
    #[serde(default = "default_fan_count")]
    pub fan_count: usize,
    /// Interior margin: lattice points with boundary value above -margin are
    /// dropped.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_directions() -> usize {
    8
}
fn default_fan_epsilon() -> f64 {
    0.05
}
fn default_fan_count() -> usize {
    5
}
fn default_margin() -> f64 {
    1e-9
}

impl ScanConfig {
    pub fn resolve(&self) -> ScanControls {
        ScanControls {
            directions: self.directions,
            fan_epsilon: self.fan_epsilon,
            fan_count: self.fan_count,
        }
    }

    /// Interior lattice points, axis-major order.
    pub fn grid_points(&self, domain: &DomainSpec) -> Result<Vec<DVector<f64>>, String> {
        let n = domain.dim();
        if self.grid.len() != n {
            return Err(format!(
                "scan.grid needs {n} per-axis counts, got {}",
                self.grid.len()
            ));
        }
        if self.grid.iter().any(|c| *c < 1) {
            return Err("scan.grid counts must be >= 1".into());
        }
        let (lo, hi) = domain.bounding_box();
        let mut pts = Vec::new();
        let total: usize = self.grid.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut x = DVector::zeros(n);
            for k in 0..n {
                let c = self.grid[k];
                let i = rem % c;
                rem /= c;
                x[k] = if c == 1 {
                    0.5 * (lo[k] + hi[k])
                } else {
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (c as f64 - 1.0)
                };
            }
            if domain.boundary_value(&x) < -self.margin {
                pts.push(x);
            }
        }
        Ok(pts)
    }
}

/// The scenario document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub metric_q1: MetricSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric_q2: Option<MetricSpec>,
    pub domain: DomainSpec,
    pub fan: FanConfig,
    #[serde(default)]
    pub integrator: IntegratorControls,
    #[serde(default)]
    pub rigidity: RigidityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recover: Option<RecoverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// Signature sampling count used during scenario validation.
pub const SIGNATURE_SAMPLES: usize = 256;

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config error: {e}"))
    }

    /// Structural and numerical validation; messages name the offending key.
    pub fn validate(&self, seed: u64) -> Result<(), String> {
        self.domain.validate().map_err(|e| format!("domain: {e}"))?;
        self.metric_q1.validate().map_err(|e| format!("metric_q1: {e}"))?;
        if self.metric_q1.dim() != self.domain.dim() {
            return Err(format!(
                "metric_q1: dimension {} does not match domain dimension {}",
                self.metric_q1.dim(),
                self.domain.dim()
            ));
        }
        let sig = validate_signature(&self.metric_q1, &self.domain, SIGNATURE_SAMPLES, seed);
        sig.ok().map_err(|e| format!("metric_q1: {e}"))?;
        if let Some(q2) = &self.metric_q2 {
            q2.validate().map_err(|e| format!("metric_q2: {e}"))?;
            if q2.dim() != self.domain.dim() {
                return Err(format!(
                    "metric_q2: dimension {} does not match domain dimension {}",
                    q2.dim(),
                    self.domain.dim()
                ));
            }
            validate_signature(q2, &self.domain, SIGNATURE_SAMPLES, seed)
                .ok()
                .map_err(|e| format!("metric_q2: {e}"))?;
        }
        self.integrator
            .validate()
            .map_err(|e| format!("integrator: {e}"))?;
        if self.fan.count == 0 {
            return Err("fan.count must be >= 1".into());
        }
        if let Some(rc) = &self.recover {
            if rc.basis.is_empty() {
                return Err("recover.basis must be nonempty".into());
            }
            for (i, b) in rc.basis.iter().enumerate() {
                b.validate().map_err(|e| format!("recover.basis[{i}]: {e}"))?;
                if b.dim() != self.domain.dim() {
                    return Err(format!("recover.basis[{i}]: dimension mismatch"));
                }
            }
            if rc.observed_delta_l.is_none() && rc.truth_coefficients.is_none() {
                return Err(
                    "recover: one of observed_delta_l or truth_coefficients is required".into(),
                );
            }
            if let Some(c) = &rc.truth_coefficients {
                if c.len() != rc.basis.len() {
                    return Err("recover.truth_coefficients: length must match basis".into());
                }
            }
            if !(rc.data_step_factor > 0.0) {
                return Err("recover.data_step_factor must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "metric_q1": {"family": "minkowski", "params": {"dim": 2}},
        "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "fan": {"y0_angle": 0.0, "epsilon": 0.1, "count": 3, "direction_rule": "inward_chords"},
        "seed": 7
    }"#;

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let s = Scenario::parse(MINIMAL).unwrap();
        s.validate(7).unwrap();
        assert_eq!(s.seed, 7);
        let fan = s.fan.resolve(&s.domain).unwrap();
        assert_eq!(fan.count, 3);
    }

    #[test]
    fn missing_domain_names_the_key() {
        let bad = r#"{
            "metric_q1": {"family": "minkowski", "params": {"dim": 2}},
            "fan": {"y0_angle": 0.0, "epsilon": 0.1, "count": 3, "direction_rule": "inward_chords"}
        }"#;
        let err = Scenario::parse(bad).unwrap_err();
        assert!(err.contains("domain"), "{err}");
    }

    #[test]
    fn config_round_trips() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back = Scenario::parse(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn auto_or_value_forms() {
        let auto: AutoOrValue = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(auto.value(), None);
        let v: AutoOrValue = serde_json::from_str("5.0").unwrap();
        assert_eq!(v.value(), Some(5.0));
    }

    #[test]
    fn wrong_signature_rejected() {
        let bad = r#"{
            "metric_q1": {"family": "diagonal_poly", "params": {"diag": [{"c0": 1.0}, {"c0": -1.0}]}},
            "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
            "fan": {"y0_angle": 0.0, "epsilon": 0.1, "count": 3, "direction_rule": "inward_chords"}
        }"#;
        let s = Scenario::parse(bad).unwrap();
        let err = s.validate(1).unwrap_err();
        assert!(err.contains("metric_q1"), "{err}");
    }

    #[test]
    fn scan_grid_interior_filter() {
        let cfg = ScanConfig {
            grid: vec![5, 5],
            directions: 4,
            fan_epsilon: 0.05,
            fan_count: 5,
            margin: 1e-9,
        };
        let pts = cfg.grid_points(&DomainSpec::unit_ball(2)).unwrap();
        assert_eq!(pts.len(), 9);
        for p in &pts {
            assert!(p.norm() < 1.0);
        }
    }
}
