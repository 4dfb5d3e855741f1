//! Subcommand pipelines: trace rays, tabulate lengths, integrate variations,
//! build rigidity and scan reports, run recovery, and write everything
//! through the deterministic emitter.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{Map, Value};

use nullray_core::{
    estimate_report, global_scan, hamiltonian, integrate_null_geodesic, length_at_tau,
    linearized_recover, make_fan, stability_check, timespace_length, Error as CoreError,
    EstimateRatios, IntegratorControls, MetricSpec, PerturbationBasis, RigidityReport, Trajectory,
};

use crate::config::Scenario;
use crate::emit::{csv_line, fmt_f64, fnv64, num, Emitter};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Trace,
    Length,
    Variation,
    Rigidity,
    Recover,
    Scan,
}

impl Subcommand {
    fn name(self) -> &'static str {
        match self {
            Subcommand::Trace => "trace",
            Subcommand::Length => "length",
            Subcommand::Variation => "variation",
            Subcommand::Rigidity => "rigidity",
            Subcommand::Recover => "recover",
            Subcommand::Scan => "scan",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    /// Exit code 2: the configuration is unusable; the message names the key.
    Config(String),
    /// Exit code 3: the numerics failed on every ray.
    Numerical(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn numerical(e: CoreError) -> RunError {
    RunError::Numerical(e.to_string())
}

pub struct RunOutcome {
    pub warnings: Vec<String>,
}

/// Parses, validates and dispatches one scenario run.
pub fn run_scenario(
    config_text: &str,
    subcommand: Subcommand,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunOutcome, RunError> {
    let scenario = Scenario::parse(config_text).map_err(RunError::Config)?;
    let seed = seed_override.unwrap_or(scenario.seed);
    scenario.validate(seed).map_err(RunError::Config)?;
    let out_dir = match out_override {
        Some(p) => p.to_path_buf(),
        None => scenario
            .output
            .as_ref()
            .map(std::path::PathBuf::from)
            .ok_or_else(|| RunError::Config("output: no directory given (config `output` or --out)".into()))?,
    };
    let mut emitter = Emitter::new(&out_dir).map_err(|e| RunError::Config(e.to_string()))?;
    let config_hash = fnv64(config_text.as_bytes());

    let started = Instant::now();
    let mut warnings = Vec::new();
    let result = dispatch(&scenario, subcommand, &mut emitter, &mut warnings);
    let elapsed = started.elapsed().as_secs_f64();
    result?;
    emitter
        .write_manifest(config_hash, &[(subcommand.name().to_string(), elapsed)])
        .map_err(|e| RunError::Config(e.to_string()))?;
    Ok(RunOutcome { warnings })
}

fn require_q2(scenario: &Scenario) -> Result<&MetricSpec, RunError> {
    scenario
        .metric_q2
        .as_ref()
        .ok_or_else(|| RunError::Config("metric_q2: required for this subcommand".into()))
}

fn dispatch(
    scenario: &Scenario,
    subcommand: Subcommand,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    match subcommand {
        Subcommand::Trace => trace(scenario, emitter, warnings),
        Subcommand::Length => length(scenario, emitter, warnings),
        Subcommand::Variation => variation(scenario, emitter, warnings),
        Subcommand::Rigidity => rigidity(scenario, emitter, warnings),
        Subcommand::Recover => recover(scenario, emitter, warnings),
        Subcommand::Scan => scan(scenario, emitter, warnings),
    }
}

/// Fan construction plus per-ray tracing; individual failures become
/// warnings, a fully failed fan is a numerical error.
fn traced_fan(
    scenario: &Scenario,
    warnings: &mut Vec<String>,
) -> Result<Vec<(usize, Trajectory)>, RunError> {
    let fan_spec = scenario.fan.resolve(&scenario.domain).map_err(RunError::Config)?;
    let fan = make_fan(&scenario.domain, &scenario.metric_q1, &fan_spec).map_err(numerical)?;
    for w in &fan.warnings {
        warnings.push(format!("fan ray {}: {}", w.ray, w.reason));
    }
    let traced: Vec<(usize, Result<Trajectory, CoreError>)> = fan
        .rays
        .par_iter()
        .enumerate()
        .map(|(i, init)| {
            (
                i,
                integrate_null_geodesic(&scenario.metric_q1, init, &scenario.domain, &scenario.integrator),
            )
        })
        .collect();
    let mut out = Vec::new();
    for (i, r) in traced {
        match r {
            Ok(t) => {
                if t.exit_grazing {
                    warnings.push(format!("ray {i}: grazing exit"));
                }
                out.push((i, t));
            }
            Err(e) => warnings.push(format!("ray {i}: {e}")),
        }
    }
    if out.is_empty() {
        return Err(RunError::Numerical("no ray of the fan could be traced".into()));
    }
    Ok(out)
}

fn trace(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let rays = traced_fan(scenario, warnings)?;
    let q1 = &scenario.metric_q1;
    let n = q1.dim();
    for (i, traj) in &rays {
        let mut csv = String::new();
        let mut header = vec!["t".to_string(), "x0".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.push("xi0".to_string());
        header.extend((1..=n).map(|k| format!("xi{k}")));
        header.push("H".to_string());
        csv.push_str(&csv_line(&header));
        for idx in 0..traj.nodes.len() {
            let s = traj.state_at_node(idx);
            let h = hamiltonian(&q1.eval_blocks(&s.x), s.xi0, &s.xi);
            let mut cells = vec![fmt_f64(s.t), fmt_f64(s.x0)];
            cells.extend(s.x.iter().map(|v| fmt_f64(*v)));
            cells.push(fmt_f64(s.xi0));
            cells.extend(s.xi.iter().map(|v| fmt_f64(*v)));
            cells.push(fmt_f64(h));
            csv.push_str(&csv_line(&cells));
        }
        emitter
            .write(&format!("trace_ray_{i:03}.csv"), &csv)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let mut sidecar = Map::new();
        sidecar.insert("T_exit".into(), num(traj.t_exit));
        sidecar.insert(
            "exit_point".into(),
            Value::Array(traj.exit_point.iter().map(|v| num(*v)).collect()),
        );
        sidecar.insert("grazing".into(), Value::Bool(traj.exit_grazing));
        sidecar.insert("h_drift_max".into(), num(traj.h_drift_max));
        emitter
            .write_json(&format!("trace_ray_{i:03}.json"), &Value::Object(sidecar))
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    Ok(())
}

fn tau_grid(samples: usize) -> Vec<f64> {
    if samples <= 1 {
        vec![0.0]
    } else {
        (0..samples).map(|i| i as f64 / (samples as f64 - 1.0)).collect()
    }
}

fn length(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let rays = traced_fan(scenario, warnings)?;
    let q1 = &scenario.metric_q1;
    let rig = scenario.rigidity.resolve();
    let mut csv = String::new();
    csv.push_str(&csv_line(&[
        "ray_index".into(),
        "tau".into(),
        "T_used".into(),
        "L".into(),
        "frozen_T".into(),
        "error_estimate".into(),
    ]));
    for (i, traj) in &rays {
        let rec = timespace_length(q1, traj);
        csv.push_str(&csv_line(&[
            i.to_string(),
            fmt_f64(0.0),
            fmt_f64(rec.t_used),
            fmt_f64(rec.length),
            "false".into(),
            fmt_f64(rec.quadrature_error_estimate),
        ]));
        if let Some(q2) = &scenario.metric_q2 {
            for &tau in &tau_grid(rig.tau_samples) {
                let frozen = length_at_tau(
                    q1,
                    q2,
                    tau,
                    &traj.init,
                    traj.t_exit,
                    &scenario.domain,
                    &scenario.integrator,
                )
                .map_err(numerical)?;
                if frozen.left_domain {
                    warnings.push(format!(
                        "ray {i}: tau = {tau} trajectory left the domain before the frozen time"
                    ));
                }
                csv.push_str(&csv_line(&[
                    i.to_string(),
                    fmt_f64(tau),
                    fmt_f64(frozen.t_used),
                    fmt_f64(frozen.length),
                    "true".into(),
                    fmt_f64(frozen.quadrature_error_estimate),
                ]));
            }
        }
    }
    emitter
        .write("lengths.csv", &csv)
        .map_err(|e| RunError::Config(e.to_string()))
}

fn variation(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let q2 = require_q2(scenario)?.clone();
    let rays = traced_fan(scenario, warnings)?;
    let q1 = &scenario.metric_q1;
    let n = q1.dim();
    let mut lv_csv = String::new();
    lv_csv.push_str(&csv_line(&[
        "ray_index".into(),
        "dL_dtau".into(),
        "l_value".into(),
        "G2".into(),
        "delta_L".into(),
    ]));
    for (i, baseline) in &rays {
        let first = nullray_core::integrate_first_variation(q1, &q2, 0.0, baseline)
            .map_err(numerical)?;
        let mut csv = String::new();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("dx{k}")));
        header.extend((1..=n).map(|k| format!("dxi{k}")));
        header.push("dx0".to_string());
        csv.push_str(&csv_line(&header));
        for idx in 0..first.len() {
            let s = first.state(idx);
            let mut cells = vec![fmt_f64(first.t(idx))];
            cells.extend(s.dx_dtau.iter().map(|v| fmt_f64(*v)));
            cells.extend(s.dxi_dtau.iter().map(|v| fmt_f64(*v)));
            cells.push(fmt_f64(s.dx0_dtau));
            csv.push_str(&csv_line(&cells));
        }
        emitter
            .write(&format!("variation_ray_{i:03}.csv"), &csv)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let lv = nullray_core::length_first_variation(q1, &q2, baseline, &first)
            .map_err(numerical)?;
        lv_csv.push_str(&csv_line(&[
            i.to_string(),
            fmt_f64(lv.dl_dtau),
            fmt_f64(lv.l_value),
            fmt_f64(lv.g2),
            fmt_f64(lv.delta_l),
        ]));
    }
    emitter
        .write("length_variation.csv", &lv_csv)
        .map_err(|e| RunError::Config(e.to_string()))
}

fn estimates_value(per_ray: &[EstimateRatios], aggregate: &EstimateRatios) -> Value {
    let ratios = |r: &EstimateRatios| {
        let mut m = Map::new();
        m.insert("first_variation".into(), num(r.first_variation));
        m.insert("second_variation".into(), num(r.second_variation));
        m.insert("time_variation".into(), num(r.time_variation));
        m.insert("remainder".into(), num(r.remainder));
        Value::Object(m)
    };
    let mut m = Map::new();
    m.insert("per_ray".into(), Value::Array(per_ray.iter().map(&ratios).collect()));
    m.insert("aggregate".into(), ratios(aggregate));
    Value::Object(m)
}

fn report_values(report: &RigidityReport) -> (Value, String) {
    let mut rays = Vec::new();
    let mut csv = String::new();
    csv.push_str(&csv_line(&[
        "ray".into(),
        "T".into(),
        "L1".into(),
        "L2".into(),
        "delta_L".into(),
        "l_value".into(),
        "G2".into(),
        "norm_qprime".into(),
        "norm_dqprime".into(),
        "norm_timerow".into(),
        "norm_total".into(),
        "ratio".into(),
        "degenerate".into(),
    ]));
    for r in &report.rays {
        let mut m = Map::new();
        m.insert("ray".into(), Value::Number((r.ray as u64).into()));
        m.insert("T".into(), num(r.t_exit));
        m.insert("L1".into(), num(r.l1));
        m.insert("L2".into(), num(r.l2));
        m.insert("delta_L".into(), num(r.delta_l));
        m.insert("l_value".into(), num(r.l_value));
        m.insert("G2".into(), num(r.g2));
        let mut nm = Map::new();
        nm.insert("qprime".into(), num(r.norm.term_qprime));
        nm.insert("dqprime".into(), num(r.norm.term_dqprime));
        nm.insert("timerow".into(), num(r.norm.term_timerow));
        nm.insert("total".into(), num(r.norm.total));
        m.insert("norm".into(), Value::Object(nm));
        m.insert("ratio".into(), num(r.ratio));
        m.insert("degenerate".into(), Value::Bool(r.degenerate));
        rays.push(Value::Object(m));
        csv.push_str(&csv_line(&[
            r.ray.to_string(),
            fmt_f64(r.t_exit),
            fmt_f64(r.l1),
            fmt_f64(r.l2),
            fmt_f64(r.delta_l),
            fmt_f64(r.l_value),
            fmt_f64(r.g2),
            fmt_f64(r.norm.term_qprime),
            fmt_f64(r.norm.term_dqprime),
            fmt_f64(r.norm.term_timerow),
            fmt_f64(r.norm.total),
            fmt_f64(r.ratio),
            r.degenerate.to_string(),
        ]));
    }
    let a = &report.aggregates;
    let mut agg = Map::new();
    agg.insert("min_ratio".into(), num(a.min_ratio));
    agg.insert("max_ratio".into(), num(a.max_ratio));
    agg.insert("C_N".into(), num(a.measured_c_n));
    agg.insert("l0_estimate".into(), num(a.l0_estimate));
    agg.insert("smallness".into(), num(a.smallness.min(1e300)));
    agg.insert("stability_margin".into(), num(a.stability_margin.clamp(-1e300, 1e300)));
    agg.insert("N".into(), num(a.n_used));
    agg.insert("verdict".into(), Value::String(a.verdict.to_string()));
    let mut root = Map::new();
    root.insert("rays".into(), Value::Array(rays));
    root.insert("aggregates".into(), Value::Object(agg));
    (Value::Object(root), csv)
}

fn rigidity(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let q2 = require_q2(scenario)?.clone();
    let q1 = &scenario.metric_q1;
    let fan_spec = scenario.fan.resolve(&scenario.domain).map_err(RunError::Config)?;
    let rig = scenario.rigidity.resolve();
    let report = stability_check(q1, &q2, &scenario.domain, &fan_spec, &scenario.integrator, &rig)
        .map_err(numerical)?;
    warnings.extend(report.warnings.iter().cloned());

    // Estimate ratios along the same fan.
    let fan = make_fan(&scenario.domain, q1, &fan_spec).map_err(numerical)?;
    let baselines: Vec<Trajectory> = fan
        .rays
        .par_iter()
        .map(|init| integrate_null_geodesic(q1, init, &scenario.domain, &scenario.integrator))
        .collect::<Result<_, _>>()
        .map_err(numerical)?;
    let est = estimate_report(
        q1,
        &q2,
        &baselines,
        report.aggregates.n_used,
        rig.tau_samples,
        &scenario.integrator,
    )
    .map_err(numerical)?;

    let (mut root, csv) = report_values(&report);
    root.as_object_mut()
        .expect("object")
        .insert("estimates".into(), estimates_value(&est.per_ray, &est.aggregate));
    emitter
        .write_json("rigidity.json", &root)
        .and_then(|_| emitter.write("rigidity.csv", &csv))
        .map_err(|e| RunError::Config(e.to_string()))
}

fn recover(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let rc = scenario
        .recover
        .as_ref()
        .ok_or_else(|| RunError::Config("recover: block required for this subcommand".into()))?;
    let q1 = &scenario.metric_q1;
    let rays = traced_fan(scenario, warnings)?;
    let baselines: Vec<Trajectory> = rays.iter().map(|(_, t)| t.clone()).collect();
    let basis = PerturbationBasis { elements: rc.basis.clone() };

    let (data, synthesized): (Vec<f64>, bool) = match (&rc.observed_delta_l, &rc.truth_coefficients) {
        (Some(d), _) => {
            if d.len() != baselines.len() {
                return Err(RunError::Config(format!(
                    "recover.observed_delta_l: {} entries for {} traced rays",
                    d.len(),
                    baselines.len()
                )));
            }
            (d.clone(), false)
        }
        (None, Some(truth)) => {
            // Forward data at a different step size than the solver's.
            let q2 = basis.compose(q1, truth).map_err(numerical)?;
            let fine = IntegratorControls {
                step: scenario.integrator.step * rc.data_step_factor,
                ..scenario.integrator.clone()
            };
            let data: Vec<f64> = baselines
                .par_iter()
                .map(|b| -> Result<f64, CoreError> {
                    let refined =
                        integrate_null_geodesic(q1, &b.init, &scenario.domain, &fine)?;
                    let l1 = timespace_length(q1, &refined).length;
                    let l2 = length_at_tau(
                        q1,
                        &q2,
                        1.0,
                        &b.init,
                        refined.t_exit,
                        &scenario.domain,
                        &fine,
                    )?
                    .length;
                    Ok(l2 - l1)
                })
                .collect::<Result<_, _>>()
                .map_err(numerical)?;
            (data, true)
        }
        (None, None) => unreachable!("validated"),
    };

    let rig = scenario.rigidity.resolve();
    let result = linearized_recover(q1, &basis, &baselines, &data, rig.reg).map_err(numerical)?;
    if result.rank_deficient {
        warnings.push(format!(
            "recover: Gram condition {:.3e} exceeds 1e12; fan does not separate the basis",
            result.gram_condition
        ));
    }
    let mut m = Map::new();
    m.insert(
        "coefficients".into(),
        Value::Array(result.coefficients.iter().map(|c| num(*c)).collect()),
    );
    m.insert("relative_residual".into(), num(result.relative_residual));
    m.insert("gram_condition".into(), num(result.gram_condition.min(1e300)));
    m.insert("rank_deficient".into(), Value::Bool(result.rank_deficient));
    m.insert("reg_used".into(), num(result.reg_used));
    m.insert("synthesized_data".into(), Value::Bool(synthesized));
    if let Some(truth) = &rc.truth_coefficients {
        m.insert(
            "truth_coefficients".into(),
            Value::Array(truth.iter().map(|c| num(*c)).collect()),
        );
    }
    emitter
        .write_json("recover.json", &Value::Object(m))
        .map_err(|e| RunError::Config(e.to_string()))
}

fn scan(
    scenario: &Scenario,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), RunError> {
    let q2 = require_q2(scenario)?.clone();
    let sc = scenario
        .scan
        .as_ref()
        .ok_or_else(|| RunError::Config("scan: block required for this subcommand".into()))?;
    let grid = sc.grid_points(&scenario.domain).map_err(RunError::Config)?;
    if grid.is_empty() {
        return Err(RunError::Config("scan.grid: no interior lattice points".into()));
    }
    let rig = scenario.rigidity.resolve();
    let report = global_scan(
        &scenario.metric_q1,
        &q2,
        &scenario.domain,
        &grid,
        &scenario.integrator,
        &rig,
        &sc.resolve(),
    )
    .map_err(numerical)?;
    let mut tubes = Vec::new();
    for t in &report.tubes {
        if let Some(f) = &t.failure {
            warnings.push(format!(
                "scan tube (point {}, direction {}): {f}",
                t.grid_index, t.direction_index
            ));
        }
        let mut m = Map::new();
        m.insert("grid_index".into(), Value::Number((t.grid_index as u64).into()));
        m.insert(
            "direction_index".into(),
            Value::Number((t.direction_index as u64).into()),
        );
        m.insert(
            "seed_point".into(),
            Value::Array(t.seed_point.iter().map(|v| num(*v)).collect()),
        );
        m.insert(
            "entry_point".into(),
            Value::Array(t.entry_point.iter().map(|v| num(*v)).collect()),
        );
        m.insert(
            "verdict".into(),
            match &t.verdict {
                Some(v) => Value::String(v.to_string()),
                None => Value::Null,
            },
        );
        m.insert("min_ratio".into(), num(t.min_ratio));
        m.insert("covered".into(), Value::Bool(t.covered));
        m.insert(
            "failure".into(),
            match &t.failure {
                Some(f) => Value::String(f.clone()),
                None => Value::Null,
            },
        );
        tubes.push(Value::Object(m));
    }
    let mut scan_obj = Map::new();
    scan_obj.insert("coverage".into(), num(report.coverage));
    scan_obj.insert("tubes".into(), Value::Array(tubes));
    let mut root = Map::new();
    root.insert("scan".into(), Value::Object(scan_obj));
    emitter
        .write_json("scan.json", &Value::Object(root))
        .map_err(|e| RunError::Config(e.to_string()))
}
