//! Numerical laboratory for forward null-geodesics of static Lorentzian
//! metrics on a cylinder over a bounded spatial domain.
//!
//! The crate traces rays of the reduced Hamiltonian flow, measures their
//! time-space lengths, integrates first- and second-variation systems along
//! metric homotopies, and turns boundary length differences into empirical
//! stability certificates for the metric difference, including a linearized
//! recovery mode.

pub mod domain;
pub mod error;
pub mod integrator;
pub mod length;
pub mod metric;
pub mod rigidity;
pub mod rng;
pub mod shooting;
pub mod variation;

pub use domain::DomainSpec;
pub use error::{Error, Result};
pub use integrator::{
    hamiltonian_drift, integrate_fixed_interval, integrate_null_geodesic, IntegratorControls,
    Method, PhaseState, Trajectory,
};
pub use length::{length_at_tau, timespace_length, LengthRecord};
pub use metric::{
    hamiltonian, homotopy, validate_signature, InverseMetricBlocks, MetricDerivatives, MetricSpec,
    PolyQuadratic, SignatureReport,
};
pub use rigidity::{
    estimate_report, global_scan, linearized_recover, perturbation_norm, scan_directions,
    select_weight_n, stability_check, EstimateRatios, EstimateReport, FanAggregates,
    NormBreakdown, PerturbationBasis, RayRecord, RecoveryResult, RigidityControls,
    RigidityReport, ScanControls, ScanReport, TubeRecord, Verdict,
};
pub use shooting::{make_fan, null_covector, DirectionRule, Fan, FanSpec, InitialData};
pub use variation::{
    integrate_first_variation, integrate_second_variation, length_first_variation,
    variational_rhs, LengthVariation, VariationRates, VariationState, VariationTrajectory,
};
