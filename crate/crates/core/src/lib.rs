//! Parabolic fractional obstacle problems solved through a truncated
//! Caffarelli–Silvestre extension with graded Q1 elements, plus a spectral
//! reference solver and convergence studies.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod condense;
pub mod error;
pub mod extension;
pub mod fracparams;
pub mod mesh;
pub mod oracle;
pub mod quadrature;
pub mod sparse;
pub mod special;
pub mod study;
pub mod timestepper;
pub mod vi;

pub use assembly::{
    assemble_stiffness, assemble_trace_mass, assemble_weighted_mass, weighted_moment,
};
pub use condense::TraceSchur;
pub use error::{FracError, Result};
pub use extension::{
    harmonic_extension, l_interp, make_mollifier, pi_interp, r_interp, r_interp_nodal,
    weighted_gradient_error, CylinderFunction, FeField, HarmonicMode, Mollifier,
};
pub use fracparams::{hs_norm, make_params, FracParams, SpectralField};
pub use mesh::{base_mesh, graded_partition, tensor_mesh, BaseMesh, GradedPartition, TensorMesh};
pub use oracle::{spectral_vi_solve, OracleConfig, OracleSolution};
pub use study::{
    emit_report, run_interp_study, run_space_rate_study, run_time_rate_study,
    run_truncation_study, Preset, RateReport, ReportFormat, Rung, RungResult, StudyKind,
    StudySpec, Target,
};
pub use timestepper::{
    error_cal_e, error_e, run, run_with, Discretization, Forcing, ForcingMode, ProblemData,
    RunOptions, SpectralTrajectory, Trajectory,
};
pub use vi::{enumerate_active_sets, pdas_solve, psor_solve, StepSystem, VISolution};
