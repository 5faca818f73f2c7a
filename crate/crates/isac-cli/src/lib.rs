//! Experiment harness: scenario configuration, seeded Monte Carlo sweeps,
//! baseline comparisons, and plot-ready CSV emission.
//!
//! Every experiment is replayable bit-exactly from its specification and
//! base seed: trial seeds derive deterministically, trials run in parallel
//! with order-deterministic assembly, and the data files contain only
//! deterministic columns (timing lives in the manifest).

pub mod emit;
pub mod runner;
pub mod scenario;
pub mod spec;

pub use emit::{emit_results, Manifest};
pub use runner::{run_experiment, ExperimentOutput, ResultRow};
pub use scenario::{desk_scene, full_scale_scene, single_user_scene};
pub use spec::{ExperimentFamily, ExperimentSpec, SolverArm, SweepSpec};
