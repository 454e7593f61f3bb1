//! Data model, operators and classical baselines for reconstructing 2D
//! incompressible velocity fields from sparse point sensors.

pub mod divergence;
pub mod error;
pub mod grid;
pub mod io;
mod linalg;
pub mod metrics;
pub mod pod;
pub mod scaling;
pub mod sensors;
pub mod split;
pub mod synthetic;
pub mod uq;

pub use divergence::{apply_divergence, DivergenceOperator, Stencil};
pub use error::{Error, Result};
pub use grid::{flatten_state, unflatten_state, FlowSeries, FlowSnapshot, Grid};
pub use metrics::{divergence_error, relative_error};
pub use pod::{
    compute_pod, compute_pod_with, gpod_reconstruct, select_gpod_hyperparams, GpodConfig, GpodPipeline, GpodSolution,
    GpodSolver, PodBasis, PodOptions,
};
pub use scaling::{compute_scaling, ScalingParams};
pub use sensors::{apply_sampling, SamplingOperator, SensorLayout};
pub use split::{split, SplitMode, SplitSeries, SplitSpec};
pub use synthetic::{generate, FlowKind, FlowRecipe};
