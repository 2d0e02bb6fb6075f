//! Hidden-state deviation analysis.
//!
//! The deviation measure of a state `h` at layer `l` and time `t` is the
//! number of real support states of the same layer, from time steps within
//! `time_window` of `t`, lying strictly inside Euclidean radius `r` of `h`.
//! Fewer real neighbors means the state is further from anything the model
//! produces on real text.

mod curve;
mod index;
mod pca;
mod protocol;

pub use curve::{
    absolute_samples, deviation_curve, difference_samples, evenly_spaced_steps, relative_samples,
    Alignment, Axis, CountParams, CurvePoint, DeviationCurve, StepSamples, ABSOLUTE_STEP_COUNT,
    DEFAULT_TIME_WINDOW, RELATIVE_OFFSETS,
};
pub use index::{squared_distance, NeighborQuery, SupportIndex};
pub use pca::{pca_project, PcaProjection};
pub use protocol::{
    compare_protocol, partition, shuffle_control, ArmReport, CompareMode, Fold, ProtocolConfig,
    ProtocolReport, StateEncoder,
};

/// Radius used for GPT-2-scale analyses.
pub const DEFAULT_GPT2_RADIUS: f64 = 1024.0;

/// Layer used for GPT-2-scale analyses.
pub const DEFAULT_GPT2_LAYER: usize = 7;
