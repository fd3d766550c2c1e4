//! Baseband simulator for linear all-optical channel aggregation.
//!
//! Two low-order data channels on coherent carriers are superimposed by a
//! sinusoidally driven Mach-Zehnder modulator into one higher-order channel.
//! The RF drive phase sets the relative phase of the two contributions, the
//! waveshaper weight sets their amplitude ratio.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod error;
pub mod link;
pub mod modulators;
pub mod optim;
pub mod receiver;
pub mod scenario;
mod serde_inf;
pub mod signal;
pub mod transmitter;
pub mod tuner;

pub use aggregator::{
    aggregate, calibrate, diagnose, predict_format, solve_controls, AggregationDiagnostics,
    AggregationPlan, Calibration, Controls, FormatPrediction,
};
pub use error::{Error, Result};
pub use link::{
    apply_ase, apply_dispersion, apply_weight, AseNoiseSpec, DispersionSpec, NoiseCalibration,
    NoiseLevel, WeightPlan,
};
pub use modulators::{
    bessel_j, iq_modulate, mzm_modulate, sideband_coefficients, MzmParams, RfDrive, SidebandTable,
};
pub use num_complex::Complex64;
pub use receiver::{
    compute_evm, compute_q_factor, eye_diagram, receive, recover_symbols, recover_symbols_at,
    ConstellationReport, EyeDiagram, QFactor, RxConfig, RxMode,
};
pub use scenario::{
    golden, run, stage_seed, sweep, Manifest, Outcome, Pipeline, ResolvedControls, Scenario,
    SweepParam, SweepRow, GOLDEN,
};
pub use signal::{
    apply_filter, combine, delay, frequency_shift, resample, CarrierPhase, ComplexEnvelope,
    FilterKind, FilterSpec, SpectrumView,
};
pub use transmitter::{
    build_parent_channels, generate_symbols, shape_pulses, two_tone_carriers, CarrierSpec,
    Decorrelation, Grid, ModFormat, ParentChannels, PulseKind, PulseShape, SymbolStream, TxConfig,
};
pub use tuner::{sensitivity, tune, Objective, Sensitivity, TuneResult, TuneSpec};
