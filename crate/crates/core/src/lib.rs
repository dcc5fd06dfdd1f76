//! h-extrema and h-slopes of Brownian motion with drift: path generation,
//! extraction, closed-form laws and Monte Carlo verification.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioned;
pub mod error;
pub mod extrema;
pub mod formulas;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod palm;
pub mod paths;
pub mod rng;
pub mod scalar;
pub mod sinai;
pub mod stats;

pub use error::{Error, Result};
pub use extrema::{
    center, detect_stream, slopes, sweep, Direction, ExtremaDetector, ExtremumKind, HExtremum,
    Slope, SlopeSequence, SweepMode, SweepRecord,
};
pub use model::{AlphaHat, ModelSpec};
pub use paths::{generate_one_sided, generate_two_sided, SampledPath, TwoSidedPath};
pub use rng::{spawn_stream, RngStream};
pub use scalar::Scalar;

pub type ModelSpecF64 = ModelSpec<f64>;
pub type ModelSpecF32 = ModelSpec<f32>;
pub type SampledPathF64 = SampledPath<f64>;
pub type SampledPathF32 = SampledPath<f32>;
pub type TwoSidedPathF64 = TwoSidedPath<f64>;
pub type TwoSidedPathF32 = TwoSidedPath<f32>;
pub type HExtremumF64 = HExtremum<f64>;
pub type HExtremumF32 = HExtremum<f32>;
pub type SlopeF64 = Slope<f64>;
pub type SlopeF32 = Slope<f32>;
pub type SlopeSequenceF64 = SlopeSequence<f64>;
pub type SlopeSequenceF32 = SlopeSequence<f32>;
