//! End-to-end toolkit for probabilistic epidemic forecasting on synthetic data.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`sim`] — a strain-structured stochastic epidemic simulator producing
//!    weekly total-case (TC) and variant-attributable-case (VAC) series,
//!    with Latin hypercube experiment design ([`lhs`]) and turnover-based
//!    run filtering.
//! 2. [`obs`] — an observation model that degrades clean series through
//!    time rescaling, multiplicative noise, and outlier injection.
//! 3. [`dataset`] — rolling-window example extraction with per-window
//!    max-normalization and window-proportional batch sampling.
//! 4. [`model`] — a compact transformer encoder emitting monotone quantile
//!    forecasts, trained with pinball loss, Adam, a cosine learning-rate
//!    schedule, and EMA checkpoint selection. Backpropagation is
//!    implemented in this crate for exactly this architecture.
//! 5. [`forecast`] — total-case forecasts and variant-sum forecasts via
//!    inverse-CDF Monte Carlo.
//! 6. [`score`] — MAE / WIS / coverage, a persistence baseline, and
//!    grouped block-bootstrap uncertainty with an iid comparator.
//!
//! Everything is deterministic given a master seed; see [`rng`] for the
//! substream derivation scheme.

pub mod dataset;
pub mod forecast;
pub mod format;
pub mod lhs;
pub mod model;
pub mod obs;
pub mod rng;
pub mod score;
pub mod series;
pub mod sim;
pub mod stats;

pub use series::{RealizationMeta, SeriesKind, SurveillanceSeries};
