//! Two-stage forecast alignment for gridded air-quality forecasting.
//!
//! Stage one trains a small residual stencil forecaster with a rollout
//! (temporal-accumulation) loss; stage two aligns it with group-relative
//! policy optimization over AQI class-match rewards under a curriculum of
//! growing rollout horizons. Verification uses categorical metrics (FAR, CSI,
//! frequency bias, multi-class F1) per lead time.

pub mod aqi;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod field;
pub mod fieldio;
pub mod grpo;
pub mod idw;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rng;
pub mod sft;
pub mod sim;

pub use error::{Error, Result};
