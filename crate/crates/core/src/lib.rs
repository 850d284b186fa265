//! Factor construction, wavelet decoupling, a dual-frequency attention model
//! and a TopK-Dropout backtester for cross-sectional stock prediction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod data;
pub mod error;
pub mod eval;
pub mod factors;
pub mod graphs;
pub mod model;
pub mod signal;
pub mod stats;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
