//! Post-training quantization toolkit for small transformer decoders.
//!
//! The crate covers symmetric integer quantization of weights and
//! activations, a reference decoder with fp32 and integer forward paths,
//! static scale calibration, error diagnostics, and the evaluation metrics
//! used to judge quantized code models: pass@k, robustness drop under prompt
//! perturbation, and smoothed BLEU.

pub mod analysis;
pub mod calibrate;
pub mod cli;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod quantizer;
pub mod report;

pub use error::{Error, FormatError, Result};
