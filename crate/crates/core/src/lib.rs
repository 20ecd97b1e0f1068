//! TLinFormer: a windowed transformer whose cost grows linearly in sequence
//! length while every generated token still attends, through a compressed
//! context path, to the whole history.
//!
//! The crate contains a small dense tensor library with reverse-mode
//! differentiation and an attention-interaction ledger, the model and a
//! standard decoder baseline, a dual-mode KV cache, the closed-form cost
//! model the ledger is checked against, a sliding-window trainer and a
//! benchmark harness.

pub mod attention;
pub mod autodiff;
pub mod backend;
pub mod bench;
pub mod cache;
pub mod cost;
pub mod error;
pub mod ledger;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use ledger::FlopLedger;
pub use model::{AnyModel, Architecture, Baseline, ModelConfig, TLinFormer, WindowLayout};
pub use tensor::{Element, Tensor};
