//! Writing-assistant engine built on a small from-scratch neural substrate.
//!
//! The crate covers sentence completion with contrastive search, CRF-based
//! error correction, keywords-to-sentence infilling, phrase polishing and
//! expansion, paraphrase-pair mining, evaluation metrics and model
//! persistence. Everything runs in double precision on the CPU.

pub mod datapipe;
pub mod corrector;
pub mod decode;
pub mod error;
pub mod infill;
pub mod lm;
pub mod metrics;
pub mod numerics;
pub mod polish;
pub mod store;

pub use error::{Error, Result};
