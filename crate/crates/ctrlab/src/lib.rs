//! Streaming CTR-prediction laboratory: synthetic ground-truth event
//! generation, fake-negative label streams, five training losses, two model
//! families, continuous and offline trainers, and ground-truth-aware
//! evaluation.

pub mod features;
pub mod losses;
pub mod math;
pub mod models;
pub mod types;
