//! Physical-layer fingerprinting of CAN-bus transmitters.

// `!(x > 0.0)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canframe;
pub mod channelsim;
pub mod dataset;
pub mod evalkit;
pub mod featsel;
pub mod features;
pub mod formats;
pub mod manifest;
pub mod mlp;
pub mod pipeline;
pub mod waveform;
