//! Uniformly sampled differential voltage signals.

use serde::{Deserialize, Serialize};

/// Provenance labels attached to a waveform.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WaveMeta {
    pub ecu_id: Option<String>,
    pub channel_id: Option<String>,
}

/// Differential voltage samples (CAN-H minus CAN-L) at a fixed rate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub meta: WaveMeta,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
            meta: WaveMeta::default(),
        }
    }

    pub fn with_meta(mut self, meta: WaveMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample period in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Time of sample `n` in seconds.
    pub fn time_of(&self, n: usize) -> f64 {
        n as f64 / self.sample_rate_hz
    }
}
