//! Transmitter and channel models producing labeled received-signal records.
//!
//! The received signal at the monitoring point is the transmitter output
//! convolved with the cable impulse response. Transmitters are modelled by
//! [`EcuProfile`] (edge shaping, ringing, offsets, jitter, noise) and cables
//! by [`ChannelProfile`] (FIR taps or a second-order low-pass).

mod channel;
mod dataset;
mod ecu;

use thiserror::Error;

pub use channel::{
    apply_channel, convolve, second_order_lowpass_taps, CableFamily, ChannelProfile, ChannelResponse,
    STANDARD_LENGTHS_M,
};
pub use dataset::{
    default_ecus, generate_dataset, segment_from_first_edge, setting_seed, RawDataset, RawRecord, SimConfig,
};
pub use ecu::{shape_transmit, EcuProfile};

use crate::canframe::{FrameError, SignalingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("ecu {ecu_id}: invalid {field}")]
    InvalidEcu { ecu_id: String, field: &'static str },
    #[error("ecu {ecu_id}: {field} of {seconds:e} s is shorter than two sample periods ({min_seconds:e} s)")]
    UnresolvableEdge {
        ecu_id: String,
        field: &'static str,
        seconds: f64,
        min_seconds: f64,
    },
    #[error("channel {channel_id}: {reason}")]
    InvalidChannel { channel_id: String, reason: String },
    #[error("channel {channel_id}: cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz}/2)")]
    CutoffAboveNyquist {
        channel_id: String,
        cutoff_hz: f64,
        sample_rate_hz: f64,
    },
    #[error("impulse response must have at least one tap")]
    EmptyTaps,
    #[error("waveform has no samples")]
    EmptyWaveform,
    #[error("sample rate {0} Hz is not positive")]
    BadSampleRate(f64),
    #[error("no dominant edge found in capture")]
    NoDominantEdge,
    #[error("capture too short: need {needed} samples, have {got}")]
    CaptureTooShort { needed: usize, got: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Signaling(#[from] SignalingError),
}
