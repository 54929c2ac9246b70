use serde::{Deserialize, Serialize};

use super::SimError;
use crate::waveform::Waveform;

/// Cable lengths of the bench setup, meters.
pub const STANDARD_LENGTHS_M: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

const DC_GAIN_RANGE: (f64, f64) = (0.9, 1.1);
const TAP_TRUNCATION: f64 = 1e-6;
const MAX_DERIVED_TAPS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CableFamily {
    Gxl,
    Txl,
    Candata,
}

impl CableFamily {
    pub const ALL: [CableFamily; 3] = [CableFamily::Gxl, CableFamily::Txl, CableFamily::Candata];

    pub fn name(self) -> &'static str {
        match self {
            CableFamily::Gxl => "GXL",
            CableFamily::Txl => "TXL",
            CableFamily::Candata => "CANDATA",
        }
    }

    /// Cutoff of a 0.5 m run of this cable in the default model.
    fn reference_cutoff_hz(self) -> f64 {
        match self {
            CableFamily::Gxl => 3.6e6,
            CableFamily::Txl => 3.3e6,
            CableFamily::Candata => 3.0e6,
        }
    }

    fn q_factor(self) -> f64 {
        match self {
            CableFamily::Gxl => 0.62,
            CableFamily::Txl => 0.70,
            CableFamily::Candata => 0.80,
        }
    }
}

/// How the channel impulse response is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelResponse {
    /// Explicit FIR taps at the simulation sample rate.
    Taps { taps: Vec<f64> },
    /// Second-order low-pass, discretized with the bilinear transform.
    SecondOrder { cutoff_hz: f64, q_factor: f64 },
}

/// A cable between a transmitter and the monitoring point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub channel_id: String,
    pub family: CableFamily,
    pub length_m: f64,
    pub response: ChannelResponse,
}

impl ChannelProfile {
    /// Default model for a cable family and length: longer runs roll off
    /// earlier, and the family sets the damping of the response.
    pub fn standard(family: CableFamily, length_m: f64) -> Self {
        let cutoff_hz = family.reference_cutoff_hz() * (0.5 / length_m).powf(0.3);
        Self {
            channel_id: format!("{}-{}m", family.name(), length_m),
            family,
            length_m,
            response: ChannelResponse::SecondOrder {
                cutoff_hz,
                q_factor: family.q_factor(),
            },
        }
    }

    /// The 18 family × length combinations of the bench.
    pub fn default_bank() -> Vec<Self> {
        CableFamily::ALL
            .iter()
            .flat_map(|&f| STANDARD_LENGTHS_M.iter().map(move |&l| Self::standard(f, l)))
            .collect()
    }

    pub fn identity(channel_id: impl Into<String>) -> Self {
        Self {
            channel_id: channel_id.into(),
            family: CableFamily::Candata,
            length_m: 0.5,
            response: ChannelResponse::Taps { taps: vec![1.0] },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !STANDARD_LENGTHS_M.contains(&self.length_m) {
            return Err(SimError::InvalidChannel {
                channel_id: self.channel_id.clone(),
                reason: format!("length {} m is not one of {:?}", self.length_m, STANDARD_LENGTHS_M),
            });
        }
        Ok(())
    }

    /// Impulse response at the given sample rate.
    pub fn taps(&self, sample_rate_hz: f64) -> Result<Vec<f64>, SimError> {
        self.validate()?;
        let invalid = |reason: String| SimError::InvalidChannel {
            channel_id: self.channel_id.clone(),
            reason,
        };
        let taps = match &self.response {
            ChannelResponse::Taps { taps } => {
                if taps.is_empty() {
                    return Err(invalid("empty tap list".into()));
                }
                if taps.iter().any(|t| !t.is_finite()) {
                    return Err(invalid("non-finite tap".into()));
                }
                taps.clone()
            }
            &ChannelResponse::SecondOrder { cutoff_hz, q_factor } => {
                if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
                    return Err(SimError::CutoffAboveNyquist {
                        channel_id: self.channel_id.clone(),
                        cutoff_hz,
                        sample_rate_hz,
                    });
                }
                if !(q_factor > 0.0 && q_factor.is_finite()) {
                    return Err(invalid(format!("q_factor {q_factor} must be positive")));
                }
                second_order_lowpass_taps(cutoff_hz, q_factor, sample_rate_hz)
            }
        };
        let gain: f64 = taps.iter().sum();
        if !(DC_GAIN_RANGE.0..=DC_GAIN_RANGE.1).contains(&gain) {
            return Err(invalid(format!("tap sum {gain} outside [0.9, 1.1]")));
        }
        Ok(taps)
    }
}

/// Impulse response of a bilinear-transformed (prewarped) second-order
/// low-pass, truncated after the last tap above 1e-6 of the peak magnitude.
pub fn second_order_lowpass_taps(cutoff_hz: f64, q_factor: f64, sample_rate_hz: f64) -> Vec<f64> {
    let w0 = std::f64::consts::TAU * cutoff_hz / sample_rate_hz;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q_factor);
    let a0 = 1.0 + alpha;
    let b0 = (1.0 - cos) / 2.0 / a0;
    let b1 = (1.0 - cos) / a0;
    let b2 = b0;
    let a1 = -2.0 * cos / a0;
    let a2 = (1.0 - alpha) / a0;

    let mut h = Vec::new();
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut peak: f64 = 0.0;
    let mut quiet = 0usize;
    for n in 0..MAX_DERIVED_TAPS {
        let x0 = if n == 0 { 1.0 } else { 0.0 };
        let y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        h.push(y0);
        peak = peak.max(y0.abs());
        // the envelope has decayed once a long stretch stays below the floor
        if y0.abs() < TAP_TRUNCATION * peak {
            quiet += 1;
            if quiet > 64 {
                break;
            }
        } else {
            quiet = 0;
        }
        (x2, x1, y2, y1) = (x1, x0, y1, y0);
    }
    let keep = h
        .iter()
        .rposition(|v| v.abs() >= TAP_TRUNCATION * peak)
        .map_or(1, |i| i + 1);
    h.truncate(keep);
    h
}

/// Causal linear convolution truncated to the input length:
/// `out[n] = sum_k h[k] * s[n - k]`.
pub fn convolve(h: &[f64], s: &Waveform) -> Result<Waveform, SimError> {
    if h.is_empty() {
        return Err(SimError::EmptyTaps);
    }
    let x = &s.samples;
    let mut out = vec![0.0; x.len()];
    for (n, y) in out.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for k in 0..kmax {
            acc += h[k] * x[n - k];
        }
        *y = acc;
    }
    Ok(Waveform {
        samples: out,
        sample_rate_hz: s.sample_rate_hz,
        meta: s.meta.clone(),
    })
}

/// Passes a transmitted waveform through a channel.
pub fn apply_channel(s: &Waveform, ch: &ChannelProfile) -> Result<Waveform, SimError> {
    let taps = ch.taps(s.sample_rate_hz)?;
    let mut out = convolve(&taps, s)?;
    out.meta.channel_id = Some(ch.channel_id.clone());
    Ok(out)
}
