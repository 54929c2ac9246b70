use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::waveform::Waveform;

/// 10-90 % rise time over the time constant of a first-order edge.
const RISE_TIME_PER_TAU: f64 = 2.2;
/// Transients are evaluated until their envelope falls below this fraction of the swing.
const TRANSIENT_FLOOR: f64 = 1e-12;

/// Transmitter-specific distortion of an ideal CAN waveform.
///
/// A rise or fall time of exactly zero renders ideal edges; any other value
/// must span at least two sample periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcuProfile {
    pub ecu_id: String,
    pub rise_time_s: f64,
    pub fall_time_s: f64,
    pub overshoot_frac: f64,
    pub ring_freq_hz: f64,
    /// Exponential decay rate of the ringing, 1/s.
    pub ring_damping: f64,
    pub level_offset_v: f64,
    pub jitter_std_s: f64,
    pub noise_std_v: f64,
}

impl EcuProfile {
    /// Profile that leaves a waveform untouched.
    pub fn ideal(ecu_id: impl Into<String>) -> Self {
        Self {
            ecu_id: ecu_id.into(),
            rise_time_s: 0.0,
            fall_time_s: 0.0,
            overshoot_frac: 0.0,
            ring_freq_hz: 0.0,
            ring_damping: 0.0,
            level_offset_v: 0.0,
            jitter_std_s: 0.0,
            noise_std_v: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &'static str| SimError::InvalidEcu {
            ecu_id: self.ecu_id.clone(),
            field,
        };
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.rise_time_s) {
            return Err(bad("rise_time_s"));
        }
        if !finite_nonneg(self.fall_time_s) {
            return Err(bad("fall_time_s"));
        }
        if !(finite_nonneg(self.overshoot_frac) && self.overshoot_frac < 1.0) {
            return Err(bad("overshoot_frac"));
        }
        if !finite_nonneg(self.ring_freq_hz) {
            return Err(bad("ring_freq_hz"));
        }
        if !finite_nonneg(self.ring_damping) {
            return Err(bad("ring_damping"));
        }
        if !self.level_offset_v.is_finite() {
            return Err(bad("level_offset_v"));
        }
        if !finite_nonneg(self.jitter_std_s) {
            return Err(bad("jitter_std_s"));
        }
        if !finite_nonneg(self.noise_std_v) {
            return Err(bad("noise_std_v"));
        }
        Ok(())
    }

    fn check_resolvable(&self, sample_rate_hz: f64) -> Result<(), SimError> {
        let min = 2.0 / sample_rate_hz;
        for (field, t) in [("rise_time_s", self.rise_time_s), ("fall_time_s", self.fall_time_s)] {
            if t != 0.0 && t < min {
                return Err(SimError::UnresolvableEdge {
                    ecu_id: self.ecu_id.clone(),
                    field,
                    seconds: t,
                    min_seconds: min,
                });
            }
        }
        Ok(())
    }

    /// Normalized step response at `dt` seconds after an edge of the given direction.
    pub fn step_response(&self, dt: f64, rising: bool) -> f64 {
        if dt < 0.0 {
            return 0.0;
        }
        let edge_time = if rising { self.rise_time_s } else { self.fall_time_s };
        let settle = if edge_time == 0.0 {
            1.0
        } else {
            1.0 - (-dt * RISE_TIME_PER_TAU / edge_time).exp()
        };
        settle + self.ring(dt)
    }

    fn ring(&self, dt: f64) -> f64 {
        if self.overshoot_frac == 0.0 {
            return 0.0;
        }
        self.overshoot_frac
            * (-self.ring_damping * dt).exp()
            * (std::f64::consts::TAU * self.ring_freq_hz * dt).sin()
    }

    /// How long after an edge its transient part stays above the floor.
    fn transient_horizon(&self, rising: bool) -> f64 {
        let edge_time = if rising { self.rise_time_s } else { self.fall_time_s };
        let settle = edge_time / RISE_TIME_PER_TAU * -TRANSIENT_FLOOR.ln();
        let ring = if self.overshoot_frac == 0.0 {
            0.0
        } else if self.ring_damping == 0.0 {
            f64::INFINITY
        } else {
            (self.overshoot_frac / TRANSIENT_FLOOR).ln().max(0.0) / self.ring_damping
        };
        settle.max(ring)
    }
}

/// Applies a transmitter's edge shaping, ringing, level offset, timing jitter
/// and additive noise to an ideal rectangular waveform.
///
/// Each level change in `ideal` is an edge at the time of its first new-level
/// sample. The output is a pure function of `(ideal, ecu, seed)`.
pub fn shape_transmit(ideal: &Waveform, ecu: &EcuProfile, seed: u64) -> Result<Waveform, SimError> {
    ecu.validate()?;
    if ideal.is_empty() {
        return Err(SimError::EmptyWaveform);
    }
    if !(ideal.sample_rate_hz > 0.0 && ideal.sample_rate_hz.is_finite()) {
        return Err(SimError::BadSampleRate(ideal.sample_rate_hz));
    }
    ecu.check_resolvable(ideal.sample_rate_hz)?;

    let fs = ideal.sample_rate_hz;
    let n = ideal.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    struct Edge {
        time: f64,
        swing: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    for i in 1..n {
        let swing = ideal.samples[i] - ideal.samples[i - 1];
        if swing != 0.0 {
            edges.push(Edge {
                time: i as f64 / fs,
                swing,
            });
        }
    }
    if ecu.jitter_std_s > 0.0 {
        let jitter = Normal::new(0.0, ecu.jitter_std_s).expect("finite std");
        let bound = 3.0 * ecu.jitter_std_s;
        for edge in &mut edges {
            edge.time += jitter.sample(&mut rng).clamp(-bound, bound);
        }
    }

    let base = ideal.samples[0] + ecu.level_offset_v;
    let mut out = vec![base; n];

    // Settled levels: every edge contributes its full swing from its first sample on.
    let mut steps = vec![0.0; n + 1];
    for edge in &edges {
        let first = first_sample_at_or_after(edge.time, fs).min(n);
        steps[first] += edge.swing;
    }
    let mut acc = 0.0;
    for (y, step) in out.iter_mut().zip(&steps) {
        acc += step;
        *y += acc;
    }

    // Transient parts decay, so each edge only touches a bounded stretch.
    for edge in &edges {
        let rising = edge.swing > 0.0;
        let first = first_sample_at_or_after(edge.time, fs);
        let horizon = ecu.transient_horizon(rising);
        let last = if horizon.is_finite() {
            first_sample_at_or_after(edge.time + horizon, fs).min(n)
        } else {
            n
        };
        for (k, y) in out.iter_mut().enumerate().take(last).skip(first) {
            let dt = k as f64 / fs - edge.time;
            *y += edge.swing * (ecu.step_response(dt, rising) - 1.0);
        }
    }

    if ecu.noise_std_v > 0.0 {
        let noise = Normal::new(0.0, ecu.noise_std_v).expect("finite std");
        for y in &mut out {
            *y += noise.sample(&mut rng);
        }
    }

    Ok(Waveform {
        samples: out,
        sample_rate_hz: fs,
        meta: crate::waveform::WaveMeta {
            ecu_id: Some(ecu.ecu_id.clone()),
            ..ideal.meta.clone()
        },
    })
}

fn first_sample_at_or_after(time: f64, fs: f64) -> usize {
    let idx = (time * fs).ceil();
    if idx <= 0.0 {
        0
    } else {
        // guard against k/fs*fs landing a hair above k
        let k = idx as usize;
        if k > 0 && (k - 1) as f64 / fs >= time {
            k - 1
        } else {
            k
        }
    }
}
