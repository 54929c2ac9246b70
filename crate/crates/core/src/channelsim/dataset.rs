use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_channel, shape_transmit, ChannelProfile, EcuProfile, SimError};
use crate::canframe::{encode_frame, render_waveform, CanFrame, SignalingConfig, RECESSIVE};
use crate::waveform::Waveform;

fn default_records_per_class() -> usize {
    3600
}
fn default_window_len() -> usize {
    40
}
fn default_pretrigger() -> usize {
    4
}
fn default_windows_per_frame() -> usize {
    1
}
fn default_idle_bits() -> usize {
    3
}

fn default_frame() -> CanFrame {
    CanFrame::new(0x12, &[0x55, 0xAA]).expect("valid frame")
}

/// Parameters of a synthetic capture campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_ecus")]
    pub ecus: Vec<EcuProfile>,
    #[serde(default = "ChannelProfile::default_bank")]
    pub channels: Vec<ChannelProfile>,
    #[serde(default = "default_frame")]
    pub frame: CanFrame,
    #[serde(default = "default_records_per_class")]
    pub records_per_class: usize,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub signaling: SignalingConfig,
    /// Samples kept ahead of the detected first dominant edge.
    #[serde(default = "default_pretrigger")]
    pub pretrigger_samples: usize,
    /// Consecutive windows cut from each transmitted frame.
    #[serde(default = "default_windows_per_frame")]
    pub windows_per_frame: usize,
    /// Recessive bus-idle bits rendered ahead of SOF.
    #[serde(default = "default_idle_bits")]
    pub idle_bits: usize,
}

impl SimConfig {
    pub fn new(ecus: Vec<EcuProfile>, channels: Vec<ChannelProfile>, frame: CanFrame) -> Self {
        Self {
            ecus,
            channels,
            frame,
            records_per_class: default_records_per_class(),
            window_len: default_window_len(),
            rng_seed: 0,
            signaling: SignalingConfig::default(),
            pretrigger_samples: default_pretrigger(),
            windows_per_frame: default_windows_per_frame(),
            idle_bits: default_idle_bits(),
        }
    }

    /// Four ECUs over the 18 default cables, transmitting `0x12 55 AA`.
    pub fn default_bench() -> Self {
        Self::new(default_ecus(), ChannelProfile::default_bank(), default_frame())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.ecus.is_empty() {
            return Err(SimError::Config("ecus must not be empty".into()));
        }
        if self.channels.is_empty() {
            return Err(SimError::Config("channels must not be empty".into()));
        }
        if self.records_per_class == 0 {
            return Err(SimError::Config("records_per_class must be at least 1".into()));
        }
        if self.window_len < 8 {
            return Err(SimError::Config("window_len must be at least 8".into()));
        }
        if self.windows_per_frame == 0 {
            return Err(SimError::Config("windows_per_frame must be at least 1".into()));
        }
        if self.pretrigger_samples >= self.window_len {
            return Err(SimError::Config("pretrigger_samples must be shorter than window_len".into()));
        }
        if self.idle_bits == 0 {
            return Err(SimError::Config("idle_bits must be at least 1".into()));
        }
        self.signaling.validate()?;
        self.frame.validate()?;
        let mut ids: Vec<&str> = self.ecus.iter().map(|e| e.ecu_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Config("ecu_id values must be unique".into()));
        }
        let mut ids: Vec<&str> = self.channels.iter().map(|c| c.channel_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Config("channel_id values must be unique".into()));
        }
        for e in &self.ecus {
            e.validate()?;
        }
        for c in &self.channels {
            c.taps(self.signaling.sample_rate_hz)?;
        }
        Ok(())
    }
}

/// Four nominally identical transceivers with small part-to-part spread.
pub fn default_ecus() -> Vec<EcuProfile> {
    let mk = |id: &str, rise: f64, fall: f64, over: f64, ring: f64, damp: f64, offset: f64| EcuProfile {
        ecu_id: id.into(),
        rise_time_s: rise,
        fall_time_s: fall,
        overshoot_frac: over,
        ring_freq_hz: ring,
        ring_damping: damp,
        level_offset_v: offset,
        jitter_std_s: 1e-9,
        noise_std_v: 0.005,
    };
    vec![
        mk("E1", 300e-9, 320e-9, 0.06, 2.0e6, 1.5e6, 0.000),
        mk("E2", 330e-9, 300e-9, 0.08, 1.8e6, 1.2e6, 0.020),
        mk("E3", 280e-9, 340e-9, 0.05, 2.2e6, 1.8e6, -0.015),
        mk("E4", 350e-9, 310e-9, 0.07, 1.6e6, 1.0e6, 0.010),
    ]
}

/// One fixed-length window of received samples with its class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub ecu_id: String,
    pub channel_id: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub records: Vec<RawRecord>,
}

impl RawDataset {
    /// Record count per (ecu, channel) pair, in first-seen order.
    pub fn class_counts(&self) -> Vec<((String, String), usize)> {
        let mut counts: Vec<((String, String), usize)> = Vec::new();
        for r in &self.records {
            match counts
                .iter_mut()
                .find(|((e, c), _)| *e == r.ecu_id && *c == r.channel_id)
            {
                Some((_, n)) => *n += 1,
                None => counts.push(((r.ecu_id.clone(), r.channel_id.clone()), 1)),
            }
        }
        counts
    }
}

/// Cuts consecutive windows starting `pretrigger` samples ahead of the first
/// sample at or above `threshold`. At most `max_windows` windows are returned
/// and only whole windows are kept.
pub fn segment_from_first_edge(
    wave: &Waveform,
    threshold: f64,
    window_len: usize,
    pretrigger: usize,
    max_windows: Option<usize>,
) -> Result<Vec<Vec<f64>>, SimError> {
    let edge = wave
        .samples
        .iter()
        .position(|&v| v >= threshold)
        .ok_or(SimError::NoDominantEdge)?;
    let start = edge.saturating_sub(pretrigger);
    let available = (wave.len() - start) / window_len;
    let count = max_windows.map_or(available, |m| m.min(available));
    if count == 0 {
        return Err(SimError::CaptureTooShort {
            needed: start + window_len,
            got: wave.len(),
        });
    }
    Ok((0..count)
        .map(|w| wave.samples[start + w * window_len..start + (w + 1) * window_len].to_vec())
        .collect())
}

/// Renders, shapes, filters and segments `records_per_class` windows for
/// every (ecu, channel) pair. Settings are generated in ECU-major order and
/// each derives its own seed, so the result does not depend on scheduling.
pub fn generate_dataset(cfg: &SimConfig) -> Result<RawDataset, SimError> {
    cfg.validate()?;
    let line = encode_frame(&cfg.frame)?;
    let mut bits = vec![RECESSIVE; cfg.idle_bits];
    bits.extend_from_slice(&line.bits);
    let mut ideal = render_waveform(&bits, &cfg.signaling)?;

    // Later edges cannot reach back into the captured span, so only render
    // what the windows need plus one bit of margin.
    let spb = cfg.signaling.samples_per_bit();
    let needed = (cfg.idle_bits + 1) * spb + cfg.windows_per_frame * cfg.window_len;
    ideal.samples.truncate(needed.max(spb));

    let threshold = cfg.signaling.v_rec_diff + 0.5 * (cfg.signaling.v_dom_diff - cfg.signaling.v_rec_diff);

    let settings: Vec<(&EcuProfile, &ChannelProfile)> = cfg
        .ecus
        .iter()
        .flat_map(|e| cfg.channels.iter().map(move |c| (e, c)))
        .collect();

    let per_setting: Vec<Vec<RawRecord>> = settings
        .par_iter()
        .map(|&(ecu, ch)| {
            let seed = setting_seed(cfg.rng_seed, &ecu.ecu_id, &ch.channel_id);
            let mut out = Vec::with_capacity(cfg.records_per_class);
            let mut rep = 0u64;
            while out.len() < cfg.records_per_class {
                let tx = shape_transmit(&ideal, ecu, mix(seed, rep))?;
                let rx = apply_channel(&tx, ch)?;
                let windows = segment_from_first_edge(
                    &rx,
                    threshold,
                    cfg.window_len,
                    cfg.pretrigger_samples,
                    Some(cfg.windows_per_frame),
                )?;
                for samples in windows {
                    if out.len() == cfg.records_per_class {
                        break;
                    }
                    out.push(RawRecord {
                        ecu_id: ecu.ecu_id.clone(),
                        channel_id: ch.channel_id.clone(),
                        samples,
                    });
                }
                rep += 1;
            }
            Ok(out)
        })
        .collect::<Result<_, SimError>>()?;

    Ok(RawDataset {
        sample_rate_hz: cfg.signaling.sample_rate_hz,
        window_len: cfg.window_len,
        records: per_setting.into_iter().flatten().collect(),
    })
}

/// Stable seed for one (ecu, channel) setting.
pub fn setting_seed(rng_seed: u64, ecu_id: &str, channel_id: &str) -> u64 {
    mix(mix(rng_seed, fnv1a(ecu_id.as_bytes())), fnv1a(channel_id.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// splitmix64 finalizer over a combined word.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(records: usize) -> SimConfig {
        let mut cfg = SimConfig::default_bench();
        cfg.records_per_class = records;
        cfg.rng_seed = 42;
        cfg
    }

    #[test]
    fn one_setting_yields_3600_windows_of_40() {
        let mut cfg = small_cfg(3600);
        cfg.ecus.truncate(1);
        cfg.channels.truncate(1);
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.records.len(), 3600);
        assert_eq!(ds.records.iter().map(|r| r.samples.len()).sum::<usize>(), 144_000);
    }

    #[test]
    fn cartesian_product_of_labels() {
        let mut cfg = small_cfg(3);
        cfg.channels = ChannelProfile::default_bank().into_iter().take(6).collect();
        let ds = generate_dataset(&cfg).unwrap();
        let counts = ds.class_counts();
        assert_eq!(counts.len(), 24);
        assert!(counts.iter().all(|(_, n)| *n == 3));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(5);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.rng_seed = 43;
        assert_ne!(a, generate_dataset(&other).unwrap());
    }

    #[test]
    fn multiple_windows_per_frame_are_consecutive() {
        let mut cfg = small_cfg(6);
        cfg.ecus = vec![EcuProfile::ideal("ideal")];
        cfg.channels = vec![ChannelProfile::identity("wire")];
        cfg.windows_per_frame = 3;
        let ds = generate_dataset(&cfg).unwrap();
        // ideal edges: windows 0..3 of repetition 0 equal those of repetition 1
        assert_eq!(ds.records[0], ds.records[3]);
        assert_eq!(ds.records[2], ds.records[5]);
        assert_ne!(ds.records[0], ds.records[1]);
        // the first window starts 4 samples ahead of SOF
        assert_eq!(&ds.records[0].samples[..5], &[0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn config_errors() {
        let mut cfg = small_cfg(1);
        cfg.ecus.clear();
        assert!(matches!(generate_dataset(&cfg), Err(SimError::Config(_))));
        let mut cfg = small_cfg(1);
        cfg.channels.clear();
        assert!(matches!(generate_dataset(&cfg), Err(SimError::Config(_))));
        let mut cfg = small_cfg(1);
        cfg.ecus.push(cfg.ecus[0].clone());
        assert!(matches!(generate_dataset(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn default_ecus_are_distinct() {
        let ecus = default_ecus();
        for i in 0..ecus.len() {
            for j in i + 1..ecus.len() {
                let (a, b) = (&ecus[i], &ecus[j]);
                let same = a.rise_time_s == b.rise_time_s
                    && a.fall_time_s == b.fall_time_s
                    && a.overshoot_frac == b.overshoot_frac
                    && a.ring_freq_hz == b.ring_freq_hz
                    && a.ring_damping == b.ring_damping
                    && a.level_offset_v == b.level_offset_v
                    && a.jitter_std_s == b.jitter_std_s
                    && a.noise_std_v == b.noise_std_v;
                assert!(!same, "{} and {}", a.ecu_id, b.ecu_id);
            }
        }
    }

    #[test]
    fn segmentation_errors() {
        let flat = Waveform::new(vec![0.0; 100], 10e6);
        assert!(matches!(
            segment_from_first_edge(&flat, 1.0, 40, 4, None),
            Err(SimError::NoDominantEdge)
        ));
        let mut late = vec![0.0; 100];
        late[90] = 2.0;
        assert!(matches!(
            segment_from_first_edge(&Waveform::new(late, 10e6), 1.0, 40, 4, None),
            Err(SimError::CaptureTooShort { .. })
        ));
    }
}
