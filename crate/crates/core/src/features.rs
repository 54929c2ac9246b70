//! The 11 time- and frequency-domain statistics computed per record.
//!
//! Time domain: extrema, mean, unbiased variance, and the standardized third
//! and fourth moments (population sigma). Frequency domain: the magnitude
//! weighted centroid, spread, skewness and kurtosis of the one-sided DFT
//! magnitude, plus irregularity-K over interior bins.
//!
//! Skewness and kurtosis are undefined on zero-spread inputs; those report 0
//! and raise a `degenerate` flag instead of producing NaN.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::Waveform;

pub const MIN_SPECTRUM_LEN: usize = 8;
pub const FEATURE_COUNT: usize = 11;

/// Column names in feature-vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "max_v",
    "min_v",
    "mean_v",
    "variance_v2",
    "skewness",
    "excess_kurtosis",
    "spec_std_hz",
    "spec_skewness",
    "spec_kurtosis",
    "spec_centroid_hz",
    "irregularity_k",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("window of {got} samples is shorter than {min}")]
    TooShort { got: usize, min: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate {0} Hz is not positive")]
    BadSampleRate(f64),
    #[error("spectrum has no energy")]
    ZeroSpectrum,
    #[error("spectrum frequency and magnitude vectors differ in length ({0} vs {1})")]
    SpectrumShape(usize, usize),
}

/// One-sided DFT magnitude, DC through Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub y_f: Vec<f64>,
    pub y_m: Vec<f64>,
}

fn check_finite(samples: &[f64]) -> Result<(), FeatureError> {
    match samples.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FeatureError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Magnitude of the rectangular-window DFT; bin `k` sits at `k * fs / N`.
pub fn magnitude_spectrum(samples: &[f64], sample_rate_hz: f64) -> Result<Spectrum, FeatureError> {
    let n = samples.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(FeatureError::TooShort {
            got: n,
            min: MIN_SPECTRUM_LEN,
        });
    }
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(FeatureError::BadSampleRate(sample_rate_hz));
    }
    check_finite(samples)?;

    let bins = n / 2 + 1;
    let y_f = (0..bins).map(|k| k as f64 * sample_rate_hz / n as f64).collect();

    // A constant window is an exact DC point mass; the FFT would leave
    // rounding residue in the other bins.
    if samples.iter().all(|&v| v == samples[0]) {
        let mut y_m = vec![0.0; bins];
        y_m[0] = n as f64 * samples[0].abs();
        return Ok(Spectrum { y_f, y_m });
    }

    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let y_m = buf[..bins].iter().map(|c| c.norm()).collect();
    Ok(Spectrum { y_f, y_m })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub max_v: f64,
    pub min_v: f64,
    pub mean_v: f64,
    pub variance_v2: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub degenerate: bool,
}

pub fn time_features(samples: &[f64]) -> Result<TimeFeatures, FeatureError> {
    let n = samples.len();
    if n < 2 {
        return Err(FeatureError::TooShort { got: n, min: 2 });
    }
    check_finite(samples)?;
    let max_v = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_v = samples.iter().copied().fold(f64::INFINITY, f64::min);
    if max_v == min_v {
        return Ok(TimeFeatures {
            max_v,
            min_v,
            mean_v: max_v,
            variance_v2: 0.0,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            degenerate: true,
        });
    }

    let nf = n as f64;
    // rounding can push the mean a hair outside [min, max]
    let mean_v = (samples.iter().sum::<f64>() / nf).clamp(min_v, max_v);
    let (m2, m3, m4) = samples.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &y| {
        let d = y - mean_v;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    let variance_v2 = m2 / (nf - 1.0);
    let sigma = (m2 / nf).sqrt();
    if !(sigma > 0.0) {
        return Ok(TimeFeatures {
            max_v,
            min_v,
            mean_v,
            variance_v2,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            degenerate: true,
        });
    }
    Ok(TimeFeatures {
        max_v,
        min_v,
        mean_v,
        variance_v2,
        skewness: m3 / nf / sigma.powi(3),
        excess_kurtosis: m4 / nf / sigma.powi(4) - 3.0,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFeatures {
    pub spec_centroid_hz: f64,
    pub spec_std_hz: f64,
    pub spec_skewness: f64,
    pub spec_kurtosis: f64,
    pub irregularity_k: f64,
    pub degenerate: bool,
}

pub fn spectral_features(sp: &Spectrum) -> Result<SpectralFeatures, FeatureError> {
    let (f, m) = (&sp.y_f, &sp.y_m);
    if f.len() != m.len() {
        return Err(FeatureError::SpectrumShape(f.len(), m.len()));
    }
    check_finite(f)?;
    check_finite(m)?;
    let total: f64 = m.iter().sum();
    if !(total > 0.0) {
        return Err(FeatureError::ZeroSpectrum);
    }

    let centroid = f.iter().zip(m).map(|(fi, mi)| fi * mi).sum::<f64>() / total;
    let (m2, m3, m4) = f.iter().zip(m).fold((0.0, 0.0, 0.0), |(a, b, c), (fi, mi)| {
        let d = fi - centroid;
        let d2 = d * d;
        (a + d2 * mi, b + d2 * d * mi, c + d2 * d2 * mi)
    });
    let spread = (m2 / total).sqrt();

    let irregularity_k = m
        .windows(3)
        .map(|w| (w[1] - (w[0] + w[1] + w[2]) / 3.0).abs())
        .sum();

    let f_top = f.last().copied().unwrap_or(0.0).abs();
    let degenerate = !(spread > 1e-12 * f_top);
    let (spec_skewness, spec_kurtosis) = if degenerate {
        (0.0, 0.0)
    } else {
        (m3 / (spread.powi(3) * total), m4 / (spread.powi(4) * total) - 3.0)
    };
    Ok(SpectralFeatures {
        spec_centroid_hz: centroid,
        spec_std_hz: spread,
        spec_skewness,
        spec_kurtosis,
        irregularity_k,
        degenerate,
    })
}

/// The fingerprint of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_v: f64,
    pub min_v: f64,
    pub mean_v: f64,
    pub variance_v2: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub spec_std_hz: f64,
    pub spec_skewness: f64,
    pub spec_kurtosis: f64,
    pub spec_centroid_hz: f64,
    pub irregularity_k: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.max_v,
            self.min_v,
            self.mean_v,
            self.variance_v2,
            self.skewness,
            self.excess_kurtosis,
            self.spec_std_hz,
            self.spec_skewness,
            self.spec_kurtosis,
            self.spec_centroid_hz,
            self.irregularity_k,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            max_v: a[0],
            min_v: a[1],
            mean_v: a[2],
            variance_v2: a[3],
            skewness: a[4],
            excess_kurtosis: a[5],
            spec_std_hz: a[6],
            spec_skewness: a[7],
            spec_kurtosis: a[8],
            spec_centroid_hz: a[9],
            irregularity_k: a[10],
        }
    }
}

/// A feature vector with its degenerate-statistics warnings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extracted {
    pub vector: FeatureVector,
    pub time_degenerate: bool,
    pub spectral_degenerate: bool,
}

impl Extracted {
    pub fn has_warning(&self) -> bool {
        self.time_degenerate || self.spectral_degenerate
    }
}

pub fn extract_samples(samples: &[f64], sample_rate_hz: f64) -> Result<Extracted, FeatureError> {
    let t = time_features(samples)?;
    let s = spectral_features(&magnitude_spectrum(samples, sample_rate_hz)?)?;
    Ok(Extracted {
        vector: FeatureVector {
            max_v: t.max_v,
            min_v: t.min_v,
            mean_v: t.mean_v,
            variance_v2: t.variance_v2,
            skewness: t.skewness,
            excess_kurtosis: t.excess_kurtosis,
            spec_std_hz: s.spec_std_hz,
            spec_skewness: s.spec_skewness,
            spec_kurtosis: s.spec_kurtosis,
            spec_centroid_hz: s.spec_centroid_hz,
            irregularity_k: s.irregularity_k,
        },
        time_degenerate: t.degenerate,
        spectral_degenerate: s.degenerate,
    })
}

pub fn extract(w: &Waveform) -> Result<Extracted, FeatureError> {
    extract_samples(&w.samples, w.sample_rate_hz)
}
