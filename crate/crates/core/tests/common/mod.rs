//! Reference implementations used to check the library.
//!
//! Each routine computes the same quantity as a library function by a
//! different and deliberately naive route.

#![allow(dead_code)]

use std::f64::consts::PI;

use canprint_core::dataset::LabeledDataset;
use canprint_core::mlp::{loss_and_gradient, MlpModel};

/// CAN CRC-15 by polynomial long division: append 15 zero bits, then XOR the
/// 16-bit generator `x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1` under
/// every leading one.
pub fn crc15_long_division(bits: &[bool]) -> u16 {
    const GENERATOR: [bool; 16] = {
        let mut g = [false; 16];
        let poly: u32 = 0xC599;
        let mut i = 0;
        while i < 16 {
            g[i] = (poly >> (15 - i)) & 1 == 1;
            i += 1;
        }
        g
    };
    let mut work: Vec<bool> = bits.to_vec();
    work.extend(std::iter::repeat_n(false, 15));
    for i in 0..bits.len() {
        if work[i] {
            for (j, &g) in GENERATOR.iter().enumerate() {
                work[i + j] ^= g;
            }
        }
    }
    work[bits.len()..]
        .iter()
        .fold(0u16, |acc, &b| (acc << 1) | b as u16)
}

/// Removes the bit that follows every run of five identical bits.
pub fn unstuff(bits: &[bool]) -> Vec<bool> {
    let mut out = Vec::new();
    let mut i = 0;
    let mut run = 0;
    let mut prev = None;
    while i < bits.len() {
        let b = bits[i];
        out.push(b);
        run = if prev == Some(b) { run + 1 } else { 1 };
        prev = Some(b);
        i += 1;
        if run == 5 {
            // skip the complementary stuff bit, which starts a new run
            if i < bits.len() {
                prev = Some(bits[i]);
                run = 1;
            }
            i += 1;
        }
    }
    out
}

pub fn longest_run(bits: &[bool]) -> usize {
    let mut best = 0;
    let mut i = 0;
    while i < bits.len() {
        let mut j = i;
        while j < bits.len() && bits[j] == bits[i] {
            j += 1;
        }
        best = best.max(j - i);
        i = j;
    }
    best
}

/// Causal same-length convolution by scattering each input sample.
pub fn convolve_scatter(h: &[f64], s: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; s.len()];
    for (n, &sn) in s.iter().enumerate() {
        for (k, &hk) in h.iter().enumerate() {
            if n + k < y.len() {
                y[n + k] += hk * sn;
            }
        }
    }
    y
}

/// One-sided DFT magnitude by direct summation, bins `0..=N/2`.
pub fn dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let phase = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// The 11 features, in library order, from their textbook definitions.
pub fn features(x: &[f64], fs: f64) -> [f64; 11] {
    let n = x.len() as f64;
    let mut max = x[0];
    let mut min = x[0];
    let mut sum = 0.0;
    for &v in x {
        if v > max {
            max = v;
        }
        if v < min {
            min = v;
        }
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for &v in x {
        ss += (v - mean).powi(2);
    }
    let var = ss / (n - 1.0);
    let sigma = (ss / n).sqrt();
    let mut skew = 0.0;
    let mut kurt = 0.0;
    for &v in x {
        let z = (v - mean) / sigma;
        skew += z.powi(3);
        kurt += z.powi(4);
    }
    let skew = skew / n;
    let kurt = kurt / n - 3.0;

    let mag = dft_magnitude(x);
    let freq: Vec<f64> = (0..mag.len()).map(|k| k as f64 * fs / n).collect();
    let total: f64 = mag.iter().sum();
    let mut c = 0.0;
    for k in 0..mag.len() {
        c += freq[k] * mag[k];
    }
    let c = c / total;
    let mut m2 = 0.0;
    for k in 0..mag.len() {
        m2 += (freq[k] - c).powi(2) * mag[k];
    }
    let sd = (m2 / total).sqrt();
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for k in 0..mag.len() {
        m3 += ((freq[k] - c) / sd).powi(3) * mag[k];
        m4 += ((freq[k] - c) / sd).powi(4) * mag[k];
    }
    let mut ik = 0.0;
    for i in 1..mag.len() - 1 {
        ik += (mag[i] - (mag[i - 1] + mag[i] + mag[i + 1]) / 3.0).abs();
    }
    [max, min, mean, var, skew, kurt, sd, m3 / total, m4 / total - 3.0, c, ik]
}

/// `sum |x|^2` against the one-sided spectrum energy; returns both sides.
pub fn parseval_sides(x: &[f64], mag: &[f64]) -> (f64, f64) {
    let n = x.len();
    let time: f64 = x.iter().map(|v| v * v).sum();
    let mut freq = mag[0] * mag[0];
    for (k, m) in mag.iter().enumerate().skip(1) {
        let doubled = !(n.is_multiple_of(2) && k == n / 2);
        freq += if doubled { 2.0 } else { 1.0 } * m * m;
    }
    (time, freq / n as f64)
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Largest violation of the gradient tolerance over all parameters, as the
/// ratio of the error to its allowance (pass when <= 1).
pub fn gradient_check(model: &MlpModel, data: &LabeledDataset, step: f64, rel: f64, abs: f64) -> f64 {
    let (_, analytic) = loss_and_gradient(model, data).expect("valid model and data");
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let w = model.params()[i];
        probe.params_mut()[i] = w + step;
        let (up, _) = loss_and_gradient(&probe, data).unwrap();
        probe.params_mut()[i] = w - step;
        let (down, _) = loss_and_gradient(&probe, data).unwrap();
        probe.params_mut()[i] = w;
        let numeric = (up - down) / (2.0 * step);
        let allowance = (rel * a.abs().max(numeric.abs())).max(abs);
        worst = worst.max((a - numeric).abs() / allowance);
    }
    worst
}
