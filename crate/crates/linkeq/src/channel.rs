//! Channel models: FIR convolution, synthetic lossy impulse responses and
//! additive Gaussian noise.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::signal::Waveform;

/// Discrete-time channel impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    /// Seconds between taps.
    pub tap_period: f64,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, tap_period: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("impulse response needs at least one tap"));
        }
        if !tap_period.is_finite() || tap_period <= 0.0 {
            return Err(Error::config(format!(
                "tap period must be positive, got {tap_period}"
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::data("impulse response taps must be finite"));
        }
        if taps.iter().map(|t| t * t).sum::<f64>() <= 0.0 {
            return Err(Error::config("impulse response must carry nonzero energy"));
        }
        Ok(Self { taps, tap_period })
    }

    /// Re-express the response on a finer sample grid by placing each tap on
    /// its exact time instant (sparse expansion). The target period must
    /// divide the tap period by an integer factor.
    pub fn expand_to(&self, sample_period: f64) -> Result<ImpulseResponse> {
        let ratio = self.tap_period / sample_period;
        let rounded = ratio.round();
        if (ratio - rounded).abs() > 1e-6 * ratio || rounded < 1.0 {
            return Err(Error::config(format!(
                "tap period {} is not an integer multiple of target period {}",
                self.tap_period, sample_period
            )));
        }
        let stride = rounded as usize;
        if stride == 1 {
            return Ok(self.clone());
        }
        let mut taps = vec![0.0; (self.taps.len() - 1) * stride + 1];
        for (j, &t) in self.taps.iter().enumerate() {
            taps[j * stride] = t;
        }
        ImpulseResponse::new(taps, sample_period)
    }
}

/// Causal zero-padded convolution shared by the channel model, the FFE and
/// the equalizer post-filter: `out[k] = sum_j taps[j] * x[k - j]`.
pub(crate) fn convolve_causal(samples: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; samples.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &t) in taps.iter().enumerate() {
            if j > k {
                break;
            }
            acc += t * samples[k - j];
        }
        *o = acc;
    }
    out
}

/// Pass a waveform through a channel. Output has the input's length; the
/// response must already be sampled at the waveform's period.
pub fn apply_channel(w: &Waveform, h: &ImpulseResponse) -> Result<Waveform> {
    let rel = (h.tap_period - w.sample_period).abs() / w.sample_period;
    if rel > 1e-9 {
        return Err(Error::config(format!(
            "channel tap period ({}) does not match waveform sample period ({}); resample first",
            h.tap_period, w.sample_period
        )));
    }
    Waveform::new(convolve_causal(&w.samples, &h.taps), w.sample_period)
}

/// Add independent Gaussian noise of standard deviation `sigma`.
///
/// `sigma == 0` returns the input bit-for-bit; fixed seeds replay exactly.
pub fn add_awgn(w: &Waveform, sigma: f64, seed: u64) -> Result<Waveform> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::config(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = SeededRng::new(seed);
    let samples = w.samples.iter().map(|&v| v + sigma * rng.gauss()).collect();
    Waveform::new(samples, w.sample_period)
}

/// Synthesize a lossy channel: geometric tail `(1 - decay) * decay^j` plus an
/// optional delayed copy scaled by `echo_gain`, modeling one reflection.
pub fn synth_lossy_channel(
    decay: f64,
    echo_delay_taps: usize,
    echo_gain: f64,
    length: usize,
    tap_period: f64,
) -> Result<ImpulseResponse> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::config(format!(
            "decay must be in (0, 1), got {decay}"
        )));
    }
    if !echo_gain.is_finite() || echo_gain.abs() >= 1.0 {
        return Err(Error::config(format!(
            "|echo_gain| must be < 1, got {echo_gain}"
        )));
    }
    if length == 0 {
        return Err(Error::config("channel length must be >= 1"));
    }
    let base = 1.0 - decay;
    let mut taps = vec![0.0; length];
    for (j, tap) in taps.iter_mut().enumerate() {
        *tap = base * decay.powi(j as i32);
        if echo_gain != 0.0 && j >= echo_delay_taps {
            *tap += echo_gain * base * decay.powi((j - echo_delay_taps) as i32);
        }
    }
    ImpulseResponse::new(taps, tap_period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 1e-12).unwrap()
    }

    #[test]
    fn identity_channel_is_exact() {
        let w = wave(vec![0.3, -1.2, 4.5, 0.0]);
        let h = ImpulseResponse::new(vec![1.0], 1e-12).unwrap();
        assert_eq!(apply_channel(&w, &h).unwrap().samples, w.samples);
    }

    #[test]
    fn hand_convolution() {
        let w = wave(vec![1.0, 0.0, 0.0]);
        let h = ImpulseResponse::new(vec![0.5, 0.5], 1e-12).unwrap();
        assert_eq!(apply_channel(&w, &h).unwrap().samples, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn unit_impulse_reproduces_taps() {
        let h = ImpulseResponse::new(vec![0.7, -0.2, 0.1], 1e-12).unwrap();
        let mut input = vec![0.0; 5];
        input[0] = 1.0;
        let out = apply_channel(&wave(input), &h).unwrap();
        assert_eq!(&out.samples[..3], h.taps.as_slice());
        assert_eq!(&out.samples[3..], &[0.0, 0.0]);
    }

    #[test]
    fn period_mismatch_rejected() {
        let w = wave(vec![1.0, 2.0]);
        let h = ImpulseResponse::new(vec![1.0], 2e-12).unwrap();
        assert!(apply_channel(&w, &h).is_err());
    }

    #[test]
    fn awgn_sigma_zero_is_identity() {
        let w = wave(vec![0.1, 0.2, 0.3]);
        let out = add_awgn(&w, 0.0, 99).unwrap();
        assert_eq!(out.samples, w.samples);
    }

    #[test]
    fn awgn_seed_determinism() {
        let w = wave(vec![0.0; 64]);
        let a = add_awgn(&w, 0.5, 7).unwrap();
        let b = add_awgn(&w, 0.5, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = add_awgn(&w, 0.5, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn awgn_sample_std_within_chi_square_bound() {
        let n = 100_000;
        let w = wave(vec![0.0; n]);
        let out = add_awgn(&w, 0.1, 12345).unwrap();
        let mean = out.samples.iter().sum::<f64>() / n as f64;
        let var = out
            .samples
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        assert!((0.097..=0.103).contains(&std), "sample std {std}");
    }

    #[test]
    fn awgn_rejects_negative_sigma() {
        assert!(add_awgn(&wave(vec![0.0]), -0.1, 0).is_err());
    }

    #[test]
    fn synth_channel_closed_forms() {
        // Near-lossless limit.
        let h = synth_lossy_channel(1e-9, 0, 0.0, 4, 1e-12).unwrap();
        assert!((h.taps[0] - 1.0).abs() < 1e-8);
        assert!(h.taps[1].abs() < 1e-8);

        let h = synth_lossy_channel(0.5, 0, 0.0, 3, 1e-12).unwrap();
        assert_eq!(h.taps, vec![0.5, 0.25, 0.125]);

        let h = synth_lossy_channel(0.5, 2, 0.2, 3, 1e-12).unwrap();
        assert_eq!(h.taps, vec![0.5, 0.25, 0.125 + 0.1]);
    }

    #[test]
    fn synth_channel_rejects_bad_parameters() {
        assert!(synth_lossy_channel(0.0, 0, 0.0, 3, 1e-12).is_err());
        assert!(synth_lossy_channel(1.0, 0, 0.0, 3, 1e-12).is_err());
        assert!(synth_lossy_channel(0.5, 0, 1.0, 3, 1e-12).is_err());
        assert!(synth_lossy_channel(0.5, 0, 0.0, 0, 1e-12).is_err());
    }

    #[test]
    fn sparse_expansion_places_taps_on_grid() {
        let h = ImpulseResponse::new(vec![1.0, 0.5], 4e-12).unwrap();
        let e = h.expand_to(1e-12).unwrap();
        assert_eq!(e.taps, vec![1.0, 0.0, 0.0, 0.0, 0.5]);
        assert!(h.expand_to(3e-12).is_err());
    }

    proptest! {
        #[test]
        fn channel_is_linear(
            x in prop::collection::vec(-5.0f64..5.0, 8..40),
            y in prop::collection::vec(-5.0f64..5.0, 8..40),
            taps in prop::collection::vec(-1.0f64..1.0, 1..6),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            prop_assume!(taps.iter().map(|t| t * t).sum::<f64>() > 1e-12);
            let n = x.len().min(y.len());
            let h = ImpulseResponse::new(taps, 1e-12).unwrap();
            let xv = wave(x[..n].to_vec());
            let yv = wave(y[..n].to_vec());
            let combo = wave((0..n).map(|i| a * xv.samples[i] + b * yv.samples[i]).collect());
            let lhs = apply_channel(&combo, &h).unwrap();
            let fx = apply_channel(&xv, &h).unwrap();
            let fy = apply_channel(&yv, &h).unwrap();
            for i in 0..n {
                let rhs = a * fx.samples[i] + b * fy.samples[i];
                let scale = rhs.abs().max(1.0);
                prop_assert!((lhs.samples[i] - rhs).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn awgn_zero_sigma_bit_identical(x in prop::collection::vec(-5.0f64..5.0, 1..50), seed in any::<u64>()) {
            let w = wave(x);
            let out = add_awgn(&w, 0.0, seed).unwrap();
            for (a, b) in out.samples.iter().zip(&w.samples) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
