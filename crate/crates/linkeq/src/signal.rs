//! Bit sources, NRZ modulation, resampling and the receive-side delay line.
//!
//! Everything here is purely functional over caller-owned state: the same
//! `(seed, count, kind)` always produces the same bits, and the delay line
//! is an explicit value the caller threads through the stream loop.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// An ordered sequence of logical bits (each exactly 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    bits: Vec<u8>,
}

impl BitStream {
    /// Wrap a bit vector, rejecting anything that is not 0 or 1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::data("bit stream must contain at least one bit"));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::data(format!(
                "bit stream element {pos} is {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Count of 1 bits.
    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

impl std::ops::Index<usize> for BitStream {
    type Output = u8;
    fn index(&self, i: usize) -> &u8 {
        &self.bits[i]
    }
}

/// A uniformly sampled analog signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    /// Seconds between consecutive samples; always > 0.
    pub sample_period: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_period: f64) -> Result<Self> {
        if !sample_period.is_finite() || sample_period <= 0.0 {
            return Err(Error::config(format!(
                "sample period must be positive and finite, got {sample_period}"
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("sample {pos} is not finite")));
        }
        Ok(Self {
            samples,
            sample_period,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Serial-in parallel-out buffer holding the `depth` most recent samples.
///
/// Register 0 is the newest sample; registers are zero until pushed over.
#[derive(Debug, Clone)]
pub struct DelayLine {
    registers: Vec<f64>,
}

impl DelayLine {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("delay line depth must be >= 1"));
        }
        Ok(Self {
            registers: vec![0.0; depth],
        })
    }

    pub fn depth(&self) -> usize {
        self.registers.len()
    }

    /// Shift in one sample and return the register contents, newest first.
    pub fn push(&mut self, sample: f64) -> &[f64] {
        self.registers.rotate_right(1);
        self.registers[0] = sample;
        &self.registers
    }

    /// Current register contents without pushing.
    pub fn registers(&self) -> &[f64] {
        &self.registers
    }
}

/// Physical-layer parameters of one simulated link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    /// Transmitted bits per second.
    pub bit_rate: f64,
    /// Simulation samples per bit interval (>= 2).
    pub samples_per_bit: usize,
    /// Logic-high amplitude in volts.
    pub high_level: f64,
    /// Logic-low amplitude in volts.
    pub low_level: f64,
    /// Samples spent ramping low -> high at a rising transition.
    pub rise_samples: usize,
    /// Samples spent ramping high -> low at a falling transition.
    pub fall_samples: usize,
    /// Depth n of the receive delay line (equalizer input width).
    pub delay_depth: usize,
    /// Seconds between equalizer clock ticks.
    pub delay_resolution: f64,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.bit_rate.is_finite() || self.bit_rate <= 0.0 {
            return Err(Error::config(format!(
                "bit rate must be positive, got {}",
                self.bit_rate
            )));
        }
        if self.samples_per_bit < 2 {
            return Err(Error::config(format!(
                "samples_per_bit must be >= 2, got {}",
                self.samples_per_bit
            )));
        }
        if self.rise_samples + self.fall_samples > self.samples_per_bit {
            return Err(Error::config(format!(
                "rise ({}) + fall ({}) samples exceed samples_per_bit ({})",
                self.rise_samples, self.fall_samples, self.samples_per_bit
            )));
        }
        if !(self.high_level.is_finite() && self.low_level.is_finite())
            || self.high_level <= self.low_level
        {
            return Err(Error::config(format!(
                "high_level ({}) must exceed low_level ({})",
                self.high_level, self.low_level
            )));
        }
        if self.delay_depth == 0 {
            return Err(Error::config("delay_depth must be >= 1"));
        }
        if !self.delay_resolution.is_finite() || self.delay_resolution <= 0.0 {
            return Err(Error::config(format!(
                "delay_resolution must be positive, got {}",
                self.delay_resolution
            )));
        }
        Ok(())
    }

    /// Seconds per modulation sample.
    pub fn sample_period(&self) -> f64 {
        1.0 / (self.bit_rate * self.samples_per_bit as f64)
    }

    /// Seconds per bit.
    pub fn bit_period(&self) -> f64 {
        1.0 / self.bit_rate
    }

    /// Slicer threshold between the two logic levels.
    pub fn mid_level(&self) -> f64 {
        0.5 * (self.high_level + self.low_level)
    }

    /// Amplitude of the given bit.
    pub fn level(&self, bit: u8) -> f64 {
        if bit == 1 {
            self.high_level
        } else {
            self.low_level
        }
    }

    /// Modulation samples per equalizer tick (delay_resolution / sample_period).
    ///
    /// Errors unless the tick period is an integer number of samples that
    /// divides the bit interval, so bit centers land on ticks.
    pub fn tick_period_samples(&self) -> Result<usize> {
        let ratio = self.delay_resolution / self.sample_period();
        let rounded = ratio.round();
        if (ratio - rounded).abs() > 1e-6 * ratio.abs() || rounded < 1.0 {
            return Err(Error::config(format!(
                "delay_resolution ({}) must be an integer multiple of the sample period ({})",
                self.delay_resolution,
                self.sample_period()
            )));
        }
        let period = rounded as usize;
        if !self.samples_per_bit.is_multiple_of(period) {
            return Err(Error::config(format!(
                "tick period ({period} samples) must divide samples_per_bit ({})",
                self.samples_per_bit
            )));
        }
        Ok(period)
    }

    /// Equalizer ticks per bit interval.
    pub fn ticks_per_bit(&self) -> Result<usize> {
        Ok(self.samples_per_bit / self.tick_period_samples()?)
    }
}

/// How to generate a transmit bit pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BitKind {
    /// Independent draws, 1 with probability `p`.
    Bernoulli(f64),
    /// Pseudo-random binary sequence from x^7 + x^6 + 1.
    Prbs7,
    /// Pseudo-random binary sequence from x^15 + x^14 + 1.
    Prbs15,
}

/// Generate `count` bits deterministically from `(seed, kind)`.
pub fn generate_bits(seed: u64, count: usize, kind: BitKind) -> Result<BitStream> {
    if count == 0 {
        return Err(Error::config("bit count must be >= 1"));
    }
    let bits = match kind {
        BitKind::Bernoulli(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!(
                    "Bernoulli probability must be in [0, 1], got {p}"
                )));
            }
            let mut rng = SeededRng::new(seed);
            (0..count).map(|_| u8::from(rng.bernoulli(p))).collect()
        }
        BitKind::Prbs7 => lfsr_bits(seed, count, 7),
        BitKind::Prbs15 => lfsr_bits(seed, count, 15),
    };
    BitStream::new(bits)
}

/// Fibonacci LFSR for x^m + x^(m-1) + 1: s[k] = s[k-1] XOR s[k-m].
///
/// State bit 0 holds s[k-1] (newest), bit m-1 holds s[k-m]. Any seed maps
/// to a non-zero state, so every call emits the maximal-length sequence.
fn lfsr_bits(seed: u64, count: usize, order: u32) -> Vec<u8> {
    let mask = (1u64 << order) - 1;
    let mut state = (seed % mask) + 1; // 1 ..= 2^order - 1
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let newest = state & 1;
        let oldest = (state >> (order - 1)) & 1;
        let bit = newest ^ oldest;
        state = ((state << 1) | bit) & mask;
        out.push(bit as u8);
    }
    out
}

/// Shape a bit stream into an NRZ waveform with trapezoidal edges.
///
/// Each bit occupies `samples_per_bit` samples. When the level changes at a
/// bit boundary, the first `rise_samples` (or `fall_samples`) samples of the
/// new bit ramp linearly and reach the target level exactly at the end of
/// the ramp; all remaining samples sit at the level exactly. The first bit
/// starts flat (no idle-state transition is modeled).
pub fn modulate_nrz(bits: &BitStream, cfg: &LinkConfig) -> Result<Waveform> {
    cfg.validate()?;
    let spb = cfg.samples_per_bit;
    let mut samples = Vec::with_capacity(bits.len() * spb);
    let mut prev_level = None;
    for &bit in bits.bits() {
        let level = cfg.level(bit);
        let (ramp_from, ramp_len) = match prev_level {
            Some(p) if p != level => {
                let len = if level > p {
                    cfg.rise_samples
                } else {
                    cfg.fall_samples
                };
                (p, len)
            }
            _ => (level, 0),
        };
        for j in 0..spb {
            if j < ramp_len {
                let frac = (j + 1) as f64 / ramp_len as f64;
                samples.push(ramp_from + (level - ramp_from) * frac);
            } else {
                samples.push(level);
            }
        }
        prev_level = Some(level);
    }
    Waveform::new(samples, cfg.sample_period())
}

/// Keep every `period`-th sample starting at `phase_offset`.
pub fn sample_and_hold(w: &Waveform, phase_offset: usize, period: usize) -> Result<Waveform> {
    if period == 0 || period > w.len() {
        return Err(Error::config(format!(
            "sample-and-hold period must be in 1..={}, got {period}",
            w.len()
        )));
    }
    if phase_offset >= period {
        return Err(Error::config(format!(
            "phase offset ({phase_offset}) must be < period ({period})"
        )));
    }
    let samples: Vec<f64> = w.samples[phase_offset..]
        .iter()
        .step_by(period)
        .copied()
        .collect();
    Waveform::new(samples, period as f64 * w.sample_period)
}

/// Slice a waveform to bits at bit centers.
///
/// `ticks_per_bit` is the number of input samples per bit; the decision
/// sample of bit `b` is index `b * ticks_per_bit + ticks_per_bit / 2`.
/// A sample at or above `threshold` decides 1.
pub fn slice_bits(w: &Waveform, ticks_per_bit: usize, threshold: f64) -> Result<BitStream> {
    if ticks_per_bit == 0 {
        return Err(Error::config("ticks_per_bit must be >= 1"));
    }
    let nbits = w.len() / ticks_per_bit;
    if nbits == 0 {
        return Err(Error::data("waveform shorter than one bit interval"));
    }
    let mid = ticks_per_bit / 2;
    let bits = (0..nbits)
        .map(|b| u8::from(w.samples[b * ticks_per_bit + mid] >= threshold))
        .collect();
    BitStream::new(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_cfg(spb: usize, rise: usize, fall: usize) -> LinkConfig {
        LinkConfig {
            bit_rate: 20e9,
            samples_per_bit: spb,
            high_level: 1.0,
            low_level: 0.0,
            rise_samples: rise,
            fall_samples: fall,
            delay_depth: 8,
            delay_resolution: 1.0 / 20e9 / spb as f64,
        }
    }

    #[test]
    fn bernoulli_degenerate_probabilities() {
        let ones = generate_bits(7, 4, BitKind::Bernoulli(1.0)).unwrap();
        assert_eq!(ones.bits(), &[1, 1, 1, 1]);
        let zeros = generate_bits(7, 4, BitKind::Bernoulli(0.0)).unwrap();
        assert_eq!(zeros.bits(), &[0, 0, 0, 0]);
    }

    #[test]
    fn bernoulli_rejects_bad_probability() {
        assert!(generate_bits(1, 4, BitKind::Bernoulli(1.5)).is_err());
        assert!(generate_bits(1, 0, BitKind::Bernoulli(0.5)).is_err());
    }

    /// Independent PRBS oracle: the recurrence s[k] = s[k-1] ^ s[k-m] run
    /// over an explicit history list instead of a packed register.
    fn prbs_oracle(seed: u64, count: usize, order: u32) -> Vec<u8> {
        let mask = (1u64 << order) - 1;
        let state = (seed % mask) + 1;
        // history[i] = s[k - 1 - i] going in; bit i of state.
        let mut history: Vec<u8> = (0..order).map(|i| ((state >> i) & 1) as u8).collect();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let bit = history[0] ^ history[order as usize - 1];
            out.push(bit);
            history.rotate_right(1);
            history[0] = bit;
        }
        out
    }

    #[test]
    fn prbs7_full_period_is_balanced() {
        // One full period of a maximal length-7 LFSR: 64 ones, 63 zeros.
        for seed in [0, 1, 7, 126, u64::MAX] {
            let bits = generate_bits(seed, 127, BitKind::Prbs7).unwrap();
            assert_eq!(bits.ones(), 64, "seed {seed}");
            assert_eq!(bits.bits(), prbs_oracle(seed, 127, 7).as_slice());
        }
    }

    #[test]
    fn prbs7_recurrence_and_period() {
        let bits = generate_bits(3, 254, BitKind::Prbs7).unwrap();
        // Period exactly 127.
        assert_eq!(&bits.bits()[..127], &bits.bits()[127..]);
    }

    #[test]
    fn prbs15_matches_oracle() {
        let bits = generate_bits(11, 2000, BitKind::Prbs15).unwrap();
        assert_eq!(bits.bits(), prbs_oracle(11, 2000, 15).as_slice());
    }

    #[test]
    fn modulate_single_high_bit() {
        let cfg = test_cfg(4, 0, 0);
        let w = modulate_nrz(&BitStream::new(vec![1]).unwrap(), &cfg).unwrap();
        assert_eq!(w.samples, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn modulate_rising_ramp() {
        let cfg = test_cfg(4, 2, 2);
        let w = modulate_nrz(&BitStream::new(vec![0, 1]).unwrap(), &cfg).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn modulate_no_transition_stays_flat() {
        let cfg = test_cfg(8, 3, 3);
        let w = modulate_nrz(&BitStream::new(vec![1, 1]).unwrap(), &cfg).unwrap();
        assert!(w.samples.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sample_and_hold_examples() {
        let w = Waveform::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1e-12).unwrap();
        let a = sample_and_hold(&w, 0, 2).unwrap();
        assert_eq!(a.samples, vec![1.0, 3.0, 5.0]);
        assert!((a.sample_period - 2e-12).abs() < 1e-24);
        let b = sample_and_hold(&w, 1, 3).unwrap();
        assert_eq!(b.samples, vec![2.0, 5.0]);
        let id = sample_and_hold(&w, 0, 1).unwrap();
        assert_eq!(id.samples, w.samples);
        assert!(sample_and_hold(&w, 2, 2).is_err());
    }

    #[test]
    fn delay_line_examples() {
        let mut d = DelayLine::new(3).unwrap();
        assert_eq!(d.push(1.0), &[1.0, 0.0, 0.0]);
        d.push(2.0);
        assert_eq!(d.push(3.0), &[3.0, 2.0, 1.0]);
        d.push(4.0);
        assert_eq!(d.push(5.0), &[5.0, 4.0, 3.0]);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = test_cfg(4, 3, 2);
        assert!(cfg.validate().is_err()); // rise + fall > spb
        cfg.rise_samples = 1;
        cfg.fall_samples = 1;
        assert!(cfg.validate().is_ok());
        cfg.high_level = cfg.low_level;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tick_grid_must_divide_bit_interval() {
        // 8 samples/bit: 2 samples per tick works, 3 does not.
        let mut cfg = test_cfg(8, 1, 1);
        cfg.delay_resolution = 2.0 * cfg.sample_period();
        assert_eq!(cfg.ticks_per_bit().unwrap(), 4);
        cfg.delay_resolution = 3.0 * cfg.sample_period();
        assert!(cfg.tick_period_samples().is_err());
        // Sub-sample ticks are rejected too.
        cfg.delay_resolution = 0.4 * cfg.sample_period();
        assert!(cfg.tick_period_samples().is_err());
    }

    proptest! {
        #[test]
        fn generate_bits_is_pure(seed in any::<u64>(), count in 1usize..300) {
            let a = generate_bits(seed, count, BitKind::Bernoulli(0.5)).unwrap();
            let b = generate_bits(seed, count, BitKind::Bernoulli(0.5)).unwrap();
            prop_assert_eq!(a.bits(), b.bits());
            let p7a = generate_bits(seed, count, BitKind::Prbs7).unwrap();
            let p7b = generate_bits(seed, count, BitKind::Prbs7).unwrap();
            prop_assert_eq!(p7a.bits(), p7b.bits());
        }

        #[test]
        fn modulate_length_law(
            seed in any::<u64>(),
            nbits in 1usize..64,
            spb in 2usize..16,
            rise in 0usize..8,
            fall in 0usize..8,
        ) {
            prop_assume!(rise + fall <= spb);
            let cfg = test_cfg(spb, rise, fall);
            let bits = generate_bits(seed, nbits, BitKind::Bernoulli(0.5)).unwrap();
            let w = modulate_nrz(&bits, &cfg).unwrap();
            prop_assert_eq!(w.len(), nbits * spb);
        }

        #[test]
        fn mid_bit_resample_recovers_bits(
            seed in any::<u64>(),
            nbits in 1usize..64,
            spb in 2usize..16,
            rise in 0usize..8,
            fall in 0usize..8,
        ) {
            prop_assume!(rise + fall < spb);
            let cfg = test_cfg(spb, rise, fall);
            let bits = generate_bits(seed, nbits, BitKind::Bernoulli(0.5)).unwrap();
            let w = modulate_nrz(&bits, &cfg).unwrap();
            let centers = sample_and_hold(&w, spb / 2, spb).unwrap();
            let recovered = slice_bits(&centers, 1, cfg.mid_level()).unwrap();
            prop_assert_eq!(recovered.bits(), bits.bits());
        }

        #[test]
        fn delay_line_matches_list_model(samples in prop::collection::vec(-10.0f64..10.0, 1..80), depth in 1usize..12) {
            let mut line = DelayLine::new(depth).unwrap();
            let mut model: Vec<f64> = Vec::new();
            for &s in &samples {
                let snapshot = line.push(s).to_vec();
                model.insert(0, s);
                model.truncate(depth);
                let mut expect = model.clone();
                expect.resize(depth, 0.0);
                prop_assert_eq!(snapshot, expect);
            }
        }
    }
}
