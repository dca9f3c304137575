//! Eye diagrams, eye metrics and bit error rate.
//!
//! An eye histogram folds a waveform modulo `span_ui` unit intervals into a
//! phase/amplitude occupancy grid. Alongside the raster bins it keeps, per
//! phase column, running statistics of the samples classified high and low
//! against the configured mid-level, plus the sub-sample phases of every
//! mid-level crossing. The derived metrics are the standard ones:
//!
//! - eye height: inner opening at the center phase column between the low
//!   3-sigma edge of the high rail and the high 3-sigma edge of the low
//!   rail (negative when the rails overlap, i.e. the eye is closed);
//! - eye width: widest contiguous (circular) phase span with positive
//!   opening, as a fraction of one UI, capped at 1;
//! - rms jitter: standard deviation of the mid-level crossing phases folded
//!   into one UI, in UI.
//!
//! For noise-free rails the 3-sigma edges coincide with the extreme
//! samples, so the ideal NRZ eye measures exactly `high - low` by 1 UI.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{BitStream, LinkConfig, Waveform};

/// Amplitude resolution of the raster grid.
pub const AMP_BINS: usize = 256;

/// Running per-column statistics of one rail (samples above or below the
/// classification threshold).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RailStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
}

impl RailStats {
    fn push(&mut self, v: f64) {
        if self.count == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn std(&self) -> f64 {
        let mean = self.mean();
        (self.sum_sq / self.count as f64 - mean * mean)
            .max(0.0)
            .sqrt()
    }
}

/// Phase/amplitude occupancy map of a waveform folded over `span_ui` UIs.
#[derive(Debug, Clone)]
pub struct EyeHistogram {
    /// Occupancy counts, indexed `[phase][amplitude]`.
    pub bins: Vec<Vec<u64>>,
    /// Samples per unit interval.
    pub ui_samples: usize,
    /// Unit intervals per fold window.
    pub span_ui: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    pub total_count: u64,
    /// Classification threshold used for the rail statistics.
    pub threshold: f64,
    /// Per-column statistics of samples at or above the threshold.
    pub high_rail: Vec<RailStats>,
    /// Per-column statistics of samples below the threshold.
    pub low_rail: Vec<RailStats>,
    /// Mid-level crossing phases folded into [0, 1) UI.
    pub crossing_phases_ui: Vec<f64>,
}

impl EyeHistogram {
    /// Number of phase columns (`ui_samples * span_ui`).
    pub fn phase_bins(&self) -> usize {
        self.ui_samples * self.span_ui
    }
}

/// Phase offset that folds a bit-center sample onto the center column,
/// where the eye metrics are read.
pub fn centered_phase_offset(ui_samples: usize, span_ui: usize) -> usize {
    let window = ui_samples * span_ui;
    (ui_samples / 2 + window - window / 2) % window
}

/// Fold a waveform into an eye histogram.
///
/// `phase_offset` rotates the folding so that sample `phase_offset` lands
/// in column 0. The amplitude range is the data range padded by 5%; every
/// sample lands in exactly one bin.
pub fn accumulate_eye(
    w: &Waveform,
    cfg: &LinkConfig,
    phase_offset: usize,
    span_ui: usize,
) -> Result<EyeHistogram> {
    cfg.validate()?;
    if span_ui == 0 {
        return Err(Error::config("span_ui must be >= 1"));
    }
    let ratio = cfg.bit_period() / w.sample_period;
    let ui_samples = ratio.round();
    if (ratio - ui_samples).abs() > 1e-6 * ratio || ui_samples < 1.0 {
        return Err(Error::config(format!(
            "bit period ({}) is not an integer number of samples ({})",
            cfg.bit_period(),
            w.sample_period
        )));
    }
    let ui_samples = ui_samples as usize;
    if w.len() < ui_samples {
        return Err(Error::data("waveform shorter than one unit interval"));
    }
    let window = ui_samples * span_ui;

    let (lo, hi) = w
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (amp_min, amp_max) = if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    };

    let threshold = cfg.mid_level();
    let mut h = EyeHistogram {
        bins: vec![vec![0u64; AMP_BINS]; window],
        ui_samples,
        span_ui,
        amp_min,
        amp_max,
        total_count: 0,
        threshold,
        high_rail: vec![RailStats::default(); window],
        low_rail: vec![RailStats::default(); window],
        crossing_phases_ui: Vec::new(),
    };

    let amp_span = amp_max - amp_min;
    for (k, &v) in w.samples.iter().enumerate() {
        let col = (k as i64 - phase_offset as i64).rem_euclid(window as i64) as usize;
        let bin = (((v - amp_min) / amp_span) * AMP_BINS as f64).floor();
        let bin = (bin.max(0.0) as usize).min(AMP_BINS - 1);
        h.bins[col][bin] += 1;
        h.total_count += 1;
        if v >= threshold {
            h.high_rail[col].push(v);
        } else {
            h.low_rail[col].push(v);
        }
        if k > 0 {
            let a = w.samples[k - 1];
            let straddles = (a < threshold && v >= threshold) || (a >= threshold && v < threshold);
            if straddles && v != a {
                let frac = (threshold - a) / (v - a);
                let pos = (k - 1) as f64 + frac - phase_offset as f64;
                h.crossing_phases_ui
                    .push(pos.rem_euclid(ui_samples as f64) / ui_samples as f64);
            }
        }
    }
    Ok(h)
}

/// Scalar eye measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeReport {
    /// Inner vertical opening at the center phase, in volts. Negative or
    /// zero means the eye is closed.
    pub eye_height: f64,
    /// Widest contiguous open phase span, as a fraction of one UI.
    pub eye_width_ui: f64,
    /// Standard deviation of mid-level crossing phases, in UI.
    pub rms_jitter_ui: f64,
    /// Amplitude at which crossings were measured.
    pub crossing_level: f64,
}

fn column_opening(h: &EyeHistogram, col: usize) -> Option<f64> {
    let high = &h.high_rail[col];
    let low = &h.low_rail[col];
    if high.count == 0 || low.count == 0 {
        return None;
    }
    let high_edge = high.mean() - 3.0 * high.std();
    let low_edge = low.mean() + 3.0 * low.std();
    Some(high_edge - low_edge)
}

/// Measure eye height, width and jitter from a histogram.
///
/// Requires both logic rails to be present somewhere in the fold; a fully
/// closed eye reports a non-positive height and zero width rather than an
/// error.
pub fn eye_metrics(h: &EyeHistogram, cfg: &LinkConfig) -> Result<EyeReport> {
    cfg.validate()?;
    if h.total_count == 0 {
        return Err(Error::data("empty eye histogram"));
    }
    let highs: u64 = h.high_rail.iter().map(|r| r.count).sum();
    let lows: u64 = h.low_rail.iter().map(|r| r.count).sum();
    if highs == 0 || lows == 0 {
        return Err(Error::data("eye needs samples at both logic levels"));
    }

    let window = h.phase_bins();
    let center = window / 2;
    let eye_height = column_opening(h, center).unwrap_or(0.0);

    // Widest circular run of open columns.
    let open: Vec<bool> = (0..window)
        .map(|c| column_opening(h, c).map(|o| o > 0.0).unwrap_or(false))
        .collect();
    let eye_width_ui = if open.iter().all(|&o| o) {
        1.0
    } else {
        let mut best = 0usize;
        let mut run = 0usize;
        for i in 0..2 * window {
            if open[i % window] {
                run += 1;
                best = best.max(run.min(window));
            } else {
                run = 0;
            }
        }
        (best as f64 / h.ui_samples as f64).min(1.0)
    };

    // Crossing jitter: fold phases to one UI and take the circular spread
    // so clusters near the 0/1 wrap measure correctly.
    let rms_jitter_ui = if h.crossing_phases_ui.len() < 2 {
        0.0
    } else {
        let two_pi = 2.0 * std::f64::consts::PI;
        let (mut s, mut c) = (0.0, 0.0);
        for &p in &h.crossing_phases_ui {
            s += (two_pi * p).sin();
            c += (two_pi * p).cos();
        }
        let mean_phase = s.atan2(c) / two_pi;
        let mut acc = 0.0;
        for &p in &h.crossing_phases_ui {
            let mut d = p - mean_phase;
            d -= d.round();
            acc += d * d;
        }
        (acc / h.crossing_phases_ui.len() as f64).sqrt()
    };

    Ok(EyeReport {
        eye_height,
        eye_width_ui,
        rms_jitter_ui,
        crossing_level: h.threshold,
    })
}

/// Bit error rate with latency alignment.
///
/// Tries every lag in `0..=max_lag` (rx delayed relative to tx), picks the
/// one minimizing mismatches, and reports the error rate over the
/// overlapping span at that lag. The overlap must stay at least 100 bits
/// at the maximum lag.
pub fn ber(tx: &BitStream, rx: &BitStream, max_lag: usize) -> Result<(f64, usize)> {
    let worst_overlap = rx.len().saturating_sub(max_lag).min(tx.len());
    if worst_overlap < 100 {
        return Err(Error::data(format!(
            "streams overlap by {worst_overlap} bits at lag {max_lag}; need >= 100"
        )));
    }
    let mut best_rate = f64::INFINITY;
    let mut best_lag = 0usize;
    for lag in 0..=max_lag {
        let overlap = (rx.len() - lag).min(tx.len());
        let mut mismatches = 0usize;
        for k in 0..overlap {
            if rx[k + lag] != tx[k] {
                mismatches += 1;
            }
        }
        let rate = mismatches as f64 / overlap as f64;
        if rate < best_rate {
            best_rate = rate;
            best_lag = lag;
        }
    }
    Ok((best_rate, best_lag))
}

/// Render the histogram as a binary PGM (P5) raster with log-scaled
/// counts. Pixel (0, 0) is the earliest phase at the highest amplitude;
/// identical histograms produce byte-identical files.
pub fn render_eye(h: &EyeHistogram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, eye_pgm_bytes(h))?;
    Ok(())
}

/// The PGM bytes for a histogram (see [`render_eye`]).
pub fn eye_pgm_bytes(h: &EyeHistogram) -> Vec<u8> {
    let width = h.phase_bins();
    let height = AMP_BINS;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let max_count = h
        .bins
        .iter()
        .flat_map(|col| col.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let log_max = (1.0 + max_count as f64).ln();
    for row in (0..height).rev() {
        for col in 0..width {
            let count = h.bins[col][row];
            let pixel = if count == 0 || max_count == 0 {
                0u8
            } else {
                let scaled = 255.0 * (1.0 + count as f64).ln() / log_max;
                scaled.round().clamp(1.0, 255.0) as u8
            };
            out.push(pixel);
        }
    }
    out
}

/// Export the raw occupancy grid as CSV: one row per amplitude bin from
/// high to low, one column per phase bin, preceded by `#` header lines
/// recording the axes.
pub fn write_eye_csv(h: &EyeHistogram, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::new();
    let _ = writeln!(text, "# ui_samples={} span_ui={}", h.ui_samples, h.span_ui);
    let _ = writeln!(text, "# amp_min={} amp_max={}", h.amp_min, h.amp_max);
    for row in (0..AMP_BINS).rev() {
        let line: Vec<String> = (0..h.phase_bins())
            .map(|col| h.bins[col][row].to_string())
            .collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_bits, modulate_nrz, BitKind};
    use proptest::prelude::*;

    fn eye_cfg(spb: usize, rise: usize, fall: usize) -> LinkConfig {
        LinkConfig {
            bit_rate: 10e9,
            samples_per_bit: spb,
            high_level: 1.0,
            low_level: 0.0,
            rise_samples: rise,
            fall_samples: fall,
            delay_depth: 4,
            delay_resolution: 1.0 / 10e9 / spb as f64,
        }
    }

    fn alternating_wave(cfg: &LinkConfig, nbits: usize) -> Waveform {
        let bits: Vec<u8> = (0..nbits).map(|b| (b % 2) as u8).collect();
        modulate_nrz(&BitStream::new(bits).unwrap(), cfg).unwrap()
    }

    #[test]
    fn flat_tops_land_in_two_rows() {
        let cfg = eye_cfg(8, 0, 0);
        let w = alternating_wave(&cfg, 32);
        let off = centered_phase_offset(8, 2);
        let h = accumulate_eye(&w, &cfg, off, 2).unwrap();
        let nonzero_rows: std::collections::BTreeSet<usize> = h
            .bins
            .iter()
            .flat_map(|col| {
                col.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(r, _)| r)
            })
            .collect();
        assert_eq!(nonzero_rows.len(), 2, "rows {nonzero_rows:?}");
    }

    #[test]
    fn accumulate_rejects_degenerate_inputs() {
        let cfg = eye_cfg(4, 0, 0);
        let w = alternating_wave(&cfg, 8);
        assert!(accumulate_eye(&w, &cfg, 0, 0).is_err()); // span 0
        let short = Waveform::new(vec![1.0, 0.0], cfg.sample_period()).unwrap();
        assert!(accumulate_eye(&short, &cfg, 0, 2).is_err()); // under one UI
        // Single-level input: metrics need both rails.
        let flat = Waveform::new(vec![1.0; 32], cfg.sample_period()).unwrap();
        let h = accumulate_eye(&flat, &cfg, 0, 2).unwrap();
        assert!(eye_metrics(&h, &cfg).is_err());
    }

    #[test]
    fn count_conservation() {
        let cfg = eye_cfg(4, 1, 1);
        let bits = generate_bits(3, 100, BitKind::Bernoulli(0.5)).unwrap();
        let w = modulate_nrz(&bits, &cfg).unwrap();
        let h = accumulate_eye(&w, &cfg, 0, 2).unwrap();
        assert_eq!(h.total_count as usize, w.len());
        let binned: u64 = h.bins.iter().flat_map(|c| c.iter()).sum();
        assert_eq!(binned, h.total_count);
    }

    #[test]
    fn constant_waveform_single_row() {
        let cfg = eye_cfg(4, 0, 0);
        let w = Waveform::new(vec![0.7; 64], cfg.sample_period()).unwrap();
        let h = accumulate_eye(&w, &cfg, 0, 2).unwrap();
        let nonzero_rows: std::collections::BTreeSet<usize> = h
            .bins
            .iter()
            .flat_map(|col| {
                col.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(r, _)| r)
            })
            .collect();
        assert_eq!(nonzero_rows.len(), 1);
    }

    #[test]
    fn ideal_nrz_eye_is_fully_open() {
        let cfg = eye_cfg(8, 0, 0);
        let bits = generate_bits(11, 256, BitKind::Bernoulli(0.5)).unwrap();
        let w = modulate_nrz(&bits, &cfg).unwrap();
        let off = centered_phase_offset(8, 2);
        let h = accumulate_eye(&w, &cfg, off, 2).unwrap();
        let report = eye_metrics(&h, &cfg).unwrap();
        assert!(
            (report.eye_height - 1.0).abs() < 1e-12,
            "height {}",
            report.eye_height
        );
        assert_eq!(report.eye_width_ui, 1.0);
        assert_eq!(report.rms_jitter_ui, 0.0);
        assert_eq!(report.crossing_level, 0.5);
    }

    #[test]
    fn metrics_invariant_to_offset_and_scale() {
        let base_cfg = eye_cfg(8, 2, 2);
        let bits = generate_bits(13, 200, BitKind::Bernoulli(0.5)).unwrap();
        let w = modulate_nrz(&bits, &base_cfg).unwrap();
        let noisy = crate::channel::add_awgn(&w, 0.03, 5).unwrap();
        let off = centered_phase_offset(8, 2);
        let r0 = eye_metrics(
            &accumulate_eye(&noisy, &base_cfg, off, 2).unwrap(),
            &base_cfg,
        )
        .unwrap();

        // Translate signal and levels together.
        let shifted = Waveform::new(
            noisy.samples.iter().map(|v| v + 0.2).collect(),
            noisy.sample_period,
        )
        .unwrap();
        let mut shifted_cfg = base_cfg.clone();
        shifted_cfg.high_level += 0.2;
        shifted_cfg.low_level += 0.2;
        let r1 = eye_metrics(
            &accumulate_eye(&shifted, &shifted_cfg, off, 2).unwrap(),
            &shifted_cfg,
        )
        .unwrap();
        assert!((r1.eye_height - r0.eye_height).abs() < 1e-9);
        assert_eq!(r1.eye_width_ui, r0.eye_width_ui);
        assert!((r1.rms_jitter_ui - r0.rms_jitter_ui).abs() < 1e-9);

        // Scale amplitudes by a > 0.
        let a = 2.5;
        let scaled = Waveform::new(
            noisy.samples.iter().map(|v| v * a).collect(),
            noisy.sample_period,
        )
        .unwrap();
        let mut scaled_cfg = base_cfg.clone();
        scaled_cfg.high_level *= a;
        scaled_cfg.low_level *= a;
        let r2 = eye_metrics(
            &accumulate_eye(&scaled, &scaled_cfg, off, 2).unwrap(),
            &scaled_cfg,
        )
        .unwrap();
        assert!((r2.eye_height - a * r0.eye_height).abs() < 1e-9);
        assert_eq!(r2.eye_width_ui, r0.eye_width_ui);
        assert!((r2.rms_jitter_ui - r0.rms_jitter_ui).abs() < 1e-9);
    }

    #[test]
    fn dense_fill_reports_closed_eye() {
        // Uniformly filled amplitude: the high rail reaches down and the
        // low rail reaches up past each other, so the opening is negative.
        let cfg = eye_cfg(4, 0, 0);
        let mut rng = crate::rng::SeededRng::new(9);
        let w = Waveform::new(
            (0..4000).map(|_| rng.uniform()).collect(),
            cfg.sample_period(),
        )
        .unwrap();
        let h = accumulate_eye(&w, &cfg, 0, 2).unwrap();
        let report = eye_metrics(&h, &cfg).unwrap();
        assert!(report.eye_height <= 0.0, "height {}", report.eye_height);
        assert_eq!(report.eye_width_ui, 0.0);
    }

    #[test]
    fn ber_examples() {
        let tx = generate_bits(1, 500, BitKind::Bernoulli(0.5)).unwrap();
        let (rate, lag) = ber(&tx, &tx, 4).unwrap();
        assert_eq!((rate, lag), (0.0, 0));

        let complement = BitStream::new(tx.bits().iter().map(|&b| 1 - b).collect()).unwrap();
        let (rate, _) = ber(&tx, &complement, 0).unwrap();
        assert_eq!(rate, 1.0);

        let mut shifted = vec![0, 0, 0];
        shifted.extend_from_slice(tx.bits());
        let shifted = BitStream::new(shifted).unwrap();
        let (rate, lag) = ber(&tx, &shifted, 8).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(lag, 3);
    }

    #[test]
    fn ber_insufficient_overlap_is_error() {
        let tx = generate_bits(1, 60, BitKind::Bernoulli(0.5)).unwrap();
        assert!(ber(&tx, &tx, 4).is_err());
    }

    #[test]
    fn ber_against_independent_stream_is_half() {
        let tx = generate_bits(2, 10_000, BitKind::Bernoulli(0.5)).unwrap();
        let other = generate_bits(999, 10_000, BitKind::Bernoulli(0.5)).unwrap();
        let (rate, _) = ber(&tx, &other, 8).unwrap();
        assert!((0.45..=0.55).contains(&rate), "rate {rate}");
    }

    #[test]
    fn render_single_bin() {
        let mut h = EyeHistogram {
            bins: vec![vec![0; AMP_BINS]; 8],
            ui_samples: 4,
            span_ui: 2,
            amp_min: 0.0,
            amp_max: 1.0,
            total_count: 5,
            threshold: 0.5,
            high_rail: vec![RailStats::default(); 8],
            low_rail: vec![RailStats::default(); 8],
            crossing_phases_ui: Vec::new(),
        };
        h.bins[3][100] = 5;
        let bytes = eye_pgm_bytes(&h);
        let header_end = bytes
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .nth(2)
            .unwrap()
            .0
            + 1;
        assert_eq!(
            &bytes[..header_end],
            format!("P5\n8 {AMP_BINS}\n255\n").as_bytes()
        );
        let pixels = &bytes[header_end..];
        assert_eq!(pixels.len(), 8 * AMP_BINS);
        let lit: Vec<usize> = pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(lit.len(), 1);
        // Row index flips: amplitude bin 100 renders at row AMP_BINS-1-100.
        assert_eq!(lit[0], (AMP_BINS - 1 - 100) * 8 + 3);
        assert_eq!(pixels[lit[0]], 255);
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = eye_cfg(4, 1, 1);
        let bits = generate_bits(5, 64, BitKind::Bernoulli(0.5)).unwrap();
        let w = modulate_nrz(&bits, &cfg).unwrap();
        let h = accumulate_eye(&w, &cfg, 0, 2).unwrap();
        assert_eq!(eye_pgm_bytes(&h), eye_pgm_bytes(&h));
    }

    proptest! {
        #[test]
        fn conservation_holds(seed in any::<u64>(), nbits in 2usize..80, spb in 2usize..10) {
            let cfg = eye_cfg(spb, 0, 0);
            let bits = generate_bits(seed, nbits, BitKind::Bernoulli(0.5)).unwrap();
            let w = modulate_nrz(&bits, &cfg).unwrap();
            let h = accumulate_eye(&w, &cfg, seed as usize % (2 * spb), 2).unwrap();
            prop_assert_eq!(h.total_count as usize, w.len());
            let binned: u64 = h.bins.iter().flat_map(|c| c.iter()).sum();
            prop_assert_eq!(binned, h.total_count);
        }

        #[test]
        fn ber_alignment_recovers_injected_lag(
            seed in any::<u64>(),
            lag in 0usize..12,
            flips in 0usize..40,
        ) {
            let tx = generate_bits(seed, 400, BitKind::Bernoulli(0.5)).unwrap();
            let mut rx: Vec<u8> = vec![0; lag];
            rx.extend_from_slice(tx.bits());
            // Inject some errors (rate < 0.5).
            let mut rng = crate::rng::SeededRng::new(seed ^ 0x5a5a);
            for _ in 0..flips {
                let idx = (rng.next_u64() % rx.len() as u64) as usize;
                rx[idx] = 1 - rx[idx];
            }
            let rx = BitStream::new(rx).unwrap();
            let (rate, found) = ber(&tx, &rx, 12).unwrap();
            prop_assert!(rate < 0.5);
            prop_assert_eq!(found, lag);
        }
    }
}
