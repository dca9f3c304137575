//! Classical feed-forward + decision-feedback equalization.
//!
//! The FFE is a cursor-spaced FIR with pre- and postcursor taps; applying
//! it as a causal convolution makes precursor anticipation show up as an
//! output latency of `precursors * samples_per_cursor`. The DFE slices one
//! decision per bit and subtracts, per trailing bit, a tap scaled by the
//! decided bit (hard decisions only). Tap fitting works from the channel
//! pulse response: FFE taps by least squares against a unit pulse at the
//! main cursor, DFE taps by reading the residual postcursor tail.

use crate::channel::ImpulseResponse;
use crate::error::{Error, Result};
use crate::signal::{BitStream, LinkConfig, Waveform};

/// Feed-forward equalizer taps (dimensionless gains).
#[derive(Debug, Clone, PartialEq)]
pub struct FfeTaps {
    pub precursors: Vec<f64>,
    pub main: f64,
    pub postcursors: Vec<f64>,
}

impl FfeTaps {
    pub fn new(precursors: Vec<f64>, main: f64, postcursors: Vec<f64>) -> Result<Self> {
        if main == 0.0 || !main.is_finite() {
            return Err(Error::config(format!(
                "main cursor must be finite non-zero, got {main}"
            )));
        }
        if precursors
            .iter()
            .chain(&postcursors)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("FFE taps must be finite"));
        }
        Ok(Self {
            precursors,
            main,
            postcursors,
        })
    }

    /// Identity equalizer (main = 1, no cursors).
    pub fn identity() -> Self {
        Self {
            precursors: Vec::new(),
            main: 1.0,
            postcursors: Vec::new(),
        }
    }

    /// Taps in application order: precursors, main, postcursors.
    pub fn full_taps(&self) -> Vec<f64> {
        let mut taps = Vec::with_capacity(self.precursors.len() + 1 + self.postcursors.len());
        taps.extend_from_slice(&self.precursors);
        taps.push(self.main);
        taps.extend_from_slice(&self.postcursors);
        taps
    }

    /// Output latency in samples when applied at the given cursor spacing.
    pub fn latency_samples(&self, samples_per_cursor: usize) -> usize {
        self.precursors.len() * samples_per_cursor
    }
}

/// Decision-feedback taps (volts per decided 1-bit) and slicer threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DfeTaps {
    pub taps: Vec<f64>,
    pub threshold: f64,
}

impl DfeTaps {
    pub fn new(taps: Vec<f64>, threshold: f64) -> Result<Self> {
        if taps.iter().any(|v| !v.is_finite()) || !threshold.is_finite() {
            return Err(Error::config("DFE taps and threshold must be finite"));
        }
        Ok(Self { taps, threshold })
    }
}

/// Apply the FFE as a causal FIR with taps spaced `samples_per_cursor`
/// apart: `out[k] = sum_i taps[i] * rx[k - i * spc]`.
pub fn ffe_apply(t: &FfeTaps, rx: &Waveform, samples_per_cursor: usize) -> Result<Waveform> {
    if samples_per_cursor == 0 {
        return Err(Error::config("samples_per_cursor must be >= 1"));
    }
    let taps = t.full_taps();
    let mut out = vec![0.0; rx.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &tap) in taps.iter().enumerate() {
            let offset = i * samples_per_cursor;
            if offset > k {
                break;
            }
            acc += tap * rx.samples[k - offset];
        }
        *o = acc;
    }
    Waveform::new(out, rx.sample_period)
}

/// Decision-feedback equalization over bit-center samples (one per bit).
///
/// For bit `k`: `corrected = y[k] - sum_j taps[j] * u(d[k-1-j])` with
/// `u(1) = 1`, `u(0) = 0` and zero-filled decision history, then
/// `d[k] = corrected >= threshold`. Returns the decisions and the
/// corrected decision-point samples.
pub fn dfe_equalize(t: &DfeTaps, y: &Waveform, cfg: &LinkConfig) -> Result<(BitStream, Waveform)> {
    cfg.validate()?;
    if y.is_empty() {
        return Err(Error::data("DFE needs at least one decision sample"));
    }
    let mut decisions: Vec<u8> = Vec::with_capacity(y.len());
    let mut corrected = Vec::with_capacity(y.len());
    for (k, &sample) in y.samples.iter().enumerate() {
        let mut feedback = 0.0;
        for (j, &tap) in t.taps.iter().enumerate() {
            if k > j && decisions[k - 1 - j] == 1 {
                feedback += tap;
            }
        }
        let value = sample - feedback;
        corrected.push(value);
        decisions.push(u8::from(value >= t.threshold));
    }
    Ok((
        BitStream::new(decisions)?,
        Waveform::new(corrected, y.sample_period)?,
    ))
}

/// Decision-feedback correction applied to a full-rate waveform.
///
/// Decisions run at one per bit (`ticks_per_bit` samples, decision sample
/// at the bit center); the decided feedback is subtracted from every sample
/// of that bit's interval so the corrected waveform can feed an eye
/// diagram. Bit 0 starts at sample 0 of `y`.
pub fn dfe_correct_waveform(
    t: &DfeTaps,
    y: &Waveform,
    ticks_per_bit: usize,
) -> Result<(BitStream, Waveform)> {
    if ticks_per_bit == 0 {
        return Err(Error::config("ticks_per_bit must be >= 1"));
    }
    let nbits = y.len() / ticks_per_bit;
    if nbits == 0 {
        return Err(Error::data("waveform shorter than one bit interval"));
    }
    let mid = ticks_per_bit / 2;
    let mut decisions: Vec<u8> = Vec::with_capacity(nbits);
    let mut corrected = y.samples.clone();
    for b in 0..nbits {
        let mut feedback = 0.0;
        for (j, &tap) in t.taps.iter().enumerate() {
            if b > j && decisions[b - 1 - j] == 1 {
                feedback += tap;
            }
        }
        let start = b * ticks_per_bit;
        for v in &mut corrected[start..start + ticks_per_bit] {
            *v -= feedback;
        }
        decisions.push(u8::from(corrected[start + mid] >= t.threshold));
    }
    corrected.truncate(nbits * ticks_per_bit);
    Ok((
        BitStream::new(decisions)?,
        Waveform::new(corrected, y.sample_period)?,
    ))
}

/// Solve `A x = b` in the least-squares sense via the normal equations
/// (Gaussian elimination with partial pivoting). Rows iterate lazily
/// through `row`; the system is tiny (one unknown per tap).
#[allow(clippy::needless_range_loop)]
fn solve_normal_equations(
    n_unknowns: usize,
    rows: impl Iterator<Item = (Vec<f64>, f64)>,
) -> Result<(Vec<f64>, f64)> {
    let mut ata = vec![vec![0.0; n_unknowns]; n_unknowns];
    let mut atb = vec![0.0; n_unknowns];
    let mut btb = 0.0;
    for (row, target) in rows {
        debug_assert_eq!(row.len(), n_unknowns);
        for i in 0..n_unknowns {
            if row[i] == 0.0 {
                continue;
            }
            for j in i..n_unknowns {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * target;
        }
        btb += target * target;
    }
    for i in 0..n_unknowns {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }

    // Gaussian elimination with partial pivoting on [AtA | Atb].
    let scale = ata
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    let mut x = atb.clone();
    let mut m = ata.clone();
    for col in 0..n_unknowns {
        let (pivot_row, pivot) = (col..n_unknowns)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("non-empty");
        if pivot < 1e-12 * scale {
            return Err(Error::Fit("singular least-squares system".into()));
        }
        m.swap(col, pivot_row);
        x.swap(col, pivot_row);
        for r in col + 1..n_unknowns {
            let factor = m[r][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n_unknowns {
                m[r][c] -= factor * m[col][c];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n_unknowns).rev() {
        for c in col + 1..n_unknowns {
            x[col] -= m[col][c] * x[c];
        }
        x[col] /= m[col][col];
    }

    // Residual via ||b||^2 - 2 x.Atb + x.AtA x (all accumulated above).
    let mut quad = 0.0;
    let mut cross = 0.0;
    for i in 0..n_unknowns {
        cross += x[i] * atb[i];
        for j in 0..n_unknowns {
            quad += x[i] * ata[i][j] * x[j];
        }
    }
    let residual = (btb - 2.0 * cross + quad).max(0.0);
    Ok((x, residual))
}

/// Fit FFE taps so the equalized pulse approximates a unit pulse at the
/// main cursor over all cursor-spaced sampling positions. Returns the taps
/// and the sum-of-squares residual.
pub fn fit_ffe_taps(
    pulse: &ImpulseResponse,
    n_pre: usize,
    n_post: usize,
    samples_per_cursor: usize,
) -> Result<(FfeTaps, f64)> {
    if samples_per_cursor == 0 {
        return Err(Error::config("samples_per_cursor must be >= 1"));
    }
    let n_taps = n_pre + 1 + n_post;
    let len = pulse.taps.len();
    let spc = samples_per_cursor as isize;
    if len as isize <= spc * n_post as isize {
        return Err(Error::Fit(format!(
            "pulse of {len} taps does not cover {n_post} postcursors at spacing {samples_per_cursor}"
        )));
    }
    let peak = pulse
        .taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
        .map(|(i, _)| i as isize)
        .expect("non-empty");

    // Row r samples the equalized pulse at peak + (n_pre + r) * spc; the
    // target is 1 at r = 0, else 0. The row span covers every position
    // where any tap sees pulse energy, so enlarging the tap set never
    // shrinks the row set (nested least-squares problems).
    let r_lo = -(peak / spc + n_pre as isize + 1);
    let r_hi = (len as isize - 1 - peak) / spc + n_post as isize + 1;
    let rows = (r_lo..=r_hi).map(move |r| {
        let pos = peak + (n_pre as isize + r) * spc;
        let mut row = vec![0.0; n_taps];
        for (i, slot) in row.iter_mut().enumerate() {
            let idx = pos - i as isize * spc;
            if (0..len as isize).contains(&idx) {
                *slot = pulse.taps[idx as usize];
            }
        }
        (row, if r == 0 { 1.0 } else { 0.0 })
    });

    let (solution, residual) = solve_normal_equations(n_taps, rows)?;
    let taps = FfeTaps::new(
        solution[..n_pre].to_vec(),
        solution[n_pre],
        solution[n_pre + 1..].to_vec(),
    )?;
    Ok((taps, residual))
}

/// Read DFE taps off a (possibly FFE-equalized) pulse response: tap `j`
/// is the pulse value `j + 1` bit intervals after the main cursor, scaled
/// by the logic swing. The slicer threshold accounts for the mean of the
/// ISI the feedback does not cancel.
pub fn fit_dfe_taps(
    equalized_pulse: &ImpulseResponse,
    n_taps: usize,
    cfg: &LinkConfig,
) -> Result<DfeTaps> {
    let peak = equalized_pulse
        .taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
        .map(|(i, _)| i)
        .expect("non-empty");
    fit_dfe_taps_at(equalized_pulse, peak, n_taps, cfg)
}

/// [`fit_dfe_taps`] with an explicit main-cursor index, for pulses whose
/// global maximum may sit off the cursor grid (e.g. between-cursor
/// overshoot after FFE equalization).
pub fn fit_dfe_taps_at(
    equalized_pulse: &ImpulseResponse,
    main_index: usize,
    n_taps: usize,
    cfg: &LinkConfig,
) -> Result<DfeTaps> {
    cfg.validate()?;
    let ratio = cfg.bit_period() / equalized_pulse.tap_period;
    let per_bit = ratio.round();
    if (ratio - per_bit).abs() > 1e-6 * ratio || per_bit < 1.0 {
        return Err(Error::config(format!(
            "bit period ({}) is not an integer number of pulse taps ({})",
            cfg.bit_period(),
            equalized_pulse.tap_period
        )));
    }
    let per_bit = per_bit as usize;
    let taps = &equalized_pulse.taps;
    let peak = main_index;
    if peak >= taps.len() {
        return Err(Error::Fit(format!(
            "main cursor index {peak} outside the {}-tap pulse",
            taps.len()
        )));
    }
    if peak + n_taps * per_bit >= taps.len() {
        return Err(Error::Fit(format!(
            "pulse of {} taps does not cover {n_taps} trailing bit intervals",
            taps.len()
        )));
    }

    let swing = cfg.high_level - cfg.low_level;
    let feedback: Vec<f64> = (1..=n_taps)
        .map(|j| taps[peak + j * per_bit] * swing)
        .collect();

    // Decision statistic: p_peak * level(bit) + cancelled tail residual
    // (low * sum of cancelled cursors) + uncancelled cursor ISI, whose mean
    // over equiprobable bits is mid * sum of uncancelled cursors.
    let mid = cfg.mid_level();
    let cancelled: f64 = (1..=n_taps).map(|j| taps[peak + j * per_bit]).sum();
    let mut uncancelled = 0.0;
    // Precursors.
    let mut idx = peak as isize - per_bit as isize;
    while idx >= 0 {
        uncancelled += taps[idx as usize];
        idx -= per_bit as isize;
    }
    // Tail beyond the feedback span.
    let mut idx = peak + (n_taps + 1) * per_bit;
    while idx < taps.len() {
        uncancelled += taps[idx];
        idx += per_bit;
    }
    let threshold = taps[peak] * mid + cfg.low_level * cancelled + mid * uncancelled;

    DfeTaps::new(feedback, threshold)
}
