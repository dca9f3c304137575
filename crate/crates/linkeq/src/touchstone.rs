//! Touchstone v1 two-port ingestion and S21-to-impulse conversion.
//!
//! Supports the `.s2p` text format: `!` comments, one `#` option line
//! (frequency unit Hz/kHz/MHz/GHz; parameter S; formats MA, RI or DB;
//! `R <ohms>` reference), then rows of `freq s11 s21 s12 s22` pairs. Rows
//! may wrap across lines; values convert to complex linear terms.

use num_complex::Complex64;

use crate::channel::ImpulseResponse;
use crate::error::{Error, Result};
use crate::fft::fft_in_place;

/// Measured two-port scattering data on an ascending frequency grid.
#[derive(Debug, Clone)]
pub struct SParameterSet {
    /// Hertz, strictly ascending.
    pub frequencies: Vec<f64>,
    /// Forward transmission (insertion), complex linear.
    pub s21: Vec<Complex64>,
    /// Input reflection (return), complex linear.
    pub s11: Vec<Complex64>,
    /// Reference impedance in ohms.
    pub reference_impedance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SFormat {
    MagnitudeAngle,
    RealImaginary,
    DbAngle,
}

impl SFormat {
    fn to_complex(self, a: f64, b: f64) -> Complex64 {
        match self {
            SFormat::MagnitudeAngle => Complex64::from_polar(a, b.to_radians()),
            SFormat::RealImaginary => Complex64::new(a, b),
            SFormat::DbAngle => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
        }
    }
}

/// Parse Touchstone v1 two-port text.
pub fn parse_touchstone(text: &str) -> Result<SParameterSet> {
    let mut unit_scale = 1e9; // GHz default
    let mut format = SFormat::MagnitudeAngle;
    let mut reference = 50.0;
    let mut saw_option = false;

    // (value, source line) tokens from the data section.
    let mut tokens: Vec<(f64, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('!') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if saw_option {
                // Touchstone v1 allows only one option line; later ones are ignored
                // by some tools, but silently changing units mid-file is worse.
                return Err(Error::parse(lineno, "multiple option lines"));
            }
            saw_option = true;
            parse_option_line(rest, lineno, &mut unit_scale, &mut format, &mut reference)?;
            continue;
        }
        for tok in line.split_whitespace() {
            let value: f64 = tok
                .parse()
                .map_err(|_| Error::parse(lineno, format!("non-numeric token {tok:?}")))?;
            tokens.push((value, lineno));
        }
    }

    if tokens.is_empty() {
        return Err(Error::parse(0, "no data rows"));
    }
    if !tokens.len().is_multiple_of(9) {
        let (_, last_line) = tokens[tokens.len() - 1];
        return Err(Error::parse(
            last_line,
            format!(
                "two-port rows need 9 numbers (freq + 4 complex pairs); {} values left over",
                tokens.len() % 9
            ),
        ));
    }

    let mut frequencies = Vec::new();
    let mut s11 = Vec::new();
    let mut s21 = Vec::new();
    for row in tokens.chunks_exact(9) {
        let (freq, lineno) = row[0];
        let freq_hz = freq * unit_scale;
        if let Some(&prev) = frequencies.last() {
            if freq_hz <= prev {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "frequencies must be strictly ascending ({freq_hz} Hz after {prev} Hz)"
                    ),
                ));
            }
        }
        frequencies.push(freq_hz);
        s11.push(format.to_complex(row[1].0, row[2].0));
        s21.push(format.to_complex(row[3].0, row[4].0));
        // s12 (row[5..7]) and s22 (row[7..9]) are parsed but not retained.
    }

    if frequencies.len() < 2 {
        return Err(Error::data("need at least 2 frequency points"));
    }

    Ok(SParameterSet {
        frequencies,
        s21,
        s11,
        reference_impedance: reference,
    })
}

fn parse_option_line(
    rest: &str,
    lineno: usize,
    unit_scale: &mut f64,
    format: &mut SFormat,
    reference: &mut f64,
) -> Result<()> {
    let mut words = rest.split_whitespace().peekable();
    while let Some(word) = words.next() {
        match word.to_ascii_uppercase().as_str() {
            "HZ" => *unit_scale = 1.0,
            "KHZ" => *unit_scale = 1e3,
            "MHZ" => *unit_scale = 1e6,
            "GHZ" => *unit_scale = 1e9,
            "S" => {}
            "MA" => *format = SFormat::MagnitudeAngle,
            "RI" => *format = SFormat::RealImaginary,
            "DB" => *format = SFormat::DbAngle,
            "R" => {
                let value = words
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "option line: R without an impedance"))?;
                *reference = value.parse().map_err(|_| {
                    Error::parse(lineno, format!("bad reference impedance {value:?}"))
                })?;
            }
            other => {
                return Err(Error::parse(
                    lineno,
                    format!("unknown option token {other:?}"),
                ));
            }
        }
    }
    Ok(())
}

/// Frequency-domain taper applied before the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumWindow {
    None,
    Hann,
}

/// Convert a measured S21 spectrum to a real impulse response.
///
/// The spectrum is resampled onto a uniform grid from DC to the highest
/// measured frequency by linear interpolation (real and imaginary parts
/// independently). DC is extrapolated as `|s21|` of the lowest measured
/// point at zero phase, which keeps the impulse real. The grid is
/// Hermitian-symmetrized and inverse transformed; the result is truncated
/// where cumulative energy reaches 99.9%. The tap period is `1 / (2 f_max)`.
pub fn s21_to_impulse(
    sp: &SParameterSet,
    n_fft: usize,
    window: SpectrumWindow,
) -> Result<ImpulseResponse> {
    let impulse = s21_full_impulse(sp, n_fft, window)?;

    let total_energy: f64 = impulse.iter().map(|t| t * t).sum();
    if total_energy <= 0.0 {
        return Err(Error::data("S21 spectrum produced an all-zero impulse"));
    }
    let mut cumulative = 0.0;
    let mut keep = impulse.len();
    for (j, &t) in impulse.iter().enumerate() {
        cumulative += t * t;
        if cumulative >= 0.999 * total_energy {
            keep = j + 1;
            break;
        }
    }

    let f_max = *sp.frequencies.last().expect("validated non-empty");
    ImpulseResponse::new(impulse[..keep].to_vec(), 1.0 / (2.0 * f_max))
}

/// Full-length (untruncated) inverse transform; exact partner of the
/// forward DFT of the interpolated, symmetrized spectrum.
fn s21_full_impulse(sp: &SParameterSet, n_fft: usize, window: SpectrumWindow) -> Result<Vec<f64>> {
    if !n_fft.is_power_of_two() || n_fft < 2 * sp.frequencies.len() {
        return Err(Error::config(format!(
            "n_fft must be a power of two >= {} (2x frequency count), got {n_fft}",
            2 * sp.frequencies.len()
        )));
    }
    let f_max = *sp.frequencies.last().expect("validated non-empty");
    let half = n_fft / 2;
    let df = f_max / half as f64;

    let dc = Complex64::new(sp.s21[0].norm(), 0.0);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n_fft];
    for (k, slot) in spectrum.iter_mut().take(half + 1).enumerate() {
        let f = k as f64 * df;
        let mut v = interpolate_spectrum(sp, dc, f);
        if window == SpectrumWindow::Hann {
            v *= 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / half as f64).cos());
        }
        *slot = v;
    }
    // A real impulse needs real endpoints and conjugate symmetry.
    spectrum[0] = Complex64::new(spectrum[0].re, 0.0);
    spectrum[half] = Complex64::new(spectrum[half].re, 0.0);
    for k in 1..half {
        spectrum[n_fft - k] = spectrum[k].conj();
    }

    fft_in_place(&mut spectrum, true);
    Ok(spectrum.iter().map(|v| v.re).collect())
}

/// Linear interpolation over the measured grid, with the synthetic DC point
/// prepended at f = 0.
fn interpolate_spectrum(sp: &SParameterSet, dc: Complex64, f: f64) -> Complex64 {
    if f <= 0.0 {
        return dc;
    }
    let first = sp.frequencies[0];
    if f <= first {
        let t = f / first;
        return dc * (1.0 - t) + sp.s21[0] * t;
    }
    // frequencies are strictly ascending; find the surrounding pair
    match sp
        .frequencies
        .binary_search_by(|x| x.partial_cmp(&f).expect("finite frequency"))
    {
        Ok(i) => sp.s21[i],
        Err(i) => {
            if i >= sp.frequencies.len() {
                return sp.s21[sp.s21.len() - 1];
            }
            let (f0, f1) = (sp.frequencies[i - 1], sp.frequencies[i]);
            let t = (f - f0) / (f1 - f0);
            sp.s21[i - 1] * (1.0 - t) + sp.s21[i] * t
        }
    }
}
