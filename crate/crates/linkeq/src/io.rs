//! CSV serialization of waveforms, bit streams and reports.
//!
//! Waveforms and bit streams use one value per line behind a
//! `# sample_period=<seconds>` header. Values print in Rust's shortest
//! round-trip decimal form, so parsing recovers every f64 exactly (well
//! inside the 1e-12 relative fidelity the format promises).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eye::EyeReport;
use crate::signal::{BitStream, Waveform};
use crate::train::TrainReport;

/// Render a waveform as CSV text.
pub fn waveform_to_csv(w: &Waveform) -> String {
    let mut out = String::with_capacity(w.len() * 8 + 32);
    let _ = writeln!(out, "# sample_period={}", w.sample_period);
    for v in &w.samples {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Parse waveform CSV text.
pub fn waveform_from_csv(text: &str) -> Result<Waveform> {
    let (period, samples) = parse_value_lines(text)?;
    Waveform::new(samples, period)
}

pub fn write_waveform_csv(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, waveform_to_csv(w))?;
    Ok(())
}

pub fn read_waveform_csv(path: impl AsRef<Path>) -> Result<Waveform> {
    waveform_from_csv(&std::fs::read_to_string(path)?)
}

/// Render a bit stream as CSV text; the header carries the bit period.
pub fn bits_to_csv(bits: &BitStream, bit_period: f64) -> String {
    let mut out = String::with_capacity(bits.len() * 2 + 32);
    let _ = writeln!(out, "# sample_period={bit_period}");
    for b in bits.bits() {
        let _ = writeln!(out, "{b}");
    }
    out
}

/// Parse bit-stream CSV text; returns the bits and the bit period.
pub fn bits_from_csv(text: &str) -> Result<(BitStream, f64)> {
    let (period, values) = parse_value_lines(text)?;
    let bits = values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            if v == 0.0 {
                Ok(0u8)
            } else if v == 1.0 {
                Ok(1u8)
            } else {
                Err(Error::parse(
                    idx + 2,
                    format!("bit value must be 0 or 1, got {v}"),
                ))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok((BitStream::new(bits)?, period))
}

pub fn write_bits_csv(bits: &BitStream, bit_period: f64, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, bits_to_csv(bits, bit_period))?;
    Ok(())
}

pub fn read_bits_csv(path: impl AsRef<Path>) -> Result<(BitStream, f64)> {
    bits_from_csv(&std::fs::read_to_string(path)?)
}

/// Impulse responses share the waveform CSV convention (the header period
/// is the tap period).
pub fn write_impulse_csv(
    h: &crate::channel::ImpulseResponse,
    path: impl AsRef<Path>,
) -> Result<()> {
    let w = Waveform::new(h.taps.clone(), h.tap_period)?;
    write_waveform_csv(&w, path)
}

pub fn read_impulse_csv(path: impl AsRef<Path>) -> Result<crate::channel::ImpulseResponse> {
    let w = read_waveform_csv(path)?;
    crate::channel::ImpulseResponse::new(w.samples, w.sample_period)
}

fn parse_value_lines(text: &str) -> Result<(f64, Vec<f64>)> {
    let mut period = None;
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(value) = rest.strip_prefix("sample_period=") {
                let parsed: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad sample period {value:?}")))?;
                period = Some(parsed);
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(lineno, format!("non-numeric value {line:?}")))?;
        values.push(v);
    }
    let period = period.ok_or_else(|| Error::parse(1, "missing `# sample_period=` header"))?;
    Ok((period, values))
}

/// Export a training report: `step,train_loss,valid_loss`, with the
/// validation column filled only on validation steps.
pub fn train_report_to_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,train_loss,valid_loss\n");
    let mut validations = report.validations.iter().peekable();
    for &(step, loss) in &report.step_losses {
        let valid = match validations.peek() {
            Some(&&(vstep, vloss)) if vstep == step => {
                validations.next();
                format!("{vloss}")
            }
            _ => String::new(),
        };
        let _ = writeln!(out, "{step},{loss},{valid}");
    }
    // A trailing validation can land after the last recorded step.
    for &(step, vloss) in validations {
        let _ = writeln!(out, "{step},,{vloss}");
    }
    out
}

pub fn write_train_report_csv(report: &TrainReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, train_report_to_csv(report))?;
    Ok(())
}

/// One labeled row of the comparison report.
#[derive(Debug, Clone)]
pub struct EyeReportRow {
    pub pipeline: String,
    pub report: EyeReport,
    pub ber: f64,
    pub ber_lag: usize,
}

/// Fixed-schema comparison CSV:
/// `pipeline,eye_height,eye_width_ui,rms_jitter_ui,crossing_level,ber,ber_lag`.
pub fn eye_rows_to_csv(rows: &[EyeReportRow]) -> String {
    let mut out =
        String::from("pipeline,eye_height,eye_width_ui,rms_jitter_ui,crossing_level,ber,ber_lag\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.pipeline,
            row.report.eye_height,
            row.report.eye_width_ui,
            row.report.rms_jitter_ui,
            row.report.crossing_level,
            row.ber,
            row.ber_lag
        );
    }
    out
}

pub fn write_eye_rows_csv(rows: &[EyeReportRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, eye_rows_to_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn waveform_round_trip_is_exact() {
        let w = Waveform::new(vec![0.1, -2.5e-13, 1.0 / 3.0, 7e99], 2.5e-12).unwrap();
        let back = waveform_from_csv(&waveform_to_csv(&w)).unwrap();
        assert_eq!(back.sample_period.to_bits(), w.sample_period.to_bits());
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bits_round_trip() {
        let bits = BitStream::new(vec![1, 0, 0, 1, 1]).unwrap();
        let (back, period) = bits_from_csv(&bits_to_csv(&bits, 1e-10)).unwrap();
        assert_eq!(back.bits(), bits.bits());
        assert_eq!(period, 1e-10);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(matches!(
            waveform_from_csv("1.0\n2.0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bad_value_carries_line_number() {
        let text = "# sample_period=1e-12\n1.0\nnope\n";
        assert!(matches!(
            waveform_from_csv(text),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn non_bit_value_rejected() {
        let text = "# sample_period=1e-10\n1\n0.5\n";
        assert!(bits_from_csv(text).is_err());
    }

    proptest! {
        #[test]
        fn waveform_csv_round_trips(
            samples in prop::collection::vec(-1e6f64..1e6, 1..50),
            period in 1e-13f64..1e-9,
        ) {
            let w = Waveform::new(samples, period).unwrap();
            let back = waveform_from_csv(&waveform_to_csv(&w)).unwrap();
            prop_assert_eq!(back.samples, w.samples);
            prop_assert_eq!(back.sample_period, w.sample_period);
        }
    }
}
