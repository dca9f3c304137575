//! Parameter ROM: text serialization of a trained equalizer.
//!
//! The format is a self-describing container; line one carries the format
//! version. Shapes come first (input width, layer count, hidden widths,
//! dropout rate), then per layer the gate matrices in the fixed order
//! f, i, cs, o (for each gate: input weights row-major, recurrent weights
//! row-major, bias), then the decoder and post-filter taps. Numbers are
//! printed with 17 significant digits after the point, enough for every
//! f64 to survive a save/load round trip bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lstm::{LstmStack, Matrix};

const MAGIC: &str = "linkeq-rom";
const VERSION: &str = "v1";
const GATE_NAMES: [&str; 4] = ["f", "i", "cs", "o"];

/// Render a model into ROM text.
pub fn write_rom(m: &LstmStack) -> Result<String> {
    m.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "input {}", m.input_width());
    let _ = writeln!(out, "layers {}", m.layers.len());
    let widths: Vec<String> = m.hidden_widths().iter().map(|w| w.to_string()).collect();
    let _ = writeln!(out, "hidden {}", widths.join(" "));
    let _ = writeln!(out, "dropout {}", fmt_f64(m.dropout_rate));
    for (idx, layer) in m.layers.iter().enumerate() {
        let _ = writeln!(out, "layer {idx}");
        let gates = [
            (&layer.w_f, &layer.wr_f, &layer.b_f),
            (&layer.w_i, &layer.wr_i, &layer.b_i),
            (&layer.w_cs, &layer.wr_cs, &layer.b_cs),
            (&layer.w_o, &layer.wr_o, &layer.b_o),
        ];
        for (name, (w, wr, b)) in GATE_NAMES.iter().zip(gates) {
            let _ = writeln!(out, "w:{name}");
            write_matrix(&mut out, w);
            let _ = writeln!(out, "wr:{name}");
            write_matrix(&mut out, wr);
            let _ = writeln!(out, "b:{name}");
            let _ = writeln!(out, "{}", fmt_row(b));
        }
    }
    let _ = writeln!(out, "fc_w");
    let _ = writeln!(out, "{}", fmt_row(&m.fc_w));
    let _ = writeln!(out, "fc_b");
    let _ = writeln!(out, "{}", fmt_f64(m.fc_b));
    let _ = writeln!(out, "post_fir {}", m.post_fir.len());
    let _ = writeln!(out, "{}", fmt_row(&m.post_fir));
    let _ = writeln!(out, "end");
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

fn fmt_row(row: &[f64]) -> String {
    row.iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_matrix(out: &mut String, m: &Matrix) {
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| fmt_f64(m.get(r, c))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Save a model to a ROM file.
pub fn save_model(m: &LstmStack, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_rom(m)?)?;
    Ok(())
}

/// Load a model from a ROM file.
pub fn load_model(path: impl AsRef<Path>) -> Result<LstmStack> {
    let text = std::fs::read_to_string(path)?;
    parse_rom(&text)
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            iter: text.lines(),
            lineno: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        loop {
            let line = self
                .iter
                .next()
                .ok_or_else(|| Error::parse(self.lineno, "unexpected end of file"))?;
            self.lineno += 1;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok(trimmed);
            }
        }
    }

    fn expect_tag(&mut self, tag: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(tag)
            .map(str::trim)
            .ok_or_else(|| Error::parse(self.lineno, format!("expected {tag:?}, found {line:?}")))
    }

    fn parse_row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let lineno = self.lineno;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("non-numeric token {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != expected {
            return Err(Error::parse(
                lineno,
                format!("expected {expected} values, found {}", row.len()),
            ));
        }
        Ok(row)
    }

    fn parse_matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.parse_row(cols)?);
        }
        Matrix::from_rows(rows, cols, data)
    }
}

/// Parse ROM text into a model.
pub fn parse_rom(text: &str) -> Result<LstmStack> {
    let mut lines = Lines::new(text);

    let header = lines.next()?;
    let mut words = header.split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(Error::parse(lines.lineno, format!("not a {MAGIC} file")));
    }
    match words.next() {
        Some(VERSION) => {}
        Some(other) => return Err(Error::UnsupportedVersion(other.to_string())),
        None => return Err(Error::parse(lines.lineno, "missing format version")),
    }

    let input: usize = parse_scalar(lines.expect_tag("input")?, lines.lineno)?;
    let layer_count: usize = parse_scalar(lines.expect_tag("layers")?, lines.lineno)?;
    if layer_count == 0 {
        return Err(Error::parse(lines.lineno, "layer count must be >= 1"));
    }
    let hidden_line = lines.expect_tag("hidden")?;
    let hidden_lineno = lines.lineno;
    let hiddens: Vec<usize> = hidden_line
        .split_whitespace()
        .map(|tok| parse_scalar(tok, hidden_lineno))
        .collect::<Result<_>>()?;
    if hiddens.len() != layer_count {
        return Err(Error::parse(
            hidden_lineno,
            format!("{} hidden widths for {layer_count} layers", hiddens.len()),
        ));
    }
    let dropout: f64 = parse_scalar(lines.expect_tag("dropout")?, lines.lineno)?;

    let mut m = LstmStack::zeros(input, &hiddens)?;
    m.dropout_rate = dropout;

    for idx in 0..layer_count {
        let tag = lines.expect_tag("layer")?;
        let declared: usize = parse_scalar(tag, lines.lineno)?;
        if declared != idx {
            return Err(Error::parse(
                lines.lineno,
                format!("expected layer {idx}, found {declared}"),
            ));
        }
        let in_width = if idx == 0 { input } else { hiddens[idx - 1] };
        let hidden = hiddens[idx];
        for gate in GATE_NAMES {
            lines.expect_exact(&format!("w:{gate}"))?;
            let w = lines.parse_matrix(hidden, in_width)?;
            lines.expect_exact(&format!("wr:{gate}"))?;
            let wr = lines.parse_matrix(hidden, hidden)?;
            lines.expect_exact(&format!("b:{gate}"))?;
            let b = lines.parse_row(hidden)?;
            let layer = &mut m.layers[idx];
            match gate {
                "f" => {
                    layer.w_f = w;
                    layer.wr_f = wr;
                    layer.b_f = b;
                }
                "i" => {
                    layer.w_i = w;
                    layer.wr_i = wr;
                    layer.b_i = b;
                }
                "cs" => {
                    layer.w_cs = w;
                    layer.wr_cs = wr;
                    layer.b_cs = b;
                }
                _ => {
                    layer.w_o = w;
                    layer.wr_o = wr;
                    layer.b_o = b;
                }
            }
        }
    }

    lines.expect_exact("fc_w")?;
    m.fc_w = lines.parse_row(*hiddens.last().expect("non-empty"))?;
    lines.expect_exact("fc_b")?;
    let fc_b = lines.parse_row(1)?;
    m.fc_b = fc_b[0];
    let fir_len: usize = parse_scalar(lines.expect_tag("post_fir")?, lines.lineno)?;
    if fir_len == 0 {
        return Err(Error::parse(lines.lineno, "post_fir length must be >= 1"));
    }
    m.post_fir = lines.parse_row(fir_len)?;
    lines.expect_exact("end")?;

    m.validate()?;
    Ok(m)
}

impl<'a> Lines<'a> {
    fn expect_exact(&mut self, tag: &str) -> Result<()> {
        let line = self.next()?;
        if line != tag {
            return Err(Error::parse(
                self.lineno,
                format!("expected {tag:?}, found {line:?}"),
            ));
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(tok: &str, lineno: usize) -> Result<T> {
    tok.trim()
        .parse::<T>()
        .map_err(|_| Error::parse(lineno, format!("could not parse {tok:?}")))
}
