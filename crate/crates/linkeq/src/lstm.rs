//! The recurrent gated equalizer.
//!
//! A stack of LSTM layers reads the receive delay-line vector once per
//! equalizer clock tick. Each cell keeps a long memory `c` and a hidden
//! state `h`; four gates (forget, input, cell candidate, output) control
//! how much past distortion context survives into the next decision:
//!
//! ```text
//! f = sig(w_f x + wr_f h_prev + b_f)        i, o analogous
//! cs = tanh(w_cs x + wr_cs h_prev + b_cs)
//! c  = f * c_prev + i * cs                  (elementwise)
//! h  = o * tanh(c)
//! ```
//!
//! The top hidden vector feeds a sigmoid fully-connected decoder producing
//! one equalized sample per tick, and a short FIR post-filter smooths the
//! decoded stream. Dropout (inverted convention: survivors are scaled by
//! `1 / (1 - rate)` at train time) applies only between stacked layers,
//! never on the recurrent path, so inference needs no rescaling.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::signal::{slice_bits, BitStream, DelayLine, LinkConfig, Waveform};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// out += M x
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *o += acc;
        }
    }

    /// out += M^T d
    pub fn matvec_transpose_add(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &dr) in d.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += dr * w;
            }
        }
    }

    /// self += d (outer) x
    pub fn outer_add(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &dr) in d.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += dr * xi;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Trainable parameters of one LSTM layer: per-gate input weights `w`,
/// recurrent weights `wr` and biases `b`, in gate order f, i, cs, o.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_cs: Matrix,
    pub w_o: Matrix,
    pub wr_f: Matrix,
    pub wr_i: Matrix,
    pub wr_cs: Matrix,
    pub wr_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_cs: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl GateParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_f: Matrix::zeros(hidden, input),
            w_i: Matrix::zeros(hidden, input),
            w_cs: Matrix::zeros(hidden, input),
            w_o: Matrix::zeros(hidden, input),
            wr_f: Matrix::zeros(hidden, hidden),
            wr_i: Matrix::zeros(hidden, hidden),
            wr_cs: Matrix::zeros(hidden, hidden),
            wr_o: Matrix::zeros(hidden, hidden),
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_cs: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_f.cols()
    }

    pub fn hidden_width(&self) -> usize {
        self.w_f.rows()
    }

    fn validate(&self) -> Result<()> {
        let (h, n) = (self.hidden_width(), self.input_width());
        let input_shapes = [&self.w_f, &self.w_i, &self.w_cs, &self.w_o]
            .iter()
            .all(|m| m.rows() == h && m.cols() == n);
        let recur_shapes = [&self.wr_f, &self.wr_i, &self.wr_cs, &self.wr_o]
            .iter()
            .all(|m| m.rows() == h && m.cols() == h);
        let bias_shapes = [&self.b_f, &self.b_i, &self.b_cs, &self.b_o]
            .iter()
            .all(|b| b.len() == h);
        if !(input_shapes && recur_shapes && bias_shapes) {
            return Err(Error::shape("gate parameter shapes are inconsistent"));
        }
        let finite = [
            &self.w_f,
            &self.w_i,
            &self.w_cs,
            &self.w_o,
            &self.wr_f,
            &self.wr_i,
            &self.wr_cs,
            &self.wr_o,
        ]
        .iter()
        .all(|m| m.is_finite())
            && [&self.b_f, &self.b_i, &self.b_cs, &self.b_o]
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::data("gate parameters must be finite"));
        }
        Ok(())
    }
}

/// Hidden and long-memory state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Per-channel keep/drop flags with the inverted-dropout scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// 1 keeps the channel, 0 silences it.
    pub keep_flags: Vec<u8>,
    /// 1 / (1 - rate); applied to surviving channels.
    pub scale: f64,
}

impl DropoutMask {
    /// Identity mask (keeps everything, scale 1).
    pub fn identity(width: usize) -> Self {
        Self {
            keep_flags: vec![1; width],
            scale: 1.0,
        }
    }

    pub fn apply(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.keep_flags.len());
        for (x, &keep) in v.iter_mut().zip(&self.keep_flags) {
            *x = if keep == 1 { *x * self.scale } else { 0.0 };
        }
    }
}

/// Sample a dropout mask: each flag drops (0) independently with
/// probability `rate`; survivors carry scale `1 / (1 - rate)`.
pub fn make_dropout_mask(rate: f64, width: usize, seed: u64) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let keep_flags = (0..width).map(|_| u8::from(!rng.bernoulli(rate))).collect();
    Ok(DropoutMask {
        keep_flags,
        scale: 1.0 / (1.0 - rate),
    })
}

/// Forward mode: inference is mask-free; training applies one mask per
/// layer boundary (so `layers - 1` masks).
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Infer,
    Train(&'a [DropoutMask]),
}

/// The full trainable equalizer: stacked LSTM layers, a sigmoid
/// fully-connected decoder, and the output FIR post-filter.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<GateParams>,
    pub dropout_rate: f64,
    pub fc_w: Vec<f64>,
    pub fc_b: f64,
    pub post_fir: Vec<f64>,
}

impl LstmStack {
    /// All-zero parameters for the given layer widths.
    pub fn zeros(input_width: usize, hidden_widths: &[usize]) -> Result<Self> {
        if hidden_widths.is_empty() {
            return Err(Error::config("stack needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(hidden_widths.len());
        let mut width = input_width;
        for &h in hidden_widths {
            layers.push(GateParams::zeros(width, h));
            width = h;
        }
        Ok(Self {
            layers,
            dropout_rate: 0.0,
            fc_w: vec![0.0; width],
            fc_b: 0.0,
            post_fir: vec![1.0],
        })
    }

    /// Delay-line width consumed per tick.
    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_width()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("stack has no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 && layer.input_width() != self.layers[i - 1].hidden_width() {
                return Err(Error::shape(format!(
                    "layer {i} input width {} != layer {} hidden width {}",
                    layer.input_width(),
                    i - 1,
                    self.layers[i - 1].hidden_width()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let last = self.layers.last().expect("non-empty");
        if self.fc_w.len() != last.hidden_width() {
            return Err(Error::shape(format!(
                "decoder width {} != top hidden width {}",
                self.fc_w.len(),
                last.hidden_width()
            )));
        }
        if self.post_fir.is_empty() {
            return Err(Error::config("post-filter needs at least one tap"));
        }
        Ok(())
    }

    /// One zero state per layer, ready for a fresh stream or window.
    pub fn zero_states(&self) -> Vec<CellState> {
        self.layers
            .iter()
            .map(|l| CellState::zeros(l.hidden_width()))
            .collect()
    }
}

/// Intermediate activations of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct CellCache {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub cs: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

pub(crate) fn cell_step_cached(
    p: &GateParams,
    x: &[f64],
    state: &CellState,
) -> (CellState, CellCache) {
    let hidden = p.hidden_width();
    let mut pre_f = p.b_f.clone();
    let mut pre_i = p.b_i.clone();
    let mut pre_cs = p.b_cs.clone();
    let mut pre_o = p.b_o.clone();
    p.w_f.matvec_add(x, &mut pre_f);
    p.w_i.matvec_add(x, &mut pre_i);
    p.w_cs.matvec_add(x, &mut pre_cs);
    p.w_o.matvec_add(x, &mut pre_o);
    p.wr_f.matvec_add(&state.h, &mut pre_f);
    p.wr_i.matvec_add(&state.h, &mut pre_i);
    p.wr_cs.matvec_add(&state.h, &mut pre_cs);
    p.wr_o.matvec_add(&state.h, &mut pre_o);

    let f: Vec<f64> = pre_f.iter().map(|&v| sigmoid(v)).collect();
    let i: Vec<f64> = pre_i.iter().map(|&v| sigmoid(v)).collect();
    let cs: Vec<f64> = pre_cs.iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = pre_o.iter().map(|&v| sigmoid(v)).collect();

    let mut c = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for k in 0..hidden {
        c[k] = f[k] * state.c[k] + i[k] * cs[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }

    let cache = CellCache {
        f,
        i,
        cs,
        o,
        tanh_c,
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
    };
    (CellState { h, c }, cache)
}

/// Advance one LSTM cell by one tick. The input state is not modified.
pub fn cell_step(p: &GateParams, x: &[f64], state: &CellState) -> Result<CellState> {
    if x.len() != p.input_width() {
        return Err(Error::shape(format!(
            "input width {} != expected {}",
            x.len(),
            p.input_width()
        )));
    }
    if state.h.len() != p.hidden_width() || state.c.len() != p.hidden_width() {
        return Err(Error::shape(format!(
            "state width {} != hidden width {}",
            state.h.len(),
            p.hidden_width()
        )));
    }
    Ok(cell_step_cached(p, x, state).0)
}

/// One tick through the whole stack: returns the pre-filter decoder output
/// and the refreshed per-layer states.
pub fn stack_forward(
    m: &LstmStack,
    x: &[f64],
    states: &[CellState],
    mode: Mode,
) -> Result<(f64, Vec<CellState>)> {
    if states.len() != m.layers.len() {
        return Err(Error::shape(format!(
            "{} states supplied for {} layers",
            states.len(),
            m.layers.len()
        )));
    }
    if let Mode::Train(masks) = mode {
        if masks.len() != m.layers.len() - 1 {
            return Err(Error::shape(format!(
                "{} dropout masks supplied for {} layer boundaries",
                masks.len(),
                m.layers.len() - 1
            )));
        }
    }

    let mut new_states = Vec::with_capacity(m.layers.len());
    let mut input = x.to_vec();
    for (l, layer) in m.layers.iter().enumerate() {
        let next = cell_step(layer, &input, &states[l])?;
        input = next.h.clone();
        if l + 1 < m.layers.len() {
            if let Mode::Train(masks) = mode {
                masks[l].apply(&mut input);
            }
        }
        new_states.push(next);
    }

    let mut z = m.fc_b;
    for (w, h) in m.fc_w.iter().zip(&input) {
        z += w * h;
    }
    Ok((sigmoid(z), new_states))
}

/// Causal FIR smoothing of the decoded stream; same convolution semantics
/// as the channel model (zero-padded history).
pub fn fir_postfilter(y: &Waveform, taps: &[f64]) -> Result<Waveform> {
    if taps.is_empty() {
        return Err(Error::config("post-filter needs at least one tap"));
    }
    Waveform::new(
        crate::channel::convolve_causal(&y.samples, taps),
        y.sample_period,
    )
}

/// Run the equalizer over a received stream, one tick per input sample.
///
/// The delay line starts zero-filled and cell states persist across the
/// whole stream. Output bits are sliced from the post-filtered analog
/// stream at bit centers (a sample at or above the configured mid-level
/// decides 1). `rx` must already be at the equalizer tick cadence with an
/// integer number of ticks per bit.
pub fn equalize_stream(
    m: &LstmStack,
    rx: &Waveform,
    cfg: &LinkConfig,
) -> Result<(Waveform, BitStream)> {
    m.validate()?;
    cfg.validate()?;
    if m.input_width() != cfg.delay_depth {
        return Err(Error::shape(format!(
            "model input width {} != configured delay depth {}",
            m.input_width(),
            cfg.delay_depth
        )));
    }
    let ratio = cfg.bit_period() / rx.sample_period;
    let ticks_per_bit = ratio.round();
    if (ratio - ticks_per_bit).abs() > 1e-6 * ratio || ticks_per_bit < 1.0 {
        return Err(Error::config(format!(
            "bit period ({}) is not an integer number of input samples ({})",
            cfg.bit_period(),
            rx.sample_period
        )));
    }
    let ticks_per_bit = ticks_per_bit as usize;

    let mut delay = DelayLine::new(cfg.delay_depth)?;
    let mut states = m.zero_states();
    let mut decoded = Vec::with_capacity(rx.len());
    for &sample in &rx.samples {
        let window = delay.push(sample).to_vec();
        let (y, next) = stack_forward(m, &window, &states, Mode::Infer)?;
        states = next;
        decoded.push(y);
    }

    let analog = fir_postfilter(&Waveform::new(decoded, rx.sample_period)?, &m.post_fir)?;
    let bits = slice_bits(&analog, ticks_per_bit, cfg.mid_level())?;
    Ok((analog, bits))
}
