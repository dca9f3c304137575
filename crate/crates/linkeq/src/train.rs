//! Supervised training of the recurrent equalizer.
//!
//! Training windows pair `n` consecutive receive ticks with the transmitted
//! level at the (latency-corrected) final tick. Each window runs from zero
//! cell state with a zero-prefilled delay line, exactly like the first `n`
//! ticks of a fresh stream, so the window forward used here and the
//! streaming forward share one code path per step.
//!
//! Gradients come from backpropagation through time over the window (the
//! squared error of the final decoded sample, differentiated through the
//! decoder and every gate back to step 0); the optimizer is Adam with bias
//! correction. The loop validates every `validation_interval` steps over
//! the whole validation set and stops early once the mean validation loss
//! has failed to improve by more than `convergence_delta` for `patience`
//! consecutive validations. The best-validation parameters are returned.

use crate::error::{Error, Result};
use crate::lstm::{
    cell_step_cached, make_dropout_mask, sigmoid, CellState, DropoutMask, GateParams, LstmStack,
    Matrix,
};
use crate::rng::{derive_seed, SeededRng};
use crate::signal::{BitStream, LinkConfig, Waveform};

/// One training example: `n` receive ticks and the target level.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub target: f64,
}

/// A set of equal-length training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<Window>,
}

impl Dataset {
    pub fn new(windows: Vec<Window>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::data("dataset must contain at least one window"));
        }
        let n = windows[0].samples.len();
        if n == 0 {
            return Err(Error::data("windows must contain at least one sample"));
        }
        if windows.iter().any(|w| w.samples.len() != n) {
            return Err(Error::data("all windows must have the same length"));
        }
        Ok(Self { windows })
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows[0].samples.len()
    }

    /// Concatenate with another dataset of the same window length.
    pub fn merge(mut self, other: Dataset) -> Result<Dataset> {
        if other.window_len() != self.window_len() {
            return Err(Error::data(format!(
                "cannot merge window lengths {} and {}",
                self.window_len(),
                other.window_len()
            )));
        }
        self.windows.extend(other.windows);
        Ok(self)
    }
}

/// Build stride-1 training windows from a tick-rate receive waveform.
///
/// Window `j` covers ticks `j ..= j + n - 1`; its target is the transmitted
/// level of the bit containing tick `j + n - 1 - latency_offset`, where
/// `latency_offset` compensates the channel group delay in ticks (must be
/// `< n` so every window has a target). Produces `K = T - n + 1` windows
/// from `T` usable ticks.
pub fn build_dataset(
    tx: &BitStream,
    rx: &Waveform,
    cfg: &LinkConfig,
    latency_offset: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    let tick_rel = (rx.sample_period - cfg.delay_resolution).abs() / cfg.delay_resolution;
    if tick_rel > 1e-6 {
        return Err(Error::data(format!(
            "rx sample period ({}) is not the configured delay resolution ({})",
            rx.sample_period, cfg.delay_resolution
        )));
    }
    let n = cfg.delay_depth;
    let ticks = rx.len();
    if ticks < n {
        return Err(Error::data(format!(
            "{ticks} ticks cannot fill one window of {n}"
        )));
    }
    if latency_offset >= n {
        return Err(Error::data(format!(
            "latency offset ({latency_offset}) must be < delay depth ({n})"
        )));
    }
    let tpb = cfg.ticks_per_bit()?;
    let count = ticks - n + 1;
    let mut windows = Vec::with_capacity(count);
    for j in 0..count {
        let target_tick = j + n - 1 - latency_offset;
        let bit_index = target_tick / tpb;
        if bit_index >= tx.len() {
            return Err(Error::data(format!(
                "tick {target_tick} maps to bit {bit_index}, beyond the {} transmitted bits",
                tx.len()
            )));
        }
        windows.push(Window {
            samples: rx.samples[j..j + n].to_vec(),
            target: cfg.level(tx[bit_index]),
        });
    }
    Dataset::new(windows)
}

/// Estimate channel latency in ticks by cross-correlating the receive
/// stream against the ideal transmitted tick levels over lags `0..=max_lag`.
pub fn estimate_latency(
    tx: &BitStream,
    rx: &Waveform,
    cfg: &LinkConfig,
    max_lag: usize,
) -> Result<usize> {
    let tpb = cfg.ticks_per_bit()?;
    let ideal: Vec<f64> = (0..tx.len() * tpb)
        .map(|t| cfg.level(tx[t / tpb]))
        .collect();
    if rx.len() <= max_lag {
        return Err(Error::data("receive stream shorter than the maximum lag"));
    }
    let rx_mean = rx.samples.iter().sum::<f64>() / rx.len() as f64;
    let ideal_mean = ideal.iter().sum::<f64>() / ideal.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for lag in 0..=max_lag {
        let mut acc = 0.0;
        let mut count = 0usize;
        for t in lag..rx.len() {
            if t - lag >= ideal.len() {
                break;
            }
            acc += (rx.samples[t] - rx_mean) * (ideal[t - lag] - ideal_mean);
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let score = acc / count as f64;
        if score > best.0 {
            best = (score, lag);
        }
    }
    Ok(best.1)
}

/// Mean squared error between two equal-length vectors.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Uniform Xavier/Glorot initialization on
/// `[-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))]`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = SeededRng::new(seed);
    let mut m = Matrix::zeros(fan_out, fan_in);
    for v in m.data_mut() {
        *v = rng.uniform_in(-bound, bound);
    }
    m
}

/// Xavier-initialized equalizer stack. Weight matrices draw from the seeded
/// uniform law; biases start at zero; the post-filter is a moving average
/// of the given length.
pub fn init_stack(
    input_width: usize,
    hidden_widths: &[usize],
    dropout_rate: f64,
    post_fir_len: usize,
    seed: u64,
) -> Result<LstmStack> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::config(format!(
            "dropout rate must be in [0, 1), got {dropout_rate}"
        )));
    }
    if post_fir_len == 0 {
        return Err(Error::config("post-filter length must be >= 1"));
    }
    let mut m = LstmStack::zeros(input_width, hidden_widths)?;
    let mut stream = 0u64;
    let mut next_seed = || {
        stream += 1;
        derive_seed(seed, 17, stream)
    };
    for layer in &mut m.layers {
        let (fan_in, fan_out) = (layer.input_width(), layer.hidden_width());
        layer.w_f = xavier_init(fan_in, fan_out, next_seed());
        layer.w_i = xavier_init(fan_in, fan_out, next_seed());
        layer.w_cs = xavier_init(fan_in, fan_out, next_seed());
        layer.w_o = xavier_init(fan_in, fan_out, next_seed());
        layer.wr_f = xavier_init(fan_out, fan_out, next_seed());
        layer.wr_i = xavier_init(fan_out, fan_out, next_seed());
        layer.wr_cs = xavier_init(fan_out, fan_out, next_seed());
        layer.wr_o = xavier_init(fan_out, fan_out, next_seed());
    }
    let last = *hidden_widths.last().expect("validated non-empty");
    let fc = xavier_init(last, 1, next_seed());
    m.fc_w = fc.data().to_vec();
    m.fc_b = 0.0;
    m.dropout_rate = dropout_rate;
    m.post_fir = vec![1.0 / post_fir_len as f64; post_fir_len];
    Ok(m)
}

/// Gradient of the loss with respect to every trainable parameter:
/// per-layer gate weights/biases plus the decoder. Shape-congruent with
/// [`LstmStack`]; the post-filter is not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<GateParams>,
    pub fc_w: Vec<f64>,
    pub fc_b: f64,
}

impl Gradients {
    pub fn zeros_like(m: &LstmStack) -> Self {
        Self {
            layers: m
                .layers
                .iter()
                .map(|l| GateParams::zeros(l.input_width(), l.hidden_width()))
                .collect(),
            fc_w: vec![0.0; m.fc_w.len()],
            fc_b: 0.0,
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for mat in [
                &mut layer.w_f,
                &mut layer.w_i,
                &mut layer.w_cs,
                &mut layer.w_o,
                &mut layer.wr_f,
                &mut layer.wr_i,
                &mut layer.wr_cs,
                &mut layer.wr_o,
            ] {
                for v in mat.data_mut() {
                    *v *= s;
                }
            }
            for b in [
                &mut layer.b_f,
                &mut layer.b_i,
                &mut layer.b_cs,
                &mut layer.b_o,
            ] {
                for v in b.iter_mut() {
                    *v *= s;
                }
            }
        }
        for v in &mut self.fc_w {
            *v *= s;
        }
        self.fc_b *= s;
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ma, mb) in [
                (&mut a.w_f, &b.w_f),
                (&mut a.w_i, &b.w_i),
                (&mut a.w_cs, &b.w_cs),
                (&mut a.w_o, &b.w_o),
                (&mut a.wr_f, &b.wr_f),
                (&mut a.wr_i, &b.wr_i),
                (&mut a.wr_cs, &b.wr_cs),
                (&mut a.wr_o, &b.wr_o),
            ] {
                for (va, vb) in ma.data_mut().iter_mut().zip(mb.data()) {
                    *va += vb;
                }
            }
            for (ba, bb) in [
                (&mut a.b_f, &b.b_f),
                (&mut a.b_i, &b.b_i),
                (&mut a.b_cs, &b.b_cs),
                (&mut a.b_o, &b.b_o),
            ] {
                for (va, vb) in ba.iter_mut().zip(bb) {
                    *va += vb;
                }
            }
        }
        for (va, vb) in self.fc_w.iter_mut().zip(&other.fc_w) {
            *va += vb;
        }
        self.fc_b += other.fc_b;
    }
}

/// Fixed parameter order shared by the flattened views: per layer, per gate
/// (f, i, cs, o): W row-major, WR row-major, b; then fc_w, fc_b.
pub fn flatten_params(m: &LstmStack) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &m.layers {
        for (w, wr, b) in [
            (&layer.w_f, &layer.wr_f, &layer.b_f),
            (&layer.w_i, &layer.wr_i, &layer.b_i),
            (&layer.w_cs, &layer.wr_cs, &layer.b_cs),
            (&layer.w_o, &layer.wr_o, &layer.b_o),
        ] {
            out.extend_from_slice(w.data());
            out.extend_from_slice(wr.data());
            out.extend_from_slice(b);
        }
    }
    out.extend_from_slice(&m.fc_w);
    out.push(m.fc_b);
    out
}

/// Inverse of [`flatten_params`]; the vector length must match.
pub fn assign_params(m: &mut LstmStack, flat: &[f64]) -> Result<()> {
    let mut it = flat.iter();
    let mut take = |dst: &mut [f64]| -> Result<()> {
        for v in dst.iter_mut() {
            *v = *it
                .next()
                .ok_or_else(|| Error::shape("flat parameter vector too short"))?;
        }
        Ok(())
    };
    for layer in &mut m.layers {
        for (w, wr, b) in [
            (&mut layer.w_f, &mut layer.wr_f, &mut layer.b_f),
            (&mut layer.w_i, &mut layer.wr_i, &mut layer.b_i),
            (&mut layer.w_cs, &mut layer.wr_cs, &mut layer.b_cs),
            (&mut layer.w_o, &mut layer.wr_o, &mut layer.b_o),
        ] {
            take(w.data_mut())?;
            take(wr.data_mut())?;
            take(b)?;
        }
    }
    take(&mut m.fc_w)?;
    let mut fc_b = [0.0];
    take(&mut fc_b)?;
    m.fc_b = fc_b[0];
    if it.next().is_some() {
        return Err(Error::shape("flat parameter vector too long"));
    }
    Ok(())
}

fn flatten_grads(g: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &g.layers {
        for (w, wr, b) in [
            (&layer.w_f, &layer.wr_f, &layer.b_f),
            (&layer.w_i, &layer.wr_i, &layer.b_i),
            (&layer.w_cs, &layer.wr_cs, &layer.b_cs),
            (&layer.w_o, &layer.wr_o, &layer.b_o),
        ] {
            out.extend_from_slice(w.data());
            out.extend_from_slice(wr.data());
            out.extend_from_slice(b);
        }
    }
    out.extend_from_slice(&g.fc_w);
    out.push(g.fc_b);
    out
}

/// Run a window forward from zero state, returning the decoded output and
/// the per-step, per-layer activation caches.
///
/// Step `t` consumes the delay-line view of `window[..=t]` (zeros where the
/// line has not filled yet), mirroring the first `n` ticks of streaming.
fn window_forward(
    m: &LstmStack,
    window: &[f64],
    masks: Option<&[DropoutMask]>,
) -> Result<(f64, Vec<Vec<crate::lstm::CellCache>>, Vec<f64>)> {
    let n = m.input_width();
    if window.len() != n {
        return Err(Error::shape(format!(
            "window length {} != model input width {n}",
            window.len()
        )));
    }
    if let Some(masks) = masks {
        if masks.len() != m.layers.len() - 1 {
            return Err(Error::shape(format!(
                "{} dropout masks supplied for {} layer boundaries",
                masks.len(),
                m.layers.len() - 1
            )));
        }
    }
    let mut states: Vec<CellState> = m.zero_states();
    let mut caches: Vec<Vec<crate::lstm::CellCache>> = Vec::with_capacity(n);
    let mut top_h = Vec::new();
    for t in 0..n {
        let mut x: Vec<f64> = Vec::with_capacity(n);
        for k in 0..n {
            x.push(if t >= k { window[t - k] } else { 0.0 });
        }
        let mut step_caches = Vec::with_capacity(m.layers.len());
        let mut input = x;
        for (l, layer) in m.layers.iter().enumerate() {
            let (next, cache) = cell_step_cached(layer, &input, &states[l]);
            input = next.h.clone();
            if l + 1 < m.layers.len() {
                if let Some(masks) = masks {
                    masks[l].apply(&mut input);
                }
            }
            states[l] = next;
            step_caches.push(cache);
        }
        top_h = input;
        caches.push(step_caches);
    }
    let mut z = m.fc_b;
    for (w, h) in m.fc_w.iter().zip(&top_h) {
        z += w * h;
    }
    Ok((sigmoid(z), caches, top_h))
}

/// Decoded output of one window under inference semantics.
pub fn window_output(m: &LstmStack, window: &[f64]) -> Result<f64> {
    window_forward(m, window, None).map(|(y, _, _)| y)
}

/// Squared-error loss of one window.
pub fn window_loss(m: &LstmStack, window: &[f64], target: f64) -> Result<f64> {
    let y = window_output(m, window)?;
    Ok((y - target) * (y - target))
}

/// Loss and exact gradients for one window via backpropagation through
/// time, with zero-initialized state at the window start.
pub fn backward(m: &LstmStack, window: &[f64], target: f64) -> Result<(f64, Gradients)> {
    backward_with_masks(m, window, target, None)
}

/// [`backward`] with dropout masks applied at the layer boundaries, for
/// train-mode gradient steps. Gradients are exact for the masked forward.
pub fn backward_with_masks(
    m: &LstmStack,
    window: &[f64],
    target: f64,
    masks: Option<&[DropoutMask]>,
) -> Result<(f64, Gradients)> {
    let (y, caches, top_h) = window_forward(m, window, masks)?;
    let loss = (y - target) * (y - target);
    let steps = caches.len();
    let layers = m.layers.len();
    let mut g = Gradients::zeros_like(m);

    // Decoder gradients.
    let dz = 2.0 * (y - target) * y * (1.0 - y);
    g.fc_b = dz;
    for (gw, h) in g.fc_w.iter_mut().zip(&top_h) {
        *gw = dz * h;
    }

    // Per-layer carries flowing from step t+1 into step t.
    let mut dh_carry: Vec<Vec<f64>> = m
        .layers
        .iter()
        .map(|l| vec![0.0; l.hidden_width()])
        .collect();
    let mut dc_carry = dh_carry.clone();

    for t in (0..steps).rev() {
        // Gradient arriving at each layer's h output at this step from the
        // layer above (through the boundary mask).
        let mut dx_down: Option<Vec<f64>> = None;
        for l in (0..layers).rev() {
            let layer = &m.layers[l];
            let cache = &caches[t][l];
            let hidden = layer.hidden_width();

            let mut dh = std::mem::take(&mut dh_carry[l]);
            if l == layers - 1 && t == steps - 1 {
                for (d, w) in dh.iter_mut().zip(&m.fc_w) {
                    *d += dz * w;
                }
            }
            if l < layers - 1 {
                let dx = dx_down.take().expect("set by the layer above");
                if let Some(masks) = masks {
                    let mask = &masks[l];
                    for ((d, &up), &keep) in dh.iter_mut().zip(&dx).zip(&mask.keep_flags) {
                        if keep == 1 {
                            *d += up * mask.scale;
                        }
                    }
                } else {
                    for (d, &up) in dh.iter_mut().zip(&dx) {
                        *d += up;
                    }
                }
            }

            let dc_in = std::mem::take(&mut dc_carry[l]);
            let mut do_ = vec![0.0; hidden];
            let mut dc = vec![0.0; hidden];
            for k in 0..hidden {
                do_[k] = dh[k] * cache.tanh_c[k];
                dc[k] = dc_in[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            }

            let mut da_f = vec![0.0; hidden];
            let mut da_i = vec![0.0; hidden];
            let mut da_cs = vec![0.0; hidden];
            let mut da_o = vec![0.0; hidden];
            let mut next_dc_carry = vec![0.0; hidden];
            for k in 0..hidden {
                let df = dc[k] * cache.c_prev[k];
                let di = dc[k] * cache.cs[k];
                let dcs = dc[k] * cache.i[k];
                da_f[k] = df * cache.f[k] * (1.0 - cache.f[k]);
                da_i[k] = di * cache.i[k] * (1.0 - cache.i[k]);
                da_cs[k] = dcs * (1.0 - cache.cs[k] * cache.cs[k]);
                da_o[k] = do_[k] * cache.o[k] * (1.0 - cache.o[k]);
                next_dc_carry[k] = dc[k] * cache.f[k];
            }
            dc_carry[l] = next_dc_carry;

            let gl = &mut g.layers[l];
            gl.w_f.outer_add(&da_f, &cache.x);
            gl.w_i.outer_add(&da_i, &cache.x);
            gl.w_cs.outer_add(&da_cs, &cache.x);
            gl.w_o.outer_add(&da_o, &cache.x);
            gl.wr_f.outer_add(&da_f, &cache.h_prev);
            gl.wr_i.outer_add(&da_i, &cache.h_prev);
            gl.wr_cs.outer_add(&da_cs, &cache.h_prev);
            gl.wr_o.outer_add(&da_o, &cache.h_prev);
            for k in 0..hidden {
                gl.b_f[k] += da_f[k];
                gl.b_i[k] += da_i[k];
                gl.b_cs[k] += da_cs[k];
                gl.b_o[k] += da_o[k];
            }

            // Recurrent carry into step t-1.
            let mut next_dh_carry = vec![0.0; hidden];
            layer.wr_f.matvec_transpose_add(&da_f, &mut next_dh_carry);
            layer.wr_i.matvec_transpose_add(&da_i, &mut next_dh_carry);
            layer.wr_cs.matvec_transpose_add(&da_cs, &mut next_dh_carry);
            layer.wr_o.matvec_transpose_add(&da_o, &mut next_dh_carry);
            dh_carry[l] = next_dh_carry;

            // Input gradient for the layer below (unused at l == 0).
            if l > 0 {
                let mut dx = vec![0.0; layer.input_width()];
                layer.w_f.matvec_transpose_add(&da_f, &mut dx);
                layer.w_i.matvec_transpose_add(&da_i, &mut dx);
                layer.w_cs.matvec_transpose_add(&da_cs, &mut dx);
                layer.w_o.matvec_transpose_add(&da_o, &mut dx);
                dx_down = Some(dx);
            }
        }
    }

    Ok((loss, g))
}

/// Adam optimizer configuration and the training loop controls.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Validate every this many optimizer steps.
    pub validation_interval: usize,
    /// Consecutive non-improving validations tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds minibatch shuffling and dropout masks.
    pub seed: u64,
    /// Minimum validation-loss improvement that resets the patience counter.
    pub convergence_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            validation_interval: 100,
            patience: 5,
            max_epochs: 100,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            convergence_delta: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be > 0"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::config("beta1 and beta2 must be in (0, 1)"));
        }
        if self.validation_interval == 0 {
            return Err(Error::config("validation interval must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// First/second moment accumulators for Adam, in flattened parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(model: &LstmStack) -> Self {
        let n = flatten_params(model).len();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `step_index` counts from 1.
pub fn adam_step(
    params: &mut LstmStack,
    opt: &mut AdamState,
    g: &Gradients,
    step_index: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    if step_index == 0 {
        return Err(Error::config("Adam step index counts from 1"));
    }
    let mut flat = flatten_params(params);
    let grad = flatten_grads(g);
    if grad.len() != flat.len() {
        return Err(Error::shape(format!(
            "gradient length {} != parameter length {}",
            grad.len(),
            flat.len()
        )));
    }
    let t = step_index as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..flat.len() {
        opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * grad[i];
        opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        flat[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    assign_params(params, &flat)
}

/// Why training stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    /// Validation loss failed to improve by `convergence_delta` for
    /// `patience` consecutive validations.
    EarlyStopped,
    /// The epoch budget ran out.
    MaxEpochs,
    /// No optimizer step ran (empty budget).
    NoSteps,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::EarlyStopped => write!(f, "early-stopped"),
            StopReason::MaxEpochs => write!(f, "max-epochs"),
            StopReason::NoSteps => write!(f, "no-steps"),
        }
    }
}

/// Everything a training run records: per-step training losses, the
/// validation trace, why it stopped, and the best-validation parameters.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub step_losses: Vec<(usize, f64)>,
    pub validations: Vec<(usize, f64)>,
    pub stop_reason: StopReason,
    pub best_valid_loss: Option<f64>,
    pub model: LstmStack,
}

/// Mean windowed loss over a dataset under inference semantics.
pub fn dataset_loss(m: &LstmStack, data: &Dataset) -> Result<f64> {
    let mut acc = 0.0;
    for w in data.windows() {
        acc += window_loss(m, &w.samples, w.target)?;
    }
    Ok(acc / data.len() as f64)
}

/// Minibatch training with periodic validation and early stopping.
pub fn train(
    m0: &LstmStack,
    train_data: &Dataset,
    valid_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    m0.validate()?;
    let n = m0.input_width();
    if train_data.window_len() != n || valid_data.window_len() != n {
        return Err(Error::shape(format!(
            "dataset window length ({} train / {} valid) != model input width {n}",
            train_data.window_len(),
            valid_data.window_len()
        )));
    }

    let mut model = m0.clone();
    let mut opt = AdamState::new(&model);
    let mut report = TrainReport {
        step_losses: Vec::new(),
        validations: Vec::new(),
        stop_reason: StopReason::NoSteps,
        best_valid_loss: None,
        model: m0.clone(),
    };

    let use_dropout = model.dropout_rate > 0.0 && model.layers.len() > 1;
    let boundary_widths: Vec<usize> = model
        .layers
        .iter()
        .take(model.layers.len() - 1)
        .map(|l| l.hidden_width())
        .collect();

    let mut step = 0usize;
    let mut stall = 0usize;
    let mut best = f64::INFINITY;
    let mut last_validated_step = 0usize;

    'epochs: for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut shuffle_rng = SeededRng::new(derive_seed(cfg.seed, 1, epoch as u64));
        // Fisher-Yates.
        for i in (1..order.len()).rev() {
            let j = (shuffle_rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }

        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut batch_grad = Gradients::zeros_like(&model);
            let mut batch_loss = 0.0;
            // Deterministic window-order accumulation.
            for &idx in batch {
                let w = &train_data.windows()[idx];
                let masks: Option<Vec<DropoutMask>> = if use_dropout {
                    let masks = boundary_widths
                        .iter()
                        .enumerate()
                        .map(|(b, &width)| {
                            let seed = derive_seed(
                                cfg.seed,
                                2,
                                (step as u64) << 32 | (idx as u64) ^ ((b as u64) << 56),
                            );
                            make_dropout_mask(model.dropout_rate, width, seed)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(masks)
                } else {
                    None
                };
                let (loss, g) =
                    backward_with_masks(&model, &w.samples, w.target, masks.as_deref())?;
                batch_loss += loss;
                batch_grad.add(&g);
            }
            let scale = 1.0 / batch.len() as f64;
            batch_grad.scale(scale);
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at step {step} (epoch {epoch})"
                )));
            }
            adam_step(&mut model, &mut opt, &batch_grad, step, cfg)?;
            report.step_losses.push((step, batch_loss));

            if step.is_multiple_of(cfg.validation_interval) {
                let vloss = dataset_loss(&model, valid_data)?;
                if !vloss.is_finite() {
                    return Err(Error::Training(format!(
                        "validation loss became non-finite at step {step}"
                    )));
                }
                report.validations.push((step, vloss));
                last_validated_step = step;
                if vloss < best {
                    report.model = model.clone();
                    report.best_valid_loss = Some(vloss);
                }
                if vloss < best - cfg.convergence_delta {
                    stall = 0;
                } else {
                    stall += 1;
                }
                best = best.min(vloss);
                if stall >= cfg.patience {
                    report.stop_reason = StopReason::EarlyStopped;
                    break 'epochs;
                }
            }
        }
    }

    if step > 0 && report.stop_reason == StopReason::NoSteps {
        report.stop_reason = StopReason::MaxEpochs;
    }
    // Close the books with a final validation if the last step missed one.
    if step > 0 && last_validated_step != step {
        let vloss = dataset_loss(&model, valid_data)?;
        if !vloss.is_finite() {
            return Err(Error::Training(
                "final validation loss became non-finite".into(),
            ));
        }
        report.validations.push((step, vloss));
        if vloss < best {
            report.model = model.clone();
            report.best_valid_loss = Some(vloss);
        }
    }
    Ok(report)
}
