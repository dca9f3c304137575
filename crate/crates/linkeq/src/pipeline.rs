//! End-to-end experiment assembly: simulate a link, align streams, build
//! training data, and run the three receive pipelines (raw slicer, FFE-DFE,
//! trained equalizer) over the same realization.
//!
//! Alignment convention: the simulated tick stream is trimmed so that the
//! channel group delay becomes a whole number of bits. After the trim, bit
//! `b` occupies ticks `[b * tpb, (b + 1) * tpb)` up to a whole-bit lag that
//! the BER search recovers, decision samples sit at `tpb / 2`, and the
//! remaining delay (a multiple of `tpb`) is the dataset latency offset.

use crate::baseline::{
    dfe_correct_waveform, ffe_apply, fit_dfe_taps_at, fit_ffe_taps, DfeTaps, FfeTaps,
};
use crate::channel::{add_awgn, apply_channel, ImpulseResponse};
use crate::error::{Error, Result};
use crate::eye::{accumulate_eye, centered_phase_offset, eye_metrics, EyeHistogram, EyeReport};
use crate::lstm::{equalize_stream, LstmStack};
use crate::signal::{
    generate_bits, modulate_nrz, sample_and_hold, slice_bits, BitKind, BitStream, LinkConfig,
    Waveform,
};
use crate::train::{build_dataset, estimate_latency, Dataset};

/// A link plus channel plus noise level: everything needed to simulate one
/// receive stream.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub link: LinkConfig,
    /// Channel response; its tap period must be an integer multiple of the
    /// link sample period (bit-spaced or tick-spaced taps are typical).
    pub channel: ImpulseResponse,
    pub noise_sigma: f64,
}

/// One simulated realization of a link.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub tx: BitStream,
    /// Received waveform at the modulation sample rate.
    pub rx: Waveform,
    /// Received waveform resampled to the equalizer tick cadence, trimmed
    /// so bit intervals align to tick-index multiples of `ticks_per_bit`.
    pub rx_ticks: Waveform,
    /// Remaining group delay after trimming, in ticks (a whole number of
    /// bits); use as the dataset latency offset.
    pub latency_ticks: usize,
    /// Sub-bit trim applied to the tick stream, in ticks.
    pub trim_ticks: usize,
}

impl Experiment {
    /// The channel expanded onto the modulation sample grid.
    pub fn channel_at_sample_rate(&self) -> Result<ImpulseResponse> {
        self.channel.expand_to(self.link.sample_period())
    }

    /// Simulate `nbits` through the channel with additive noise, and align
    /// the tick stream (see the module docs for the convention).
    pub fn simulate(
        &self,
        nbits: usize,
        kind: BitKind,
        bits_seed: u64,
        noise_seed: u64,
    ) -> Result<SimRun> {
        self.link.validate()?;
        let tx = generate_bits(bits_seed, nbits, kind)?;
        let clean = modulate_nrz(&tx, &self.link)?;
        let h = self.channel_at_sample_rate()?;
        let distorted = apply_channel(&clean, &h)?;
        let rx = add_awgn(&distorted, self.noise_sigma, noise_seed)?;

        let period = self.link.tick_period_samples()?;
        let ticks_raw = sample_and_hold(&rx, 0, period)?;
        let tpb = self.link.ticks_per_bit()?;

        // Total delay in ticks from the channel (and pulse shaping), then
        // split into a sub-bit trim and a whole-bit latency.
        let max_lag = (self.channel.taps.len()
            * (self.channel.tap_period / self.link.delay_resolution).round() as usize
            + 4 * tpb)
            .min(ticks_raw.len().saturating_sub(1));
        let delay = estimate_latency(&tx, &ticks_raw, &self.link, max_lag)?;
        let trim = delay % tpb;
        let rx_ticks = Waveform::new(ticks_raw.samples[trim..].to_vec(), ticks_raw.sample_period)?;
        Ok(SimRun {
            tx,
            rx,
            rx_ticks,
            latency_ticks: delay - trim,
            trim_ticks: trim,
        })
    }
}

/// Training windows from an aligned run. The latency offset must stay
/// below the delay depth; longer channels need a deeper delay line.
pub fn windows_from_run(run: &SimRun, cfg: &LinkConfig) -> Result<Dataset> {
    if run.latency_ticks >= cfg.delay_depth {
        return Err(Error::data(format!(
            "channel latency ({} ticks) reaches past the delay line ({} taps); \
             increase delay_depth",
            run.latency_ticks, cfg.delay_depth
        )));
    }
    build_dataset(&run.tx, &run.rx_ticks, cfg, run.latency_ticks)
}

/// Decisions and the tick-rate waveform a pipeline produced, ready for BER
/// and eye evaluation.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bits: BitStream,
    pub wave_ticks: Waveform,
}

impl PipelineOutput {
    /// Fold the pipeline waveform into an eye centered on the decision
    /// phase.
    pub fn eye(&self, cfg: &LinkConfig, span_ui: usize) -> Result<EyeHistogram> {
        let tpb = cfg.ticks_per_bit()?;
        accumulate_eye(
            &self.wave_ticks,
            cfg,
            centered_phase_offset(tpb, span_ui),
            span_ui,
        )
    }

    pub fn eye_report(&self, cfg: &LinkConfig, span_ui: usize) -> Result<EyeReport> {
        eye_metrics(&self.eye(cfg, span_ui)?, cfg)
    }
}

/// Unequalized receive path: slice the aligned tick stream at bit centers.
pub fn raw_pipeline(run: &SimRun, cfg: &LinkConfig) -> Result<PipelineOutput> {
    let tpb = cfg.ticks_per_bit()?;
    let bits = slice_bits(&run.rx_ticks, tpb, cfg.mid_level())?;
    Ok(PipelineOutput {
        bits,
        wave_ticks: run.rx_ticks.clone(),
    })
}

/// Trained-equalizer receive path.
pub fn lstm_pipeline(model: &LstmStack, run: &SimRun, cfg: &LinkConfig) -> Result<PipelineOutput> {
    let (analog, bits) = equalize_stream(model, &run.rx_ticks, cfg)?;
    Ok(PipelineOutput {
        bits,
        wave_ticks: analog,
    })
}

/// Channel response to one isolated unit bit (the pulse response): the
/// trapezoid bit shape at unit swing pushed through the channel, with
/// enough leading and trailing zero bits for cursor fitting. Symbol-spaced
/// equalizer fits work on this, not on the raw impulse response, because
/// every sample of a bit excites the channel.
pub fn bit_pulse_response(
    cfg: &LinkConfig,
    channel: &ImpulseResponse,
    tail_bits: usize,
) -> Result<ImpulseResponse> {
    let mut unit_cfg = cfg.clone();
    unit_cfg.high_level = 1.0;
    unit_cfg.low_level = 0.0;
    let mut bits = vec![0u8; 2];
    bits.push(1);
    bits.extend(std::iter::repeat_n(0, tail_bits.max(2)));
    let shaped = modulate_nrz(&BitStream::new(bits)?, &unit_cfg)?;
    let h = channel.expand_to(cfg.sample_period())?;
    let response = apply_channel(&shaped, &h)?;
    ImpulseResponse::new(response.samples, cfg.sample_period())
}

fn pulse_peak(pulse: &ImpulseResponse) -> usize {
    pulse
        .taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Classical receive path: FFE at the sample rate, DFE per bit, output
/// resampled to the tick cadence. The decision phase anchors to the raw
/// bit-pulse peak shifted by the FFE latency (the least-squares cursor
/// grid), not to the global maximum of the equalized pulse, which can sit
/// between cursors.
pub fn baseline_pipeline(
    ffe: &FfeTaps,
    dfe: &DfeTaps,
    channel: &ImpulseResponse,
    run: &SimRun,
    cfg: &LinkConfig,
) -> Result<PipelineOutput> {
    let spb = cfg.samples_per_bit;
    let equalized = ffe_apply(ffe, &run.rx, spb)?;

    let raw_pulse = bit_pulse_response(cfg, channel, ffe.postcursors.len() + dfe.taps.len() + 4)?;
    let main_pos = pulse_peak(&raw_pulse) + ffe.latency_samples(spb);
    // Decisions land at trim + k*spb + spb/2; put them on the cursor grid.
    let trim = (main_pos as isize - (spb / 2) as isize).rem_euclid(spb as isize) as usize;
    if equalized.len() <= trim + spb {
        return Err(Error::data("equalized stream too short after alignment"));
    }
    let aligned = Waveform::new(equalized.samples[trim..].to_vec(), equalized.sample_period)?;

    let (bits, corrected) = dfe_correct_waveform(dfe, &aligned, spb)?;
    let wave_ticks = sample_and_hold(&corrected, 0, cfg.tick_period_samples()?)?;
    Ok(PipelineOutput { bits, wave_ticks })
}

/// Fit FFE and DFE taps for a channel from its bit pulse response: least
/// squares for the FFE, tail read-off for the DFE, both at bit spacing.
/// The DFE reads the equalized pulse on the least-squares cursor grid.
pub fn fit_baseline(
    cfg: &LinkConfig,
    channel: &ImpulseResponse,
    n_pre: usize,
    n_post: usize,
    n_dfe: usize,
) -> Result<(FfeTaps, DfeTaps, f64)> {
    let pulse = bit_pulse_response(cfg, channel, n_pre + n_post + n_dfe + 4)?;
    let raw_peak = pulse_peak(&pulse);
    let (ffe, residual) = fit_ffe_taps(&pulse, n_pre, n_post, cfg.samples_per_bit)?;
    let combined = ffe_apply(
        &ffe,
        &Waveform::new(pulse.taps, cfg.sample_period())?,
        cfg.samples_per_bit,
    )?;
    let equalized = ImpulseResponse::new(combined.samples, cfg.sample_period())?;
    let main_pos = raw_peak + ffe.latency_samples(cfg.samples_per_bit);
    let dfe = fit_dfe_taps_at(&equalized, main_pos, n_dfe, cfg)?;
    Ok((ffe, dfe, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synth_lossy_channel;
    use crate::eye::ber;

    fn desk_link(spb: usize, tpb: usize, depth: usize) -> LinkConfig {
        let bit_rate = 20e9;
        LinkConfig {
            bit_rate,
            samples_per_bit: spb,
            high_level: 1.0,
            low_level: 0.0,
            rise_samples: 1,
            fall_samples: 1,
            delay_depth: depth,
            delay_resolution: 1.0 / bit_rate / tpb as f64,
        }
    }

    #[test]
    fn identity_channel_raw_pipeline_is_error_free() {
        let link = desk_link(8, 4, 12);
        let channel = ImpulseResponse::new(vec![1.0], link.sample_period()).unwrap();
        let exp = Experiment {
            link: link.clone(),
            channel,
            noise_sigma: 0.0,
        };
        let run = exp.simulate(400, BitKind::Bernoulli(0.5), 1, 2).unwrap();
        assert_eq!(run.latency_ticks, 0);
        let out = raw_pipeline(&run, &link).unwrap();
        let (rate, lag) = ber(&run.tx, &out.bits, 4).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(lag, 0);
    }

    #[test]
    fn lossy_channel_closes_raw_eye_and_baseline_opens_it() {
        let link = desk_link(8, 4, 15);
        // Bit-spaced decaying channel: strong trailing ISI.
        let channel = synth_lossy_channel(0.6, 0, 0.0, 10, link.bit_period()).unwrap();
        let exp = Experiment {
            link: link.clone(),
            channel: channel.clone(),
            noise_sigma: 0.01,
        };
        let run = exp.simulate(2000, BitKind::Bernoulli(0.5), 3, 4).unwrap();

        let raw = raw_pipeline(&run, &link).unwrap();
        let (raw_ber, _) = ber(&run.tx, &raw.bits, 32).unwrap();
        assert!(raw_ber > 0.05, "raw BER {raw_ber}");

        let (ffe, dfe, _) = fit_baseline(&link, &channel, 2, 4, 6).unwrap();
        let eq = baseline_pipeline(&ffe, &dfe, &channel, &run, &link).unwrap();
        let (eq_ber, _) = ber(&run.tx, &eq.bits, 32).unwrap();
        assert!(
            eq_ber < raw_ber / 5.0,
            "baseline BER {eq_ber} vs raw {raw_ber}"
        );
    }

    #[test]
    fn windows_align_with_latency() {
        let link = desk_link(8, 4, 15);
        let channel = synth_lossy_channel(0.5, 0, 0.0, 6, link.bit_period()).unwrap();
        let exp = Experiment {
            link: link.clone(),
            channel,
            noise_sigma: 0.0,
        };
        let run = exp.simulate(300, BitKind::Bernoulli(0.5), 7, 8).unwrap();
        let ds = windows_from_run(&run, &link).unwrap();
        assert_eq!(ds.len(), run.rx_ticks.len() - link.delay_depth + 1);
        // Targets are levels.
        assert!(ds
            .windows()
            .iter()
            .all(|w| w.target == 0.0 || w.target == 1.0));
    }
}
