//! Experiment configuration: a single TOML file with labeled sections.
//!
//! Exactly one channel source must be configured (synthetic parameters, an
//! impulse-response CSV, or a Touchstone file); referenced files must exist
//! when the config loads. All randomness flows from the named seeds so a
//! run replays exactly; `--seed N` rederives every named seed from N.

use std::path::{Path, PathBuf};

use linkeq::baseline::{DfeTaps, FfeTaps};
use linkeq::channel::ImpulseResponse;
use linkeq::error::Error;
use linkeq::rng::derive_seed;
use linkeq::signal::{BitKind, LinkConfig};
use linkeq::touchstone::{parse_touchstone, s21_to_impulse, SpectrumWindow};
use linkeq::train::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub link: LinkSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub bit_rate: f64,
    pub samples_per_bit: usize,
    #[serde(default = "default_high")]
    pub high_level: f64,
    #[serde(default)]
    pub low_level: f64,
    #[serde(default = "default_edge")]
    pub rise_samples: usize,
    #[serde(default = "default_edge")]
    pub fall_samples: usize,
    pub delay_depth: usize,
    /// Seconds per equalizer tick.
    pub delay_resolution: f64,
}

fn default_high() -> f64 {
    1.0
}

fn default_edge() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub kind: ChannelKind,
    // synthetic
    pub decay: Option<f64>,
    #[serde(default)]
    pub echo_gain: f64,
    #[serde(default)]
    pub echo_delay_taps: usize,
    pub length_taps: Option<usize>,
    #[serde(default)]
    pub tap_spacing: TapSpacing,
    // impulse-csv / touchstone
    pub path: Option<PathBuf>,
    pub n_fft: Option<usize>,
    #[serde(default)]
    pub window: WindowKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    Synthetic,
    ImpulseCsv,
    Touchstone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TapSpacing {
    #[default]
    Bit,
    Tick,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    None,
    Hann,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub kind: SignalKind,
    pub p: f64,
    pub train_bits: usize,
    pub valid_bits: usize,
    pub test_bits: usize,
    pub noise_sigma: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            kind: SignalKind::Bernoulli,
            p: 0.5,
            train_bits: 4000,
            valid_bits: 1000,
            test_bits: 10_000,
            noise_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Bernoulli,
    Prbs7,
    Prbs15,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// 0 selects the default: half the ticks per bit, at least 1.
    pub post_fir_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![20],
            dropout: 0.0,
            post_fir_len: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub convergence_delta: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            validation_interval: d.validation_interval,
            patience: d.patience,
            max_epochs: 10,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            convergence_delta: d.convergence_delta,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    // Fit request.
    pub n_pre: Option<usize>,
    pub n_post: Option<usize>,
    pub n_dfe: Option<usize>,
    // Explicit labeled taps.
    pub precursors: Option<Vec<f64>>,
    pub main: Option<f64>,
    pub postcursors: Option<Vec<f64>>,
    pub dfe: Option<Vec<f64>>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub bits: u64,
    pub noise: u64,
    pub init: u64,
    pub dropout: u64,
    pub shuffle: u64,
    pub test_bits: u64,
    pub test_noise: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            bits: 1,
            noise: 2,
            init: 3,
            dropout: 4,
            shuffle: 5,
            test_bits: 6,
            test_noise: 7,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_lag_bits: usize,
    pub span_ui: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_lag_bits: 64,
            span_ui: 2,
        }
    }
}

/// Baseline taps: given explicitly or to be fitted.
#[derive(Debug, Clone)]
pub enum BaselineSpec {
    Explicit {
        ffe: FfeTaps,
        dfe: DfeTaps,
    },
    Fit {
        n_pre: usize,
        n_post: usize,
        n_dfe: usize,
    },
}

/// Fully resolved experiment configuration.
#[derive(Debug)]
pub struct Experiment {
    pub out_dir: PathBuf,
    pub link: LinkConfig,
    pub channel: ImpulseResponse,
    pub bit_kind: BitKind,
    pub train_bits: usize,
    pub valid_bits: usize,
    pub test_bits: usize,
    pub noise_sigma: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub post_fir_len: usize,
    pub training: TrainConfig,
    pub baseline: BaselineSpec,
    pub seeds: SeedsSection,
    pub max_lag_bits: usize,
    pub span_ui: usize,
    /// FNV-1a of the config file bytes.
    pub config_hash: u64,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Load, validate and resolve a config file. `seed_override` rederives all
/// named seeds; `out_override` replaces the output directory.
pub fn load(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Experiment, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::usage(format!("config {} is not UTF-8", path.display())))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;

    let link = LinkConfig {
        bit_rate: raw.link.bit_rate,
        samples_per_bit: raw.link.samples_per_bit,
        high_level: raw.link.high_level,
        low_level: raw.link.low_level,
        rise_samples: raw.link.rise_samples,
        fall_samples: raw.link.fall_samples,
        delay_depth: raw.link.delay_depth,
        delay_resolution: raw.link.delay_resolution,
    };
    link.validate().map_err(CliError::from_config_error)?;
    link.ticks_per_bit().map_err(CliError::from_config_error)?;

    let base_dir = path.parent().unwrap_or(Path::new("."));
    let channel = resolve_channel(&raw.channel, &link, base_dir)?;

    let bit_kind = match raw.signal.kind {
        SignalKind::Bernoulli => {
            if !(0.0..=1.0).contains(&raw.signal.p) {
                return Err(CliError::usage(format!(
                    "signal probability must be in [0, 1], got {}",
                    raw.signal.p
                )));
            }
            BitKind::Bernoulli(raw.signal.p)
        }
        SignalKind::Prbs7 => BitKind::Prbs7,
        SignalKind::Prbs15 => BitKind::Prbs15,
    };

    let baseline = resolve_baseline(&raw.baseline)?;

    let mut seeds = raw.seeds;
    if let Some(s) = seed_override {
        seeds = SeedsSection {
            bits: derive_seed(s, 100, 0),
            noise: derive_seed(s, 100, 1),
            init: derive_seed(s, 100, 2),
            dropout: derive_seed(s, 100, 3),
            shuffle: derive_seed(s, 100, 4),
            test_bits: derive_seed(s, 100, 5),
            test_noise: derive_seed(s, 100, 6),
        };
    }

    let training = TrainConfig {
        learning_rate: raw.training.learning_rate,
        validation_interval: raw.training.validation_interval,
        patience: raw.training.patience,
        max_epochs: raw.training.max_epochs,
        batch_size: raw.training.batch_size,
        beta1: raw.training.beta1,
        beta2: raw.training.beta2,
        epsilon: raw.training.epsilon,
        seed: derive_seed(seeds.shuffle, 40, seeds.dropout),
        convergence_delta: raw.training.convergence_delta,
    };
    training.validate().map_err(CliError::from_config_error)?;

    if raw.model.hidden.is_empty() {
        return Err(CliError::usage(
            "model.hidden must list at least one layer width",
        ));
    }
    let tpb = link.ticks_per_bit().map_err(CliError::from_config_error)?;
    let post_fir_len = if raw.model.post_fir_len == 0 {
        (tpb / 2).max(1)
    } else {
        raw.model.post_fir_len
    };

    Ok(Experiment {
        out_dir: out_override.unwrap_or(raw.out_dir),
        link,
        channel,
        bit_kind,
        train_bits: raw.signal.train_bits,
        valid_bits: raw.signal.valid_bits,
        test_bits: raw.signal.test_bits,
        noise_sigma: raw.signal.noise_sigma,
        hidden: raw.model.hidden,
        dropout: raw.model.dropout,
        post_fir_len,
        training,
        baseline,
        seeds,
        max_lag_bits: raw.eval.max_lag_bits,
        span_ui: raw.eval.span_ui,
        config_hash: fnv1a(&bytes),
    })
}

fn resolve_channel(
    section: &ChannelSection,
    link: &LinkConfig,
    base_dir: &Path,
) -> Result<ImpulseResponse, CliError> {
    let wants_file = section.path.is_some();
    match section.kind {
        ChannelKind::Synthetic => {
            if wants_file {
                return Err(CliError::usage(
                    "channel.kind = \"synthetic\" does not take a path; pick exactly one channel source",
                ));
            }
            let decay = section
                .decay
                .ok_or_else(|| CliError::usage("synthetic channel needs channel.decay"))?;
            let length = section
                .length_taps
                .ok_or_else(|| CliError::usage("synthetic channel needs channel.length_taps"))?;
            let tap_period = match section.tap_spacing {
                TapSpacing::Bit => link.bit_period(),
                TapSpacing::Tick => link.delay_resolution,
                TapSpacing::Sample => link.sample_period(),
            };
            linkeq::channel::synth_lossy_channel(
                decay,
                section.echo_delay_taps,
                section.echo_gain,
                length,
                tap_period,
            )
            .map_err(CliError::from_config_error)
        }
        ChannelKind::ImpulseCsv => {
            let path = resolve_path(section, base_dir)?;
            let w = linkeq::io::read_waveform_csv(&path)
                .map_err(|e| CliError::usage(format!("impulse CSV {}: {e}", path.display())))?;
            ImpulseResponse::new(w.samples, w.sample_period).map_err(CliError::from_config_error)
        }
        ChannelKind::Touchstone => {
            let path = resolve_path(section, base_dir)?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::usage(format!("touchstone file {}: {e}", path.display())))?;
            let sp = parse_touchstone(&text)
                .map_err(|e| CliError::usage(format!("touchstone {}: {e}", path.display())))?;
            let window = match section.window {
                WindowKind::None => SpectrumWindow::None,
                WindowKind::Hann => SpectrumWindow::Hann,
            };
            let n_fft = section
                .n_fft
                .unwrap_or_else(|| (2 * sp.frequencies.len()).next_power_of_two().max(1024));
            let h = s21_to_impulse(&sp, n_fft, window)
                .map_err(|e| CliError::usage(format!("touchstone {}: {e}", path.display())))?;
            // The equalizer pipeline needs taps on a grid the sample rate
            // divides; resample by nearest-tap placement onto samples.
            resample_to_samples(&h, link).map_err(CliError::from_config_error)
        }
    }
}

fn resolve_path(section: &ChannelSection, base_dir: &Path) -> Result<PathBuf, CliError> {
    let path = section.path.as_ref().ok_or_else(|| {
        CliError::usage(format!(
            "channel.kind = {:?} needs channel.path",
            section.kind
        ))
    })?;
    let resolved = if path.is_absolute() {
        path.clone()
    } else {
        base_dir.join(path)
    };
    if !resolved.exists() {
        return Err(CliError::usage(format!(
            "channel file not found: {}",
            resolved.display()
        )));
    }
    Ok(resolved)
}

/// Place measured taps onto the link's sample grid by accumulating each
/// tap into its nearest sample slot (energy-preserving for tap spacings
/// finer or coarser than the sample period).
fn resample_to_samples(h: &ImpulseResponse, link: &LinkConfig) -> Result<ImpulseResponse, Error> {
    let sp = link.sample_period();
    let span = h.tap_period * (h.taps.len() - 1) as f64;
    let out_len = (span / sp).round() as usize + 1;
    let mut taps = vec![0.0; out_len.max(1)];
    for (j, &t) in h.taps.iter().enumerate() {
        let pos = ((j as f64 * h.tap_period) / sp).round() as usize;
        let idx = pos.min(taps.len() - 1);
        taps[idx] += t;
    }
    ImpulseResponse::new(taps, sp)
}

fn resolve_baseline(section: &BaselineSection) -> Result<BaselineSpec, CliError> {
    let explicit = section.main.is_some()
        || section.precursors.is_some()
        || section.postcursors.is_some()
        || section.dfe.is_some();
    if explicit {
        let main = section
            .main
            .ok_or_else(|| CliError::usage("explicit baseline needs baseline.main"))?;
        let ffe = FfeTaps::new(
            section.precursors.clone().unwrap_or_default(),
            main,
            section.postcursors.clone().unwrap_or_default(),
        )
        .map_err(CliError::from_config_error)?;
        let dfe = DfeTaps::new(
            section.dfe.clone().unwrap_or_default(),
            section.threshold.unwrap_or(0.5),
        )
        .map_err(CliError::from_config_error)?;
        Ok(BaselineSpec::Explicit { ffe, dfe })
    } else {
        Ok(BaselineSpec::Fit {
            n_pre: section.n_pre.unwrap_or(2),
            n_post: section.n_post.unwrap_or(4),
            n_dfe: section.n_dfe.unwrap_or(6),
        })
    }
}
