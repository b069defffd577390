//! Flat `key = value` run configuration.
//!
//! Every key has a default. Files may contain `#` comments and blank lines;
//! unknown keys are rejected. Command-line `--key value` overrides accept
//! hyphens in place of underscores.

use std::fmt::Write as _;
use std::path::PathBuf;

use mmcse_core::data::{AudioSpec, AugmentConfig, CorpusSpec, ImageSpec, NoiseSpec};
use mmcse_core::encoder::EncoderConfig;
use mmcse_core::losses::{LossConfig, ModalLoss, Reduction};
use mmcse_core::metrics::PositiveThreshold;
use mmcse_core::training::{ModalityChoice, TrainConfig, UpdateMode};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const ENV_SEED: &str = "MMCSE_SEED";
pub const ENV_OUT_DIR: &str = "MMCSE_OUT_DIR";

/// A value that lives in the flat config file.
pub trait ConfigValue: Sized {
    fn parse_value(text: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(text: &str) -> Result<Self, String> {
                text.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u64, f64, bool, String);

impl ConfigValue for Option<f64> {
    fn parse_value(text: &str) -> Result<Self, String> {
        match text {
            "none" | "off" => Ok(None),
            t => f64::parse_value(t).map(Some),
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.to_string())
    }
}

macro_rules! enum_value {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl ConfigValue for $t {
            fn parse_value(text: &str) -> Result<Self, String> {
                match text {
                    $($name => Ok($v),)*
                    other => Err(format!("expected one of [{}], got {other:?}", [$($name),*].join(", "))),
                }
            }
            fn render(&self) -> String {
                $(if *self == $v { return $name.into(); })*
                unreachable!()
            }
        }
    };
}
enum_value!(ModalityChoice { "none" => ModalityChoice::None, "image" => ModalityChoice::Image, "audio" => ModalityChoice::Audio });
enum_value!(ModalLoss { "supcon" => ModalLoss::SupCon, "simclr" => ModalLoss::SimClr });
enum_value!(Reduction { "sum" => Reduction::Sum, "mean" => Reduction::Mean });
enum_value!(UpdateMode { "alternating" => UpdateMode::Alternating, "summed" => UpdateMode::Summed });

macro_rules! run_config {
    ($($key:ident : $t:ty = $default:expr, $doc:literal;)*) => {
        /// Union of every tunable: encoder, training, losses, datasets,
        /// noise, evaluation and ablation grids.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $key: $t,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        impl RunConfig {
            /// `(key, default, doc)` for every key, in file order.
            pub fn documented_keys() -> Vec<(&'static str, String, &'static str)> {
                let d = RunConfig::default();
                vec![$((stringify!($key), d.$key.render(), $doc),)*]
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                let key = key.trim().replace('-', "_");
                let value = value.trim();
                match key.as_str() {
                    $(stringify!($key) => {
                        self.$key = <$t>::parse_value(value)
                            .map_err(|e| CliError::Config(format!("{key}: {e}")))?;
                    })*
                    "config_version" => {
                        if value != CONFIG_VERSION.to_string() {
                            return Err(CliError::Config(format!("unsupported config version {value}")));
                        }
                    }
                    _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// Canonical text form; parsing it back gives the same config.
            pub fn to_text(&self) -> String {
                let mut out = format!("config_version = {CONFIG_VERSION}\n");
                $(let _ = writeln!(out, "{} = {}", stringify!($key), self.$key.render());)*
                out
            }
        }
    };
}

run_config! {
    // Encoder.
    num_layers: usize = 2, "Transformer layers.";
    num_heads: usize = 4, "Attention heads per layer.";
    hidden_dim: usize = 64, "Width h of every representation.";
    ff_dim: usize = 128, "Feed-forward inner width.";
    dropout_rate: f64 = 0.1, "Dropout probability (also the text augmentation).";
    max_seq_len: usize = 64, "Longest sequence, CLS included.";
    vocab_size: usize = 512, "Token vocabulary; ids 0 and 1 are CLS and PAD.";
    image_height: usize = 16, "Image height in pixels.";
    image_width: usize = 16, "Image width in pixels.";
    patch_rows: usize = 4, "Patch grid rows.";
    patch_cols: usize = 4, "Patch grid columns.";
    spectrogram_frames: usize = 32, "Spectrogram time frames.";
    spectrogram_bins: usize = 8, "Spectrogram frequency bins.";
    audio_block_frames: usize = 8, "Audio block height in frames.";
    audio_block_bins: usize = 8, "Audio block width in bins.";
    layer_norm_eps: f64 = 1e-5, "LayerNorm epsilon.";
    // Training.
    max_steps: usize = 300, "Training iterations (one text and one modal step each).";
    text_batch_size: usize = 64, "Sentences (or triplets) per text step.";
    modal_batch_size: usize = 48, "Images or clips per modal step.";
    text_lr: f64 = 3e-4, "Text optimizer learning rate.";
    modal_lr: f64 = 3e-5, "Modal optimizer learning rate.";
    weight_decay: f64 = 0.01, "AdamW decoupled weight decay (both optimizers).";
    seed: u64 = 42, "Seed for initialization, dropout, augmentation and batching.";
    validation_interval: usize = 25, "Dev evaluation period in steps.";
    supervised_text: bool = false, "Train on triplets instead of dropout pairs.";
    modality: ModalityChoice = ModalityChoice::None, "none, image or audio.";
    update_mode: UpdateMode = UpdateMode::Alternating, "alternating (two optimizers) or summed (one).";
    grad_clip: Option<f64> = None, "Global gradient-norm bound, or none.";
    // Losses.
    tau_text: f64 = 0.05, "Text temperature.";
    tau_modal: f64 = 0.07, "Modal temperature.";
    modal_loss: ModalLoss = ModalLoss::SupCon, "supcon or simclr.";
    omega_modal: f64 = 1.0, "Weight of the modal loss.";
    reduction: Reduction = Reduction::Sum, "sum or mean over anchors.";
    // Image augmentation.
    crop_area_min: f64 = 0.5, "Smallest crop as a fraction of the image area.";
    crop_area_max: f64 = 1.0, "Largest crop as a fraction of the image area.";
    aspect_min: f64 = 0.75, "Smallest crop aspect ratio.";
    aspect_max: f64 = 4.0 / 3.0, "Largest crop aspect ratio.";
    flip_prob: f64 = 0.5, "Horizontal flip probability.";
    brightness: f64 = 0.2, "Relative brightness jitter.";
    contrast: f64 = 0.2, "Relative contrast jitter.";
    // Synthetic data.
    data_seed: u64 = 42, "Seed for every generated dataset.";
    num_clusters: usize = 20, "Text clusters.";
    sentences_per_cluster: usize = 200, "Sentences per cluster.";
    min_len: usize = 8, "Shortest sentence in tokens.";
    max_len: usize = 14, "Longest sentence in tokens.";
    signal_strength: f64 = 0.5, "Fraction of each sentence drawn from its cluster's signal tokens.";
    signal_tokens_per_cluster: usize = 12, "Signal tokens owned by each cluster.";
    background_tokens: usize = 256, "Background tokens shared by all clusters.";
    image_classes: usize = 10, "Image classes.";
    images_per_class: usize = 50, "Images per class.";
    image_noise: f64 = 0.1, "Per-pixel noise standard deviation.";
    audio_classes: usize = 10, "Audio classes.";
    clips_per_class: usize = 30, "Clips per class.";
    audio_noise: f64 = 0.05, "Per-bin noise standard deviation.";
    dev_pairs: usize = 500, "Held-out STS pairs for model selection.";
    test_pairs: usize = 500, "Held-out STS pairs for reporting.";
    sts_same_cluster: f64 = 0.5, "Fraction of STS pairs drawn within one cluster.";
    positive_quantile: f64 = 0.75, "Gold-score quantile above which STS pairs count as positives.";
    // Supervised text corruption.
    noise_delete: f64 = 0.0, "Fraction of tokens deleted per sentence.";
    noise_insert: usize = 0, "Random tokens inserted per sentence.";
    noise_swap: usize = 0, "Random transpositions per sentence.";
    triplet_fraction: f64 = 1.0, "Fraction of triplets kept (uniform subsample).";
    // Ablations.
    noise_grid: String = "0,0,0;0.1,1,1;0.3,2,2;0.5,3,3".into(), "Noise sweep: delete,insert,swap triples separated by ';'.";
    subsample_grid: String = "0.1,0.3,1.0".into(), "Triplet fractions for the subsample sweep.";
    seed_count: usize = 5, "Seeds in the seed sweep (seed, seed+1, ...).";
    sweep_seeds: usize = 1, "Seeds per grid point in the noise, subsample and loss sweeps.";
    // Output.
    out_dir: String = "runs/default".into(), "Directory for checkpoints, logs, reports and plots.";
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("expected --key, got {flag:?}")))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
                continue;
            }
            let value = it
                .next()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Seed and output directory from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(ENV_SEED) {
            self.set("seed", &v)?;
        }
        if let Ok(v) = std::env::var(ENV_OUT_DIR) {
            self.out_dir = v;
        }
        Ok(())
    }

    /// File, then environment, then command line.
    pub fn resolve(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env()?;
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short digest of everything except `out_dir`, so identical runs
    /// written to different places share a hash.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out_dir "))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            hidden_dim: self.hidden_dim,
            ff_dim: self.ff_dim,
            dropout_rate: self.dropout_rate,
            max_seq_len: self.max_seq_len,
            vocab_size: self.vocab_size,
            image_size: (self.image_height, self.image_width),
            patch_grid: (self.patch_rows, self.patch_cols),
            spectrogram_frames: self.spectrogram_frames,
            spectrogram_bins: self.spectrogram_bins,
            audio_block: (self.audio_block_frames, self.audio_block_bins),
            layer_norm_eps: self.layer_norm_eps,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau_text: self.tau_text,
            tau_modal: self.tau_modal,
            modal_variant: self.modal_loss,
            omega_modal: self.omega_modal,
            reduction: self.reduction,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop_area: (self.crop_area_min, self.crop_area_max),
            aspect_ratio: (self.aspect_min, self.aspect_max),
            flip_prob: self.flip_prob,
            brightness: self.brightness,
            contrast: self.contrast,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_steps,
            text_batch_size: self.text_batch_size,
            modal_batch_size: self.modal_batch_size,
            text_lr: self.text_lr,
            modal_lr: self.modal_lr,
            weight_decay: self.weight_decay,
            loss: self.loss(),
            seed: self.seed,
            validation_interval: self.validation_interval,
            supervised_text: self.supervised_text,
            modality: self.modality,
            update: self.update_mode,
            grad_clip: self.grad_clip,
            augment: self.augment(),
        }
    }

    pub fn corpus(&self) -> CorpusSpec {
        CorpusSpec {
            num_clusters: self.num_clusters,
            sentences_per_cluster: self.sentences_per_cluster,
            vocab_size: self.vocab_size,
            min_len: self.min_len,
            max_len: self.max_len,
            signal_strength: self.signal_strength,
            signal_tokens_per_cluster: self.signal_tokens_per_cluster,
            background_tokens: self.background_tokens,
            seed: self.data_seed,
        }
    }

    pub fn images(&self) -> ImageSpec {
        ImageSpec {
            num_classes: self.image_classes,
            per_class: self.images_per_class,
            height: self.image_height,
            width: self.image_width,
            noise: self.image_noise,
            seed: self.data_seed,
        }
    }

    pub fn audio(&self) -> AudioSpec {
        AudioSpec {
            num_classes: self.audio_classes,
            per_class: self.clips_per_class,
            frames: self.spectrogram_frames,
            bins: self.spectrogram_bins,
            noise: self.audio_noise,
            seed: self.data_seed,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            p_delete: self.noise_delete,
            n_insert: self.noise_insert,
            n_swap: self.noise_swap,
            seed: self.data_seed,
        }
    }

    pub fn threshold(&self) -> PositiveThreshold {
        PositiveThreshold::Quantile(self.positive_quantile)
    }

    pub fn noise_levels(&self) -> Result<Vec<(f64, usize, usize)>, CliError> {
        self.noise_grid
            .split(';')
            .map(|level| {
                let parts: Vec<&str> = level.split(',').map(str::trim).collect();
                let bad = || CliError::Config(format!("noise_grid level {level:?} is not delete,insert,swap"));
                match parts.as_slice() {
                    [d, i, s] => Ok((
                        d.parse().map_err(|_| bad())?,
                        i.parse().map_err(|_| bad())?,
                        s.parse().map_err(|_| bad())?,
                    )),
                    _ => Err(bad()),
                }
            })
            .collect()
    }

    pub fn subsample_levels(&self) -> Result<Vec<f64>, CliError> {
        self.subsample_grid
            .split(',')
            .map(|f| {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("subsample_grid entry {f:?}")))?;
                if 0.0 < v && v <= 1.0 {
                    Ok(v)
                } else {
                    Err(CliError::Config(format!("subsample fraction {v} outside (0, 1]")))
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder().validate()?;
        self.train().validate()?;
        self.corpus().validate()?;
        self.noise_levels()?;
        self.subsample_levels()?;
        if !(0.0 < self.triplet_fraction && self.triplet_fraction <= 1.0) {
            return Err(CliError::Config("triplet_fraction must lie in (0, 1]".into()));
        }
        if self.dev_pairs < 3 || self.test_pairs < 3 {
            return Err(CliError::Config("dev_pairs and test_pairs must be at least 3".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_quantile) {
            return Err(CliError::Config("positive_quantile must lie in [0, 1]".into()));
        }
        if self.max_len >= self.max_seq_len {
            return Err(CliError::Config(format!(
                "max_len {} leaves no room for CLS within max_seq_len {}",
                self.max_len, self.max_seq_len
            )));
        }
        Ok(())
    }
}
