//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! errors. [`TrainConfig::to_text`] is canonical and feeds the config hash
//! stored in checkpoints.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::optim::AdamWConfig;
use crate::signal::{AugmentConfig, StftConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be f32 or f64, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V>
where
    V::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{raw}`: {e}")))
}

macro_rules! train_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every knob of a training run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct TrainConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                TrainConfig { $( $field: $default, )* }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field), )*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => self.$field = parse_value(key, raw.trim())?, )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("{} = {}\n", stringify!($field), self.$field)); )*
                out
            }
        }
    };
}

train_config! {
    /// Label for reports; set by ablation variants.
    name: String = "full".into(),
    seed: u64 = 0,
    /// Dataset directory, relative to the work directory.
    data_dir: String = "data".into(),
    /// Output directory, relative to the work directory.
    out_dir: String = "runs/full".into(),
    split_train: f64 = 0.8,
    split_val: f64 = 0.1,
    split_test: f64 = 0.1,
    window_seconds: f64 = 10.0,
    stft_window: usize = 64,
    stft_hop: usize = 32,
    stft_log1p: bool = false,
    eeg_width: usize = 64,
    eeg_heads: usize = 4,
    eeg_ff: usize = 256,
    eeg_layers: usize = 2,
    input_scale: f64 = 0.01,
    gating: bool = true,
    use_text: bool = true,
    contrastive: bool = true,
    reconstruction: bool = true,
    text_width: usize = 128,
    text_heads: usize = 4,
    text_ff: usize = 512,
    text_layers: usize = 3,
    text_trainable_layers: usize = 3,
    decoder_layers: usize = 2,
    max_tokens: usize = 48,
    epochs: usize = 30,
    batch_size: usize = 32,
    learning_rate: f64 = 3e-4,
    weight_decay: f64 = 0.01,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    precision: Precision = Precision::F32,
    augment: bool = true,
    aug_time_mask_frac: f64 = 0.2,
    aug_freq_mask_frac: f64 = 0.2,
    aug_noise_std_rel: f64 = 0.05,
    aug_amp_low: f64 = 0.8,
    aug_amp_high: f64 = 1.2,
    aug_max_shift_frac: f64 = 0.1,
    aug_p_shift: f64 = 0.5,
    aug_p_amp: f64 = 0.5,
    aug_p_noise: f64 = 0.5,
    aug_p_freq_mask: f64 = 0.5,
    aug_p_time_mask: f64 = 0.5,
    /// Write measured seconds to metrics; off keeps outputs byte-stable.
    record_wall_time: bool = false,
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        self.optimizer().validate()?;
        self.stft().validate()?;
        self.augment_config(0).validate()?;
        if !self.eeg_width.is_multiple_of(self.eeg_heads) || !self.text_width.is_multiple_of(self.text_heads) {
            return bad("widths must be divisible by head counts".into());
        }
        if self.eeg_layers == 0 {
            return bad("eeg_layers must be >= 1".into());
        }
        if self.text_trainable_layers > self.text_layers {
            return bad(format!(
                "text_trainable_layers {} exceeds text_layers {}",
                self.text_trainable_layers, self.text_layers
            ));
        }
        if self.max_tokens < 3 {
            return bad("max_tokens must be >= 3".into());
        }
        if !(self.window_seconds > 0.0) {
            return bad("window_seconds must be > 0".into());
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window_len: self.stft_window,
            hop: self.stft_hop,
            log1p: self.stft_log1p,
        }
    }

    /// Augmentation settings with the given per-sample seed; all
    /// probabilities are zero when augmentation is off.
    pub fn augment_config(&self, seed: u64) -> AugmentConfig {
        let cfg = AugmentConfig {
            time_mask_frac: self.aug_time_mask_frac,
            freq_mask_frac: self.aug_freq_mask_frac,
            noise_std_rel: self.aug_noise_std_rel,
            amp_scale_range: (self.aug_amp_low, self.aug_amp_high),
            max_shift_frac: self.aug_max_shift_frac,
            p_shift: self.aug_p_shift,
            p_amp: self.aug_p_amp,
            p_noise: self.aug_p_noise,
            p_freq_mask: self.aug_p_freq_mask,
            p_time_mask: self.aug_p_time_mask,
            seed,
        };
        if self.augment {
            cfg
        } else {
            AugmentConfig {
                seed,
                ..AugmentConfig::identity()
            }
        }
    }

    /// Whether each loss term (classification, contrastive, reconstruction)
    /// participates.
    pub fn enabled_terms(&self) -> [bool; 3] {
        [true, self.use_text && self.contrastive, self.use_text && self.reconstruction]
    }
}
