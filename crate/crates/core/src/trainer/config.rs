//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::augment::{AugmentRates, AugmentationRegistry};
use crate::error::{Error, Result};
use crate::trainer::losses::{AdvSign, DiscSign};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub max_len: usize,

    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Epochs between discriminator updates; `None` disables them.
    pub d_update_period: Option<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adv_sign: AdvSign,
    pub disc_sign: DiscSign,

    pub augmentations: Vec<String>,
    pub rates: AugmentRates,
    /// Share of positives that are augmented rather than raw real sequences.
    pub augmented_share: f64,
    /// Share of negatives that are label-reversed rather than generated.
    pub reversed_share: f64,
    /// Share of generated negatives built on bigram-sampled questions.
    pub synthetic_share: f64,
    pub difficulty_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            heads: 4,
            max_len: 200,
            gamma: 0.95,
            lambda1: 1000.0,
            lambda2: 1.0,
            alpha: 10.0,
            lr_g: 0.001,
            lr_d: 0.005,
            d_update_period: Some(2),
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            adv_sign: AdvSign::Reinforce,
            disc_sign: DiscSign::Separating,
            augmentations: ["mask", "crop", "permute", "replace"].map(String::from).to_vec(),
            rates: AugmentRates::default(),
            augmented_share: 0.5,
            reversed_share: 0.5,
            synthetic_share: 0.5,
            difficulty_smoothing: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    /// Parses a config file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim_matches('"');
        match key {
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "lr_g" => self.lr_g = parse(key, v)?,
            "lr_d" => self.lr_d = parse(key, v)?,
            "d_update_period" => {
                self.d_update_period = match v {
                    "never" | "inf" | "0" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "adv_sign" => self.adv_sign = v.parse()?,
            "disc_sign" => self.disc_sign = v.parse()?,
            "augmentations" => {
                self.augmentations = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "mask_rate" => self.rates.mask = parse(key, v)?,
            "crop_fraction" => self.rates.crop = parse(key, v)?,
            "permute_fraction" => self.rates.permute = parse(key, v)?,
            "replace_rate" => self.rates.replace = parse(key, v)?,
            "flip_prob" => self.rates.flip = parse(key, v)?,
            "augmented_share" => self.augmented_share = parse(key, v)?,
            "reversed_share" => self.reversed_share = parse(key, v)?,
            "synthetic_share" => self.synthetic_share = parse(key, v)?,
            "difficulty_smoothing" => self.difficulty_smoothing = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return err("embed_dim, hidden_dim and max_len must be positive".into());
        }
        if self.heads == 0 || !(2 * self.embed_dim).is_multiple_of(self.heads) {
            return err(format!("heads ({}) must divide 2 * embed_dim ({})", self.heads, 2 * self.embed_dim));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return err("learning rates must be positive".into());
        }
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{k} must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return err("batch_size, max_epochs and patience must be positive".into());
        }
        let r = &self.rates;
        for (k, v, one_ok) in [
            ("mask_rate", r.mask, false),
            ("crop_fraction", r.crop, true),
            ("permute_fraction", r.permute, true),
            ("replace_rate", r.replace, false),
            ("flip_prob", r.flip, true),
        ] {
            if !(v > 0.0 && (v < 1.0 || (one_ok && v == 1.0))) {
                return err(format!("{k} out of range: {v}"));
            }
        }
        for (k, v) in [
            ("augmented_share", self.augmented_share),
            ("reversed_share", self.reversed_share),
            ("synthetic_share", self.synthetic_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{k} must lie in [0, 1]"));
            }
        }
        if self.augmented_share > 0.0 && self.augmentations.is_empty() {
            return err("augmented_share > 0 needs at least one augmentation".into());
        }
        if self.difficulty_smoothing < 0.0 {
            return err("difficulty_smoothing must be non-negative".into());
        }
        AugmentationRegistry::default().select(&self.augmentations)?;
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let period = self
            .d_update_period
            .map(|p| p.to_string())
            .unwrap_or_else(|| "never".into());
        let pairs: Vec<(&str, String)> = vec![
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("heads", self.heads.to_string()),
            ("max_len", self.max_len.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lr_g", self.lr_g.to_string()),
            ("lr_d", self.lr_d.to_string()),
            ("d_update_period", period),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("adv_sign", self.adv_sign.to_string()),
            ("disc_sign", self.disc_sign.to_string()),
            ("augmentations", self.augmentations.join(",")),
            ("mask_rate", self.rates.mask.to_string()),
            ("crop_fraction", self.rates.crop.to_string()),
            ("permute_fraction", self.rates.permute.to_string()),
            ("replace_rate", self.rates.replace.to_string()),
            ("flip_prob", self.rates.flip.to_string()),
            ("augmented_share", self.augmented_share.to_string()),
            ("reversed_share", self.reversed_share.to_string()),
            ("synthetic_share", self.synthetic_share.to_string()),
            ("difficulty_smoothing", self.difficulty_smoothing.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Whether the discriminator is updated in (1-based) `epoch`.
    pub fn updates_discriminator(&self, epoch: usize) -> bool {
        match self.d_update_period {
            Some(p) => (epoch - 1).is_multiple_of(p),
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = TrainConfig::from_text(
            "# tiny run\nembed_dim = 8   # small\nhidden_dim=8\n\nd_update_period = never\nadv_sign = as_written\n",
        )
        .unwrap();
        assert_eq!(cfg.embed_dim, 8);
        assert_eq!(cfg.d_update_period, None);
        assert_eq!(cfg.adv_sign, AdvSign::AsWritten);
        cfg.apply_override("lambda1=0").unwrap();
        assert_eq!(cfg.lambda1, 0.0);
        assert!(cfg.apply_override("nonsense=1").is_err());
        assert!(TrainConfig::from_text("gamma 0.3").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("augmentations=mask,crop").unwrap();
        cfg.apply_override("gamma=0.9").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.augmentations = vec!["shuffle".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn update_schedule() {
        let cfg = TrainConfig::default();
        let updated: Vec<usize> = (1..=6).filter(|&e| cfg.updates_discriminator(e)).collect();
        assert_eq!(updated, vec![1, 3, 5]);
    }
}
