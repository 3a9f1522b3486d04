use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::validate_image_size;
use crate::error::{Error, Result};
use crate::network::{DiscriminatorSpec, GeneratorSpec, GlobalFeatures};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Generators carry a global-feature extractor.
    General,
    /// Face-only training; no global-feature branch.
    Makeup,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" => Ok(Mode::General),
            "makeup" => Ok(Mode::Makeup),
            other => Err(Error::config("mode", format!("expected `general` or `makeup`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::General => "general",
            Mode::Makeup => "makeup",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub adversarial_weight: f64,
    pub epochs: u64,
    pub seed: u64,
    pub image_size: usize,
    pub mode: Mode,
    pub base_width: usize,
    pub batch_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            adversarial_weight: 0.01,
            epochs: 20,
            seed: 0,
            image_size: crate::dataset::DEFAULT_TARGET_SIZE,
            mode: Mode::Makeup,
            base_width: 32,
            batch_norm: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    /// Every numeric bound, reported against the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.adversarial_weight.is_finite() && self.adversarial_weight >= 0.0) {
            return Err(Error::config(
                "adversarial_weight",
                format!("must be >= 0, got {}", self.adversarial_weight),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        validate_image_size(self.image_size, "image_size")
    }

    /// Applies one `key = value` setting. Accepts the long field names and
    /// the matching command-line spellings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "learning_rate" | "lr" => self.learning_rate = parse("learning_rate", value)?,
            "momentum" => self.momentum = parse("momentum", value)?,
            "batch_size" | "batch" => self.batch_size = parse("batch_size", value)?,
            "adversarial_weight" | "w_adv" | "w-adv" => self.adversarial_weight = parse("adversarial_weight", value)?,
            "epochs" => self.epochs = parse("epochs", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "image_size" | "size" => self.image_size = parse("image_size", value)?,
            "mode" => self.mode = value.parse()?,
            "base_width" | "width" => self.base_width = parse("base_width", value)?,
            "batch_norm" => self.batch_norm = parse("batch_norm", value)?,
            other => return Err(Error::config(other, "unknown setting")),
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            base_width: self.base_width,
            batch_norm: self.batch_norm,
            global_features: match self.mode {
                Mode::General => GlobalFeatures::Extractor {
                    dim: 2 * self.base_width,
                },
                Mode::Makeup => GlobalFeatures::None,
            },
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            base_width: self.base_width,
            image_size: self.image_size,
            batch_norm: self.batch_norm,
        }
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("config line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bounds_name_the_field() {
        let cases: [(&str, &str, &str); 7] = [
            ("lr", "0", "learning_rate"),
            ("momentum", "1", "momentum"),
            ("momentum", "-0.1", "momentum"),
            ("batch", "0", "batch_size"),
            ("w_adv", "-1", "adversarial_weight"),
            ("size", "24", "image_size"),
            ("epochs", "0", "epochs"),
        ];
        for (key, value, field) in cases {
            let mut cfg = TrainConfig::default();
            cfg.set(key, value).unwrap();
            match cfg.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{key}={value}"),
                other => panic!("{key}={value}: {other:?}"),
            }
        }
    }

    #[test]
    fn key_value_text() {
        let text = "# run\nlr = 0.05\nmode = general  # with features\n\nbatch_size=4\n";
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_key_values(text).unwrap() {
            cfg.set(&k, &v).unwrap();
        }
        assert_eq!(cfg.learning_rate, 0.05);
        assert_eq!(cfg.mode, Mode::General);
        assert_eq!(cfg.batch_size, 4);
        assert!(parse_key_values("lr 0.1").is_err());
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("seed", "abc").is_err());
    }

    #[test]
    fn mode_selects_feature_branch() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.generator_spec().global_features, GlobalFeatures::None);
        cfg.mode = Mode::General;
        assert_eq!(
            cfg.generator_spec().global_features,
            GlobalFeatures::Extractor { dim: 64 }
        );
    }
}
