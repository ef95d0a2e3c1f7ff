//! Model configuration, named presets and validation.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the same-resolution skip joins the decoder path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Added to the upsampled stream before the decoder block.
    PreDecoder,
    /// Added to the decoder block's output.
    #[default]
    PostDecoder,
}

impl fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualMode::PreDecoder => "pre_decoder",
            ResidualMode::PostDecoder => "post_decoder",
        })
    }
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_decoder" | "pre" => Ok(ResidualMode::PreDecoder),
            "post_decoder" | "post" => Ok(ResidualMode::PostDecoder),
            _ => Err(Error::Invalid(format!("unknown residual mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub resolutions_ms: Vec<u32>,
    pub layers_per_encoder: Vec<usize>,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Width of the input frame features.
    pub input_dim: usize,
    pub num_classes: usize,
    pub downsampling_enabled: bool,
    pub aux_loss_enabled: bool,
    pub aux_loss_weight: f64,
    pub residual_mode: ResidualMode,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 6] = ["hubert-base-toy", "mr-base-toy", "b2-a", "b2-b", "b4-a", "b5-a"];

impl ModelConfig {
    fn base(resolutions_ms: &[u32], layers: &[usize], down: bool, aux: bool) -> Self {
        Self {
            resolutions_ms: resolutions_ms.to_vec(),
            layers_per_encoder: layers.to_vec(),
            dim: 32,
            heads: 4,
            ffn_dim: 64,
            input_dim: 16,
            num_classes: 8,
            downsampling_enabled: down,
            aux_loss_enabled: aux,
            aux_loss_weight: 1.0,
            residual_mode: ResidualMode::PostDecoder,
            mask_prob: 0.2,
            mask_span: 3,
            seed: 0,
        }
    }

    /// Desk-scale versions of the ablation family.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "hubert-base-toy" => Self::base(&[20], &[12], false, false),
            "mr-base-toy" => Self::base(&[20, 40], &[4, 4, 4], true, true),
            "b2-a" => Self::base(&[20, 40, 80], &[3, 2, 2, 2, 3], true, true),
            "b2-b" => Self::base(&[20, 40, 80], &[2, 2, 4, 2, 2], true, true),
            "b4-a" => Self::base(&[20, 40], &[4, 4, 4], true, false),
            "b5-a" => Self::base(&[20], &[4, 4, 4], false, true),
            other => {
                return Err(Error::Config(vec![format!(
                    "preset: unknown name {other:?} (known: {})",
                    PRESETS.join(", ")
                )]))
            }
        })
    }

    /// Number of resolution levels, counting the bottleneck.
    pub fn levels(&self) -> usize {
        self.layers_per_encoder.len().div_ceil(2)
    }

    pub fn num_blocks(&self) -> usize {
        self.layers_per_encoder.len()
    }

    pub fn total_layers(&self) -> usize {
        self.layers_per_encoder.iter().sum()
    }

    /// Resolution level a block runs at: encoders descend, decoders climb back.
    pub fn block_level(&self, block: usize) -> usize {
        let l = self.levels();
        if block < l {
            block
        } else {
            2 * l - 2 - block
        }
    }

    /// Ratio between level `l` and `l + 1`; 1 when downsampling is off.
    pub fn ratio(&self, l: usize) -> usize {
        if self.downsampling_enabled {
            (self.resolutions_ms[l + 1] / self.resolutions_ms[l]) as usize
        } else {
            1
        }
    }

    /// Product of ratios from the base down to level `l`.
    pub fn cumulative_ratio(&self, l: usize) -> usize {
        (0..l).map(|i| self.ratio(i)).product()
    }

    pub fn period_ms(&self, l: usize) -> u32 {
        self.resolutions_ms[0] * self.cumulative_ratio(l) as u32
    }

    /// Frames at level `l` for a base sequence of `t` frames.
    pub fn length_at(&self, t: usize, l: usize) -> usize {
        (0..l).fold(t, |len, i| len.div_ceil(self.ratio(i)))
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Every violated invariant, each prefixed by its field name.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let res = &self.resolutions_ms;
        let layers = &self.layers_per_encoder;
        if res.is_empty() {
            p.push("resolutions_ms: must not be empty".into());
        }
        if res.contains(&0) {
            p.push("resolutions_ms: periods must be positive".into());
        }
        if layers.is_empty() {
            p.push("layers_per_encoder: must not be empty".into());
        }
        if layers.contains(&0) {
            p.push("layers_per_encoder: every block needs at least one layer".into());
        }
        if self.downsampling_enabled {
            if !res.is_empty() && layers.len() != 2 * res.len() - 1 {
                p.push(format!(
                    "layers_per_encoder: {} resolutions need {} blocks, got {}",
                    res.len(),
                    2 * res.len() - 1,
                    layers.len()
                ));
            }
            for w in res.windows(2) {
                if w[0] == 0 || w[1] % w[0] != 0 || w[1] / w[0] < 2 {
                    p.push(format!(
                        "resolutions_ms: {} -> {} is not an integer ratio of at least 2",
                        w[0], w[1]
                    ));
                }
            }
        } else {
            if res.len() > 1 {
                p.push(format!(
                    "resolutions_ms: downsampling is disabled, so only the base resolution is allowed (got {})",
                    res.len()
                ));
            }
            if layers.len().is_multiple_of(2) {
                p.push(format!(
                    "layers_per_encoder: needs an odd number of blocks, got {}",
                    layers.len()
                ));
            }
        }
        if self.dim == 0 {
            p.push("dim: must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            p.push(format!("heads: {} does not divide dim {}", self.heads, self.dim));
        }
        if self.ffn_dim == 0 {
            p.push("ffn_dim: must be positive".into());
        }
        if self.input_dim == 0 {
            p.push("input_dim: must be positive".into());
        }
        if self.num_classes < 2 {
            p.push("num_classes: need at least 2 target units".into());
        }
        if !(self.aux_loss_weight.is_finite() && self.aux_loss_weight >= 0.0) {
            p.push(format!("aux_loss_weight: {} is not a non-negative number", self.aux_loss_weight));
        }
        if self.aux_loss_enabled && layers.len() < 3 {
            p.push("aux_loss_enabled: needs at least one lower level (3 or more blocks)".into());
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            p.push(format!("mask_prob: {} outside (0, 1]", self.mask_prob));
        }
        if self.mask_span == 0 {
            p.push("mask_span: must be at least 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// A config file: either a full config, or `preset = "name"` with any fields
/// overridden, plus an optional `compare = [...]` set of presets that must
/// share this model's total layer count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub config: ModelConfig,
    pub compare: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    let compare = match table.remove("compare") {
        None => Vec::new(),
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(Error::Config(vec![format!("compare: expected preset names, got {other}")])),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(Error::Config(vec![format!("compare: expected a list, got {other}")])),
    };
    let merged = match table.remove("preset") {
        Some(toml::Value::String(name)) => {
            let base = ModelConfig::preset(&name)?;
            let mut merged = toml::Table::try_from(&base).expect("config serializes");
            merged.extend(table);
            merged
        }
        Some(other) => return Err(Error::Config(vec![format!("preset: expected a name, got {other}")])),
        None => table,
    };
    let config: ModelConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    let mut problems = config.problems();
    problems.extend(comparison_problems(&config, &compare));
    if problems.is_empty() {
        Ok(ConfigFile { config, compare })
    } else {
        Err(Error::Config(problems))
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// A preset name or a path to a config file.
pub fn resolve_config(name_or_path: &str) -> Result<ModelConfig> {
    if PRESETS.contains(&name_or_path) {
        ModelConfig::preset(name_or_path)
    } else {
        Ok(load_config(Path::new(name_or_path))?.config)
    }
}

fn comparison_problems(config: &ModelConfig, compare: &[String]) -> Vec<String> {
    let mut p = Vec::new();
    for name in compare {
        match ModelConfig::preset(name) {
            Ok(other) if other.total_layers() != config.total_layers() => p.push(format!(
                "compare: {name} has {} layers, this model {}",
                other.total_layers(),
                config.total_layers()
            )),
            Ok(_) => {}
            Err(Error::Config(mut e)) => p.append(&mut e),
            Err(e) => p.push(format!("compare: {e}")),
        }
    }
    p
}

/// Models compared side by side must have the same total layer count.
pub fn check_comparison(models: &[(&str, &ModelConfig)]) -> Result<()> {
    let Some((first, reference)) = models.first() else {
        return Ok(());
    };
    let problems: Vec<String> = models
        .iter()
        .filter(|(_, c)| c.total_layers() != reference.total_layers())
        .map(|(name, c)| {
            format!(
                "layers_per_encoder: {name} has {} layers, {first} has {}",
                c.total_layers(),
                reference.total_layers()
            )
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_with_twelve_layers() {
        for name in PRESETS {
            let c = ModelConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.total_layers(), 12, "{name}");
        }
        let b2a = ModelConfig::preset("b2-a").unwrap();
        assert_eq!(b2a.resolutions_ms, [20, 40, 80]);
        assert_eq!(b2a.layers_per_encoder, [3, 2, 2, 2, 3]);
    }

    #[test]
    fn geometry() {
        let c = ModelConfig::preset("b2-a").unwrap();
        assert_eq!(c.levels(), 3);
        let levels: Vec<usize> = (0..5).map(|b| c.block_level(b)).collect();
        assert_eq!(levels, [0, 1, 2, 1, 0]);
        assert_eq!(c.length_at(33, 2), 9);
        assert_eq!(c.period_ms(2), 80);
        let b5 = ModelConfig::preset("b5-a").unwrap();
        assert_eq!(b5.levels(), 2);
        assert_eq!(b5.ratio(0), 1);
        assert_eq!(b5.period_ms(1), 20);
    }

    #[test]
    fn wrong_block_count_names_the_field() {
        let mut c = ModelConfig::preset("mr-base-toy").unwrap();
        c.layers_per_encoder = vec![6, 6];
        let p = c.problems();
        assert!(p.iter().any(|m| m.starts_with("layers_per_encoder") && m.contains("need 3")), "{p:?}");
    }

    #[test]
    fn every_problem_is_reported() {
        let mut c = ModelConfig::preset("mr-base-toy").unwrap();
        c.resolutions_ms = vec![20, 30];
        c.heads = 5;
        c.mask_prob = 0.0;
        let p = c.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(p[0].starts_with("resolutions_ms"));
        assert!(p[1].starts_with("heads"));
        assert!(p[2].starts_with("mask_prob"));
    }

    #[test]
    fn disabled_downsampling_rules() {
        let mut c = ModelConfig::preset("b5-a").unwrap();
        c.resolutions_ms = vec![20, 40];
        assert!(c.problems()[0].starts_with("resolutions_ms"));
        let mut c = ModelConfig::preset("b5-a").unwrap();
        c.layers_per_encoder = vec![6, 6];
        assert!(c.problems().iter().any(|m| m.starts_with("layers_per_encoder")));
        let mut c = ModelConfig::preset("hubert-base-toy").unwrap();
        c.aux_loss_enabled = true;
        assert!(c.problems()[0].starts_with("aux_loss_enabled"));
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = ModelConfig::preset("b2-b").unwrap();
        let back = parse_config(&c.to_toml()).unwrap();
        assert_eq!(back.config, c);
        let f = parse_config("preset = \"b4-a\"\ndim = 16\nresidual_mode = \"pre_decoder\"\ncompare = [\"mr-base-toy\", \"b5-a\"]\n").unwrap();
        assert_eq!(f.config.dim, 16);
        assert_eq!(f.config.residual_mode, ResidualMode::PreDecoder);
        assert!(!f.config.aux_loss_enabled);
        assert_eq!(f.compare.len(), 2);
    }

    #[test]
    fn file_errors() {
        assert!(matches!(parse_config("preset = \"nope\""), Err(Error::Config(_))));
        assert!(matches!(parse_config("preset = \"b4-a\"\nbogus = 1"), Err(Error::Config(_))));
        let Err(Error::Config(p)) = parse_config("preset = \"b4-a\"\nlayers_per_encoder = [4, 4]\ncompare = [\"b5-a\"]") else {
            panic!("expected config errors");
        };
        assert_eq!(p.len(), 2, "{p:?}");
        assert!(p[1].starts_with("compare"));
    }

    #[test]
    fn comparison_sets() {
        let a = ModelConfig::preset("mr-base-toy").unwrap();
        let b = ModelConfig::preset("b5-a").unwrap();
        check_comparison(&[("mr-base-toy", &a), ("b5-a", &b)]).unwrap();
        let mut c = b.clone();
        c.layers_per_encoder = vec![4, 4, 2];
        assert!(check_comparison(&[("mr-base-toy", &a), ("short", &c)]).is_err());
    }
}
