//! TOML run configuration and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetSpec;
use crate::error::{Error, Result};
use crate::flownet::{FlowModule, DEFAULT_SCALE_CLAMP};
use crate::injective::InjectiveFlow;
use crate::linalg::Rng;
use crate::training::TrainConfig;

const TAG_INIT: u64 = 21;

pub const PRESETS: &[(&str, &str)] = &[
    ("fuzzy-line", include_str!("../../../configs/fuzzy-line.toml")),
    ("sphere", include_str!("../../../configs/sphere.toml")),
    ("moebius", include_str!("../../../configs/moebius.toml")),
    ("tabular", include_str!("../../../configs/tabular.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub h_couplings: usize,
    pub f_couplings: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_clamp")]
    pub scale_clamp: f64,
}

fn default_clamp() -> f64 {
    DEFAULT_SCALE_CLAMP
}

impl ModelConfig {
    fn collect_errors(&self, errs: &mut Vec<String>) {
        if self.latent_dim == 0 {
            errs.push("model.latent_dim must be >= 1".into());
        }
        if self.latent_dim > self.data_dim {
            errs.push(format!(
                "model.latent_dim ({}) must not exceed model.data_dim ({})",
                self.latent_dim, self.data_dim
            ));
        }
        if self.h_couplings > 0 && self.latent_dim < 2 {
            errs.push("model.h_couplings must be 0 when latent_dim < 2".into());
        }
        if self.f_couplings > 0 && self.data_dim < 2 {
            errs.push("model.f_couplings must be 0 when data_dim < 2".into());
        }
        if self.hidden.iter().any(|&w| w == 0) {
            errs.push("model.hidden widths must be >= 1".into());
        }
        if !(self.scale_clamp > 0.0) {
            errs.push(format!("model.scale_clamp must be > 0, got {}", self.scale_clamp));
        }
    }

    /// Freshly initialised model; the init stream is derived from `seed`.
    pub fn build(&self, seed: u64) -> Result<InjectiveFlow> {
        let mut rng = Rng::derive(seed, &[TAG_INIT]);
        let h = FlowModule::real_nvp(self.latent_dim, self.h_couplings, &self.hidden, self.scale_clamp, &mut rng)?;
        let f = FlowModule::real_nvp(self.data_dim, self.f_couplings, &self.hidden, self.scale_clamp, &mut rng)?;
        InjectiveFlow::new(h, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Model samples for the sample dump; defaults to the test-set size.
    pub n_samples: Option<usize>,
    /// Prominent-dimension counts for the sweep.
    pub sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_samples: None,
            sweep: vec![1, 8, 16, 24, 32, 40],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(Error::Config(vec![format!(
                "unknown preset `{name}` (available: {})",
                PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            )])),
        }
    }

    /// Every violation across all sections.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.dataset.collect_errors(&mut errs);
        self.model.collect_errors(&mut errs);
        self.train.collect_errors(&mut errs);
        if let Some(dim) = self.dataset.synthetic_dim() {
            if dim != self.model.data_dim {
                errs.push(format!(
                    "model.data_dim ({}) does not match the {:?} dataset dimension ({dim})",
                    self.model.data_dim, self.dataset.kind
                ));
            }
        }
        if self.eval.sweep.iter().any(|&k| k == 0) {
            errs.push("eval.sweep entries must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_validate_and_round_trip() {
        for (name, _) in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn validation_reports_every_violation() {
        let mut cfg = RunConfig::preset("sphere").unwrap();
        cfg.model.latent_dim = 5;
        cfg.train.lr = -1.0;
        cfg.train.beta = -2.0;
        cfg.dataset.splits.test = 0.7;
        match cfg.validate() {
            Err(Error::Config(errs)) => assert!(errs.len() >= 4, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = RunConfig::preset("fuzzy-line").unwrap().to_toml().unwrap();
        let bad = text.replace("[train]", "[train]\nmomentum = 0.5");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
        assert!(RunConfig::preset("mnist").is_err());
    }

    #[test]
    fn build_is_seeded_identity() {
        let cfg = RunConfig::preset("moebius").unwrap();
        let a = cfg.model.build(3).unwrap();
        assert_eq!(a, cfg.model.build(3).unwrap());
        let x = [0.3, 0.1, -0.2];
        let z = a.project(&x).unwrap();
        assert_eq!(z, vec![0.3, 0.1]);
    }
}
