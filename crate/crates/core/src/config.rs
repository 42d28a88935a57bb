//! TOML run configuration with sections `[model]`, `[train]`, `[data]`,
//! `[eval]` and `[usecase]`. Unknown keys are rejected and every key has a
//! default, so an empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, build_dataset, ppm, ClassCounts, ClassLabel, Interpolation, LesionParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::TrainConfig;
use crate::usecase::UseCaseConfig;
use crate::zoo::{ModelKind, PyramidSpec, UpsampleMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Must agree with `kind` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upsample_mode: Option<UpsampleMode>,
    pub base_resolution: usize,
    pub levels: usize,
    pub channels_per_level: Vec<usize>,
    pub disc_width: usize,
    pub z_dim: usize,
    pub residual_depth: usize,
    pub interpolation: Interpolation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = PyramidSpec::default();
        Self {
            kind: ModelKind::DdganUp,
            upsample_mode: None,
            base_resolution: s.base_resolution,
            levels: s.levels,
            channels_per_level: s.channels_per_level,
            disc_width: s.disc_width,
            z_dim: s.z_dim,
            residual_depth: s.residual_depth,
            interpolation: s.interpolation,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> PyramidSpec {
        PyramidSpec {
            base_resolution: self.base_resolution,
            levels: self.levels,
            channels_per_level: self.channels_per_level.clone(),
            disc_width: self.disc_width,
            z_dim: self.z_dim,
            residual_depth: self.residual_depth,
            interpolation: self.interpolation,
        }
    }

    /// The configured kind, or `cli` when given, checked against
    /// `upsample_mode`.
    pub fn resolve_kind(&self, cli: Option<ModelKind>) -> Result<ModelKind> {
        let kind = cli.unwrap_or(self.kind);
        if let Some(mode) = self.upsample_mode {
            if mode != kind.upsample_mode() {
                return Err(Error::Config(format!(
                    "model.upsample_mode = {} conflicts with model kind {kind}",
                    mode.as_str()
                )));
            }
        }
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    #[default]
    Procedural,
    Dir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mode: DataMode,
    /// Image directory for `mode = "dir"`: a dataset directory or a flat
    /// folder of PPMs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub counts: ClassCounts,
    /// Defaults to the model's top resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Restricts generator training to one class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassLabel>,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mode: DataMode::Procedural,
            path: None,
            counts: ClassCounts::new(500, 150, 100),
            resolution: None,
            class: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub n_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: metrics::DEFAULT_BINS,
            n_samples: metrics::DEFAULT_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub usecase: UseCaseConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file; an unreadable file is a configuration error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the effective configuration as `config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }

    pub fn data_resolution(&self) -> usize {
        self.data.resolution.unwrap_or_else(|| self.model.spec().top_resolution())
    }

    /// The generator training images described by `[data]`, as one batch.
    pub fn training_images(&self) -> Result<Tensor> {
        let d = &self.data;
        let ds = match d.mode {
            DataMode::Procedural => build_dataset(
                &mut Rng::new(d.seed),
                d.counts,
                self.data_resolution(),
                &LesionParams::default(),
            )?,
            DataMode::Dir => {
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.path is required for mode = \"dir\"".into()))?;
                let structured = path.join("manifest.csv").exists()
                    || ClassLabel::ALL.iter().any(|l| path.join(l.as_str()).is_dir());
                if !structured {
                    if d.class.is_some() {
                        return Err(Error::Config("data.class needs a class-structured directory".into()));
                    }
                    return ppm::load_dir(path);
                }
                data::load_dataset_dir(path)?
            }
        };
        match d.class {
            Some(label) => ds.class_images(label),
            None => ds.images(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.eval.n_samples, 2000);
        assert_eq!(c.model.z_dim, 64);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("[train]\nbatch_sise = 4\n").unwrap_err();
        assert!(err.to_string().contains("batch_sise"), "{err}");
        assert!(Config::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = Config::parse(
            "[model]\nkind = \"lapgan\"\nlevels = 2\n[train]\nsteps = 5\nloss = \"vanilla\"\n[data]\nclass = \"melanoma\"\n",
        )
        .unwrap();
        assert_eq!(Config::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn upsample_mode_must_agree() {
        let c = Config::parse("[model]\nkind = \"ddgan-up\"\nupsample_mode = \"deconv\"\n").unwrap();
        assert!(c.model.resolve_kind(None).is_err());
        assert_eq!(c.model.resolve_kind(Some(ModelKind::DdganDeconv)).unwrap(), ModelKind::DdganDeconv);
    }
}
