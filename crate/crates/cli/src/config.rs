//! TOML run configuration: `[dataset]`, `[model]`, `[train]` and `[eval]` sections.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use mowe::model::{ModelConfig, RouterKind};
use mowe::synth::DatasetConfig;
use mowe::train::{AdamConfig, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// Counts are signed so that a negative value is reported against its key.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Defaults to `<out>/data`.
    pub dir: Option<PathBuf>,
    pub rain: i64,
    pub fog: i64,
    pub snow: i64,
    pub mix: i64,
    pub clear: i64,
    pub height: i64,
    pub width: i64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    /// Overrides the preset's router when set.
    pub router: Option<String>,
    pub route_on_normed: bool,
    pub aux_loss_weight: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: i64,
    pub batch_size: i64,
    pub lr: f64,
    pub cls_weight: f64,
    pub restoration_weight: f64,
    pub random_label: bool,
    pub freeze_classifier_after: Option<i64>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub gamma: f64,
    /// `train`, `val` or `test`.
    pub split: String,
    pub sweep_scenes: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            dir: None,
            rain: 10,
            fog: 10,
            snow: 10,
            mix: 10,
            clear: 10,
            height: 64,
            width: 64,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "desk".into(),
            router: None,
            route_on_normed: false,
            aux_loss_weight: 0.0,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs as i64,
            batch_size: t.batch_size as i64,
            lr: t.adam.lr,
            cls_weight: t.cls_weight,
            restoration_weight: t.restoration_weight,
            random_label: t.random_label,
            freeze_classifier_after: None,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            gamma: mowe::metrics::DEFAULT_GAMMA,
            split: "test".into(),
            sweep_scenes: mowe::metrics::SWEEP_SCENES as i64,
        }
    }
}

fn non_negative(key: &str, v: i64) -> Result<usize, CliError> {
    usize::try_from(v)
        .map_err(|_| CliError::Config(format!("`{key}` must be a non-negative integer, got {v}")))
}

fn positive(key: &str, v: i64) -> Result<usize, CliError> {
    match non_negative(key, v)? {
        0 => Err(CliError::Config(format!("`{key}` must be positive, got 0"))),
        n => Ok(n),
    }
}

fn finite(key: &str, v: f64, min: f64) -> Result<f64, CliError> {
    if v.is_finite() && v >= min {
        Ok(v)
    } else {
        Err(CliError::Config(format!(
            "`{key}` must be a finite number ≥ {min}, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every field by converting to the library configs.
    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset_config()?;
        self.model_config()?;
        self.train_config()?;
        finite("eval.gamma", self.eval.gamma, 0.0)?;
        self.split()?;
        positive("eval.sweep_scenes", self.eval.sweep_scenes)?;
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset
            .dir
            .clone()
            .unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model.ckpt")
    }

    pub fn recognizer_path(&self) -> PathBuf {
        self.out.join("recognizer.ckpt")
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        let d = &self.dataset;
        let counts = [
            non_negative("dataset.rain", d.rain)?,
            non_negative("dataset.fog", d.fog)?,
            non_negative("dataset.snow", d.snow)?,
            non_negative("dataset.mix", d.mix)?,
            non_negative("dataset.clear", d.clear)?,
        ];
        if counts.iter().all(|&c| c == 0) {
            return Err(CliError::Config("dataset counts are all zero".into()));
        }
        Ok(DatasetConfig {
            counts,
            height: positive("dataset.height", d.height)?,
            width: positive("dataset.width", d.width)?,
            base_seed: self.seed,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let d = self.dataset_config()?;
        let mut cfg = ModelConfig::preset(&self.model.preset, d.height, d.width)
            .map_err(|e| CliError::Config(format!("`model.preset`: {e}")))?;
        if let Some(r) = &self.model.router {
            cfg.router = r
                .parse::<RouterKind>()
                .map_err(|e| CliError::Config(format!("`model.router`: {e}")))?;
        }
        cfg.route_on_normed = self.model.route_on_normed;
        cfg.aux_loss_weight = finite("model.aux_loss_weight", self.model.aux_loss_weight, 0.0)?;
        cfg.validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: finite("train.lr", t.lr, 0.0)?,
                ..AdamConfig::default()
            },
            batch_size: positive("train.batch_size", t.batch_size)?,
            epochs: positive("train.epochs", t.epochs)?,
            restoration_weight: finite("train.restoration_weight", t.restoration_weight, 0.0)?,
            cls_weight: finite("train.cls_weight", t.cls_weight, 0.0)?,
            seed: self.seed,
            random_label: t.random_label,
            freeze_classifier_after: t
                .freeze_classifier_after
                .map(|e| non_negative("train.freeze_classifier_after", e))
                .transpose()?,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    pub fn split(&self) -> Result<mowe::synth::Split, CliError> {
        use mowe::synth::Split;
        match self.eval.split.as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            s => Err(CliError::Config(format!(
                "`eval.split` must be train, val or test, got `{s}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let d = RunConfig::default().dataset_config().unwrap();
        assert_eq!(d.counts.iter().sum::<usize>(), 50);
    }

    #[test]
    fn negative_count_names_the_key() {
        let err = RunConfig::parse("[dataset]\nsnow = -3\n").unwrap_err();
        assert!(err.to_string().contains("dataset.snow"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nepochz = 3\n").is_err());
        assert!(RunConfig::parse("[extra]\n").is_err());
    }

    #[test]
    fn sections_map_onto_library_configs() {
        let cfg = RunConfig::parse(
            "seed = 7\n[model]\npreset = \"n16-k4\"\nrouter = \"plain\"\n[train]\nepochs = 3\nrandom_label = false\n",
        )
        .unwrap();
        let m = cfg.model_config().unwrap();
        assert_eq!(
            (m.num_experts, m.top_k, m.router),
            (16, 4, RouterKind::Plain)
        );
        let t = cfg.train_config().unwrap();
        assert_eq!((t.epochs, t.seed, t.random_label), (3, 7, false));
        assert!(RunConfig::parse("[model]\nrouter = \"fancy\"\n").is_err());
        assert!(RunConfig::parse("[model]\npreset = \"huge\"\n").is_err());
    }
}
