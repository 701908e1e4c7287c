use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::exprcode::CodeLayout;
use crate::losses::LossWeights;
use crate::networks::ArchitectureSpec;
use crate::nn::AdamConfig;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct DataConfig {
    /// Rendered on the fly when `dir` is unset.
    pub synthetic: DatasetSpec,
    /// A dataset directory with a manifest, as written by `write_dataset`.
    pub dir: Option<PathBuf>,
    pub test_fraction: f64,
    pub flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Settings for the auxiliary classifiers (identity feature net and
/// expression classifier).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once validation accuracy has not improved for this many epochs.
    pub patience: usize,
    /// Fraction of each identity's images held out for validation.
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageWeights {
    /// Controller stage: code regularizer and image adversarial weights.
    pub stage1_q: f64,
    pub stage1_adv_img: f64,
    /// Reconstruction stage.
    pub stage2_identity: f64,
    pub stage2_q: f64,
    /// Refining stage.
    pub stage3: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    pub classes: usize,
    pub code_block: usize,
    pub data: DataConfig,
    pub stage_epochs: [usize; 3],
    pub optimizer: OptimizerConfig,
    pub weights: StageWeights,
    pub feature_net: ClassifierConfig,
    pub expression_classifier: ClassifierConfig,
    /// Intermediate checkpoint interval in steps (0 disables).
    pub checkpoint_every: u64,
    pub deterministic: bool,
    pub output_dir: PathBuf,
    /// Replaces the preset's layer widths; the identity count is still taken
    /// from the data.
    pub architecture: Option<ArchitectureSpec>,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let classifier = ClassifierConfig {
            learning_rate: 2e-4,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            validation_fraction: 0.1,
        };
        let weights = StageWeights {
            stage1_q: 1.0,
            stage1_adv_img: 1.0,
            stage2_identity: 1.0,
            stage2_q: 0.1,
            stage3: LossWeights::paper(),
        };
        match preset {
            Preset::Desk => Self {
                preset,
                seed: 0,
                classes: 3,
                code_block: 5,
                data: DataConfig {
                    synthetic: DatasetSpec::desk(0),
                    dir: None,
                    test_fraction: 0.1,
                    flip: true,
                },
                stage_epochs: [20, 20, 20],
                optimizer: OptimizerConfig {
                    learning_rate: 2e-4,
                    beta1: 0.5,
                    beta2: 0.999,
                    batch_size: 32,
                },
                weights,
                feature_net: classifier,
                expression_classifier: ClassifierConfig {
                    max_epochs: 8,
                    ..classifier
                },
                checkpoint_every: 500,
                deterministic: true,
                output_dir: PathBuf::from("runs/desk"),
                architecture: None,
            },
            Preset::Paper => {
                let mut synthetic = DatasetSpec::desk(0);
                synthetic.n_identities = 80;
                synthetic.classes = 6;
                synthetic.images_per_identity_per_class = 3;
                synthetic.resolution = 128;
                Self {
                    preset,
                    seed: 0,
                    classes: 6,
                    code_block: 5,
                    data: DataConfig {
                        synthetic,
                        dir: None,
                        test_fraction: 0.1,
                        flip: true,
                    },
                    stage_epochs: [100, 100, 100],
                    optimizer: OptimizerConfig {
                        learning_rate: 2e-4,
                        beta1: 0.5,
                        beta2: 0.999,
                        batch_size: 48,
                    },
                    weights,
                    feature_net: ClassifierConfig {
                        batch_size: 48,
                        ..classifier
                    },
                    expression_classifier: ClassifierConfig {
                        batch_size: 48,
                        max_epochs: 20,
                        ..classifier
                    },
                    checkpoint_every: 1000,
                    deterministic: true,
                    output_dir: PathBuf::from("runs/paper"),
                    architecture: None,
                }
            }
        }
    }

    /// Preset defaults overlaid with the keys present in a TOML document.
    pub fn layered(preset: Preset, overrides: Option<&str>) -> Result<Self> {
        let base = Self::preset(preset);
        let Some(text) = overrides else {
            return Ok(base);
        };
        let mut value = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        let patch: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = patch.get("preset").and_then(|p| p.as_str()) {
            if p.parse::<Preset>()? != preset {
                value = toml::Value::try_from(Self::preset(p.parse()?)).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        merge(&mut value, patch);
        let config: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(preset: Preset, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::layered(preset, Some(&text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short hash of the canonical serialized form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())[..16].to_string()
    }

    pub fn layout(&self) -> Result<CodeLayout> {
        CodeLayout::new(self.classes, self.code_block)
    }

    pub fn architecture(&self, n_identities: usize) -> Result<ArchitectureSpec> {
        let layout = self.layout()?;
        if let Some(custom) = &self.architecture {
            let spec = ArchitectureSpec {
                layout,
                feature_net_classes: n_identities,
                ..custom.clone()
            };
            spec.validate()?;
            return Ok(spec);
        }
        let mut spec = match self.preset {
            Preset::Desk => ArchitectureSpec::desk(layout, n_identities),
            Preset::Paper => ArchitectureSpec::paper(layout, n_identities),
        };
        if self.data.dir.is_none() {
            spec.resolution = self.data.synthetic.resolution;
            let stages = spec.resolution.trailing_zeros() as usize;
            if spec.resolution.is_power_of_two() && stages != spec.decoder_channels.len() {
                // keep the published widths, adding or dropping leading stages
                let mut channels = spec.decoder_channels.clone();
                while channels.len() < stages {
                    channels.insert(0, spec.decoder_input_channels);
                }
                while channels.len() > stages {
                    channels.remove(0);
                }
                spec.decoder_channels = channels;
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if self.data.dir.is_none() {
            self.data.synthetic.validate()?;
            if self.data.synthetic.classes != self.classes {
                return Err(Error::validation(
                    "data.synthetic.classes",
                    format!("{} differs from classes = {}", self.data.synthetic.classes, self.classes),
                ));
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::validation("data.test_fraction", "must lie in (0, 1)"));
        }
        for (name, c) in [("feature_net", &self.feature_net), ("expression_classifier", &self.expression_classifier)] {
            if c.batch_size < 2 {
                return Err(Error::validation(format!("{name}.batch_size"), "must be at least 2"));
            }
            if !(c.validation_fraction > 0.0 && c.validation_fraction < 1.0) {
                return Err(Error::validation(format!("{name}.validation_fraction"), "must lie in (0, 1)"));
            }
        }
        if self.optimizer.batch_size < 2 {
            return Err(Error::validation("optimizer.batch_size", "must be at least 2 for batch normalization"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::validation("optimizer.learning_rate", "must be positive"));
        }
        self.weights.stage3.validate()?;
        Ok(())
    }
}

fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
