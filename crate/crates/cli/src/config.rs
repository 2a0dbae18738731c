//! Experiment configuration: one TOML file with `[data]`, `[model]`,
//! `[sft]`, `[align]` and `[eval]` tables. Every key is optional and
//! unknown keys are rejected.

use std::path::Path;

use gdpo_core::align::{AlignConfig, GdpoTerms, Method, NllScope};
use gdpo_core::datagen::{DatasetManifest, DistributionSource, SplitSizes, TaskKind, TopicSpec};
use gdpo_core::policy::{Decoding, ModelConfig};
use gdpo_core::train::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub topics: usize,
    pub beliefs: usize,
    pub styles: usize,
    pub task: TaskKind,
    pub seed: u64,
    pub distribution: DistributionSource,
    /// Examples per topic in each split.
    pub train: usize,
    pub eval: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            beliefs: 5,
            styles: 4,
            task: TaskKind::Opinion,
            seed: 7,
            distribution: DistributionSource::Dirichlet { alpha: 1.0 },
            train: 500,
            eval: 40,
            test: 200,
        }
    }
}

impl DataConfig {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::new(
            TopicSpec {
                topics: self.topics,
                beliefs: self.beliefs,
                styles: self.styles,
                task: self.task,
                distribution: self.distribution.clone(),
                seed: self.seed,
            },
            SplitSizes {
                train: self.train,
                eval: self.eval,
                test: self.test,
            },
        )
    }
}

/// Optimization knobs shared by both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub noise_level: f64,
    /// Train on uniformly resampled beliefs instead of the data's.
    pub uniform: bool,
}

impl Default for SftConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
            epochs: 2,
            eval_every: 20,
            seed: t.seed,
            noise_level: t.noise_level,
            uniform: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignSection {
    pub method: Method,
    pub beta: f64,
    pub calibration_weight: f64,
    pub lambda_desirable: f64,
    pub lambda_undesirable: f64,
    pub nll_scope: NllScope,
    pub terms: GdpoTerms,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub noise_level: f64,
}

impl Default for AlignSection {
    fn default() -> Self {
        let a = AlignConfig::default();
        let t = TrainConfig::default();
        Self {
            method: a.method,
            beta: a.beta,
            calibration_weight: a.calibration_weight,
            lambda_desirable: a.lambda_desirable,
            lambda_undesirable: a.lambda_undesirable,
            nll_scope: a.nll_scope,
            terms: a.terms,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
            epochs: 6,
            eval_every: 20,
            seed: t.seed,
            noise_level: t.noise_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingKind {
    Greedy,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub decoding: DecodingKind,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decoding: DecodingKind::Temperature,
            temperature: 1.0,
            seed: 7,
        }
    }
}

impl EvalConfig {
    pub fn decoding(&self) -> Decoding {
        match self.decoding {
            DecodingKind::Greedy => Decoding::Greedy,
            DecodingKind::Temperature => Decoding::Temperature(self.temperature),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub align: AlignSection,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn sft_train_config(&self) -> TrainConfig {
        let s = &self.sft;
        TrainConfig {
            optimizer: s.optimizer,
            learning_rate: s.learning_rate,
            warmup_steps: s.warmup_steps,
            batch_size: s.batch_size,
            epochs: s.epochs,
            eval_every: s.eval_every,
            seed: s.seed,
            noise_level: s.noise_level,
            align: AlignConfig {
                method: Method::Sft,
                ..AlignConfig::default()
            },
        }
    }

    pub fn align_train_config(&self) -> TrainConfig {
        let a = &self.align;
        TrainConfig {
            optimizer: a.optimizer,
            learning_rate: a.learning_rate,
            warmup_steps: a.warmup_steps,
            batch_size: a.batch_size,
            epochs: a.epochs,
            eval_every: a.eval_every,
            seed: a.seed,
            noise_level: a.noise_level,
            align: AlignConfig {
                beta: a.beta,
                method: a.method,
                lambda_desirable: a.lambda_desirable,
                lambda_undesirable: a.lambda_undesirable,
                calibration_weight: a.calibration_weight,
                nll_scope: a.nll_scope,
                terms: a.terms,
            },
        }
    }

    /// Checks every section with field-level messages.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: gdpo_core::Error| CliError::Config(format!("{name}: {e}"));
        self.data.manifest().spec.validate().map_err(|e| field("data", e))?;
        if self.data.train == 0 {
            return Err(CliError::Config("data.train: must be >= 1".into()));
        }
        self.sft_train_config()
            .validate()
            .map_err(|e| field("sft", e))?;
        if self.align.method == Method::Sft {
            return Err(CliError::Config(
                "align.method: must be dpo, gdpo or kto-gdpo".into(),
            ));
        }
        self.align_train_config()
            .validate()
            .map_err(|e| field("align", e))?;
        if self.eval.decoding == DecodingKind::Temperature
            && !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite())
        {
            return Err(CliError::Config("eval.temperature: must be > 0".into()));
        }
        if self.model.context_length() < 2 {
            return Err(CliError::Config("model.context_length: must be >= 2".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[data]\ntopicz = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[extra]\n").is_err());
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
[data]
topics = 3
beliefs = 5
styles = 2
task = "opinion"
seed = 1
train = 10
eval = 2
test = 2
distribution = { kind = "explicit", probs = [[0.06, 0.56, 0.24, 0.08, 0.06]] }

[model]
backend = "neural"
width = 16
blocks = 1

[sft]
epochs = 1
uniform = true

[align]
method = "kto-gdpo"
beta = 0.2
terms = "calibration-only"

[eval]
decoding = "greedy"
"#;
        let c: RunConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.align.method, Method::KtoGdpo);
        assert_eq!(c.model.backend_name(), "neural");
        assert!(c.sft.uniform);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.align.beta = 0.2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn too_many_beliefs_name_the_section() {
        let mut c = RunConfig::default();
        c.data.beliefs = 7;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("class alphabet exhausted"), "{msg}");
        assert!(msg.starts_with("data"), "{msg}");
    }
}
