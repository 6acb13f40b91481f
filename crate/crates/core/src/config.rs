//! Run configuration, read from TOML.
//!
//! Every key is optional. Unknown keys are rejected. Defaults:
//!
//! ```toml
//! seed = 0
//! out = "runs"
//! desk_scale = false
//!
//! [data]
//! manifest = "manifest.csv"            # SvdH manifest
//! pretrain_manifest = "bone_age.csv"   # bone-age manifest
//! # agreement_csv = "readers.csv"      # optional two-column rater scores
//!
//! [model]
//! backbone = "resnet34"                # resnet34 | resnet50 | mobilenetv2
//! freeze = "none"                      # none | RBs-1 | RBs-2 | IRBs-2 | IRBs-3
//! # init_checkpoint = "runs/pretrain/best.ckpt"
//!
//! [train]
//! task = "svdh_regression"             # bone_age | svdh_regression | svdh_classification
//! # epochs = 100                       # 50 for bone_age
//! batch_size = 4
//! learning_rate = 0.001
//! weight_decay = 0.001
//! momentum = 0.9
//! # loss = "mse"                       # mse | smooth | cross_entropy
//! smooth = { a = 0.6, b = 0.0, c = 1.0 }
//!
//! [pretrain]
//! epochs = 50
//!
//! [augment]
//! horizontal_flip_prob = 0.5
//! intensity_scale = [0.9, 1.1]
//! # target_size = 1024                 # 64 with desk_scale
//!
//! [binning]
//! edges = [0, 5, 10, 15, 20, 30, 45, 70, 110, 180, 280]
//!
//! [evaluate]
//! # checkpoint = "<out>/train/best.ckpt"
//! # predictions = "preds.csv"          # score an id,predicted CSV instead
//! split = "test"
//!
//! [stack]
//! members = []                         # exactly three checkpoints
//! mode = "regression"                  # regression | classification_all_classes | classification_single_class
//! batch_size = 4
//! epochs = 100
//!
//! [explain]
//! # checkpoint = "<out>/train/best.ckpt"
//! split = "test"
//! alpha = 0.5
//! max_per_kind = 4
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Split;
use crate::ensemble::{StackFit, StackMode};
use crate::models::{Backbone, FreezeScheme, HeadKind, Init, ModelScale, ModelSpec};
use crate::preprocess::{AugmentPolicy, FULL_SIZE};
use crate::svdh::SeverityBinning;
use crate::training::{LossKind, SmoothLossParams, TrainConfig, TrainTask};

pub const DESK_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {message}")]
    Key { key: &'static str, message: String },
}

fn key(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub pretrain_manifest: PathBuf,
    pub agreement_csv: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: "manifest.csv".into(),
            pretrain_manifest: "bone_age.csv".into(),
            agreement_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: Backbone,
    pub freeze: FreezeScheme,
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: Backbone::Resnet34,
            freeze: FreezeScheme::None,
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub task: TrainTask,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub loss: Option<LossKind>,
    pub smooth: SmoothLossParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            task: TrainTask::SvdhRegression,
            epochs: None,
            batch_size: 4,
            learning_rate: 0.001,
            weight_decay: 0.001,
            momentum: 0.9,
            loss: None,
            smooth: SmoothLossParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: TrainTask::BoneAge.default_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub horizontal_flip_prob: f64,
    pub intensity_scale: (f64, f64),
    pub target_size: Option<usize>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentPolicy::default();
        AugmentSection {
            horizontal_flip_prob: p.horizontal_flip_prob,
            intensity_scale: p.intensity_scale,
            target_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    pub edges: Vec<f64>,
}

impl Default for BinningSection {
    fn default() -> Self {
        BinningSection {
            edges: SeverityBinning::DEFAULT_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub checkpoint: Option<PathBuf>,
    /// Score an `id,predicted` CSV instead of running a checkpoint.
    pub predictions: Option<PathBuf>,
    pub split: Split,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            checkpoint: None,
            predictions: None,
            split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackSection {
    pub members: Vec<PathBuf>,
    pub mode: StackMode,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for StackSection {
    fn default() -> Self {
        StackSection {
            members: Vec::new(),
            mode: StackMode::Regression,
            batch_size: 4,
            epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub alpha: f32,
    pub max_per_kind: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            checkpoint: None,
            split: Split::Test,
            alpha: 0.5,
            max_per_kind: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub desk_scale: bool,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub augment: AugmentSection,
    pub binning: BinningSection,
    pub evaluate: EvaluateSection,
    pub stack: StackSection,
    pub explain: ExplainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: "runs".into(),
            desk_scale: false,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            pretrain: PretrainSection::default(),
            augment: AugmentSection::default(),
            binning: BinningSection::default(),
            evaluate: EvaluateSection::default(),
            stack: StackSection::default(),
            explain: ExplainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim().replace('\n', " ")))?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = RunConfig::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.manifest);
        fix(&mut self.data.pretrain_manifest);
        for p in [
            &mut self.data.agreement_csv,
            &mut self.model.init_checkpoint,
            &mut self.evaluate.checkpoint,
            &mut self.evaluate.predictions,
            &mut self.explain.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.stack.members.iter_mut().for_each(fix);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.model.freeze.is_valid_for(self.model.backbone) {
            return Err(key(
                "model.freeze",
                format!("{} is not valid for backbone {}", self.model.freeze, self.model.backbone),
            ));
        }
        if self.train.epochs == Some(0) {
            return Err(key("train.epochs", "must be at least 1"));
        }
        if self.pretrain.epochs == 0 {
            return Err(key("pretrain.epochs", "must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(key("train.batch_size", "must be at least 1"));
        }
        for (k, v) in [
            ("train.learning_rate", self.train.learning_rate),
            ("train.weight_decay", self.train.weight_decay),
            ("train.momentum", self.train.momentum),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(key(k, format!("must be a non-negative number, got {v}")));
            }
        }
        if let Some(loss) = self.train.loss {
            let classification = self.train.task == TrainTask::SvdhClassification;
            if classification != (loss == LossKind::CrossEntropy) {
                return Err(key("train.loss", format!("{loss:?} does not fit task {:?}", self.train.task)));
            }
        }
        if !(self.train.smooth.c > 0.0) {
            return Err(key("train.smooth.c", "must be positive"));
        }
        self.augment_policy()
            .validate()
            .map_err(|e| key("augment", e.to_string()))?;
        if self.augment.target_size.is_some_and(|s| s < 32) {
            return Err(key("augment.target_size", "must be at least 32"));
        }
        SeverityBinning::new(&self.binning.edges).map_err(|e| key("binning.edges", e.to_string()))?;
        if !self.stack.members.is_empty() && self.stack.members.len() != 3 {
            return Err(key("stack.members", format!("need exactly 3 checkpoints, got {}", self.stack.members.len())));
        }
        if self.stack.batch_size == 0 || self.stack.epochs == 0 {
            return Err(key("stack", "batch_size and epochs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            return Err(key("explain.alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn scale(&self) -> ModelScale {
        if self.desk_scale {
            ModelScale::Desk
        } else {
            ModelScale::Full
        }
    }

    pub fn target_size(&self) -> usize {
        self.augment
            .target_size
            .unwrap_or(if self.desk_scale { DESK_SIZE } else { FULL_SIZE })
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            horizontal_flip_prob: self.augment.horizontal_flip_prob,
            intensity_scale: self.augment.intensity_scale,
            target_size: self.target_size(),
        }
    }

    pub fn binning(&self) -> SeverityBinning {
        SeverityBinning::new(&self.binning.edges).expect("validated")
    }

    pub fn model_spec(&self, head: HeadKind) -> ModelSpec {
        ModelSpec {
            backbone: self.model.backbone,
            head,
            freeze: self.model.freeze,
            init: match &self.model.init_checkpoint {
                Some(p) => Init::FromCheckpoint(p.clone()),
                None => Init::Scratch,
            },
            scale: self.scale(),
        }
    }

    /// Training settings for the finetuning task.
    pub fn train_config(&self) -> TrainConfig {
        let task = self.train.task;
        TrainConfig {
            task,
            epochs: self.train.epochs.unwrap_or(task.default_epochs()),
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            momentum: self.train.momentum,
            loss: self.train.loss.unwrap_or(task.default_loss()),
            smooth: self.train.smooth,
            seed: self.seed,
            augment: self.augment_policy(),
            binning: self.binning(),
        }
    }

    /// Training settings for bone-age pretraining.
    pub fn pretrain_config(&self) -> TrainConfig {
        let mut c = self.train_config();
        c.task = TrainTask::BoneAge;
        c.epochs = self.pretrain.epochs;
        c.loss = match self.train.loss {
            Some(l @ (LossKind::Mse | LossKind::Smooth)) => l,
            _ => LossKind::Mse,
        };
        c
    }

    pub fn stack_fit(&self) -> StackFit {
        StackFit {
            batch_size: self.stack.batch_size,
            epochs: self.stack.epochs,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        let t = c.train_config();
        assert_eq!((t.epochs, t.batch_size, t.learning_rate), (100, 4, 0.001));
        assert_eq!((t.weight_decay, t.momentum), (0.001, 0.9));
        assert_eq!(c.pretrain_config().epochs, 50);
        assert_eq!(c.target_size(), 1024);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml("[train]\nbatchsize = 4\n").unwrap_err().to_string();
        assert!(e.contains("batchsize"), "{e}");
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn validation_names_key() {
        let e = RunConfig::from_toml("[model]\nbackbone = \"mobilenetv2\"\nfreeze = \"RBs-1\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("model.freeze"), "{e}");
        let e = RunConfig::from_toml("[train]\ntask = \"svdh_classification\"\nloss = \"mse\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.loss"), "{e}");
        let e = RunConfig::from_toml("[binning]\nedges = [0, 280]\n").unwrap_err().to_string();
        assert!(e.contains("binning.edges"), "{e}");
    }

    #[test]
    fn desk_scale_and_round_trip() {
        let c = RunConfig::from_toml("desk_scale = true\n[train]\ntask = \"svdh_classification\"\n").unwrap();
        assert_eq!(c.target_size(), DESK_SIZE);
        assert_eq!(c.train_config().loss, LossKind::CrossEntropy);
        assert_eq!(c.pretrain_config().loss, LossKind::Mse);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
