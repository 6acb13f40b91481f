//! Backbones with task heads, layer-freezing schemes, and weight transfer
//! from pretraining checkpoints.

mod arch;
mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sharpscore_nn::{GlobalAvgPool, Linear, Mode, Module, NamedSlot, Sequential, Sgd, Slot, Tensor};
use thiserror::Error;

pub use checkpoint::Checkpoint;

use crate::dataset::TargetStats;
use crate::preprocess::PixelStats;
use crate::svdh::NUM_CLASSES;

/// Number of stride-2 stages in every supported backbone.
const DOWNSAMPLINGS: u32 = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("freeze scheme {freeze} is not valid for backbone {backbone}")]
    InvalidFreeze { backbone: Backbone, freeze: FreezeScheme },
    #[error("{}", incompatible_message(reason, missing, unexpected))]
    IncompatibleCheckpoint {
        reason: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("input must be (n, 1, h, w) with h, w >= {min}, got {shape:?}")]
    InputShape { shape: Vec<usize>, min: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn incompatible_message(reason: &str, missing: &[String], unexpected: &[String]) -> String {
    fn list(names: &[String]) -> String {
        let shown: Vec<&str> = names.iter().take(6).map(String::as_str).collect();
        let more = names.len().saturating_sub(shown.len());
        if more > 0 {
            format!("{} (+{more} more)", shown.join(", "))
        } else if shown.is_empty() {
            "none".into()
        } else {
            shown.join(", ")
        }
    }
    format!(
        "incompatible checkpoint: {reason}; missing parameters: {}; unexpected parameters: {}",
        list(missing),
        list(unexpected)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Resnet34,
    Resnet50,
    Mobilenetv2,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Resnet34, Backbone::Resnet50, Backbone::Mobilenetv2];

    pub fn is_resnet(&self) -> bool {
        matches!(self, Backbone::Resnet34 | Backbone::Resnet50)
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Resnet34 => "resnet34",
            Backbone::Resnet50 => "resnet50",
            Backbone::Mobilenetv2 => "mobilenetv2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Regression,
    Classification,
}

impl HeadKind {
    pub fn width(&self) -> usize {
        match self {
            HeadKind::Regression => 1,
            HeadKind::Classification => NUM_CLASSES,
        }
    }
}

/// How much of the backbone is held fixed during finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FreezeScheme {
    #[serde(rename = "none")]
    None,
    /// Stem and the first residual stage.
    #[serde(rename = "RBs-1")]
    Rbs1,
    /// Stem and residual stages 1-2.
    #[serde(rename = "RBs-2")]
    Rbs2,
    /// Stem and inverted-residual stacks 1-2.
    #[serde(rename = "IRBs-2")]
    Irbs2,
    /// Stem and inverted-residual stacks 1-3.
    #[serde(rename = "IRBs-3")]
    Irbs3,
}

impl FreezeScheme {
    pub const ALL: [FreezeScheme; 5] = [
        FreezeScheme::None,
        FreezeScheme::Rbs1,
        FreezeScheme::Rbs2,
        FreezeScheme::Irbs2,
        FreezeScheme::Irbs3,
    ];

    pub fn is_valid_for(&self, backbone: Backbone) -> bool {
        match self {
            FreezeScheme::None => true,
            FreezeScheme::Rbs1 | FreezeScheme::Rbs2 => backbone.is_resnet(),
            FreezeScheme::Irbs2 | FreezeScheme::Irbs3 => backbone == Backbone::Mobilenetv2,
        }
    }

    /// Backbone sections held fixed, in forward order.
    pub fn frozen_sections(&self) -> &'static [&'static str] {
        match self {
            FreezeScheme::None => &[],
            FreezeScheme::Rbs1 => &["stem", "stage1"],
            FreezeScheme::Rbs2 => &["stem", "stage1", "stage2"],
            FreezeScheme::Irbs2 => &["stem", "stack1", "stack2"],
            FreezeScheme::Irbs3 => &["stem", "stack1", "stack2", "stack3"],
        }
    }
}

impl fmt::Display for FreezeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreezeScheme::None => "none",
            FreezeScheme::Rbs1 => "RBs-1",
            FreezeScheme::Rbs2 => "RBs-2",
            FreezeScheme::Irbs2 => "IRBs-2",
            FreezeScheme::Irbs3 => "IRBs-3",
        })
    }
}

/// Full-size architectures, or width/depth-reduced variants for CPU runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelScale {
    #[default]
    Full,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Scratch,
    FromCheckpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub head: HeadKind,
    pub freeze: FreezeScheme,
    pub init: Init,
    pub scale: ModelScale,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, head: HeadKind) -> Self {
        ModelSpec {
            backbone,
            head,
            freeze: FreezeScheme::None,
            init: Init::Scratch,
            scale: ModelScale::Full,
        }
    }

    pub fn desk(mut self) -> Self {
        self.scale = ModelScale::Desk;
        self
    }

    pub fn with_freeze(mut self, freeze: FreezeScheme) -> Self {
        self.freeze = freeze;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.freeze.is_valid_for(self.backbone) {
            return Err(ModelError::InvalidFreeze {
                backbone: self.backbone,
                freeze: self.freeze,
            });
        }
        Ok(())
    }
}

/// Parameter names split into those held fixed and those updated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub frozen_parameter_names: Vec<String>,
    pub trainable_parameter_names: Vec<String>,
}

struct Section {
    name: String,
    body: Sequential,
    frozen: bool,
}

/// A backbone followed by global average pooling and a linear head.
pub struct Network {
    backbone: Backbone,
    head_kind: HeadKind,
    scale: ModelScale,
    sections: Vec<Section>,
    pool: GlobalAvgPool,
    fc: Linear,
}

pub const HEAD_PREFIX: &str = "head.fc";

impl Network {
    /// Randomly initialized network for `spec` (ignores `spec.init`).
    pub fn scratch(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = arch::backbone_layout(spec.backbone, spec.scale, &mut rng);
        let fc = arch::new_head(spec.backbone, layout.feature_channels, spec.head.width(), &mut rng);
        let mut net = Network {
            backbone: spec.backbone,
            head_kind: spec.head,
            scale: spec.scale,
            sections: layout
                .sections
                .into_iter()
                .map(|(name, body)| Section {
                    name,
                    body,
                    frozen: false,
                })
                .collect(),
            pool: GlobalAvgPool::new(),
            fc,
        };
        net.apply_freeze(spec.freeze)?;
        Ok(net)
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    pub fn scale(&self) -> ModelScale {
        self.scale
    }

    pub fn min_input(&self) -> usize {
        1 << DOWNSAMPLINGS
    }

    /// Spatial size of the final feature map for a square input of `side`.
    pub fn feature_size(&self, side: usize) -> usize {
        (0..DOWNSAMPLINGS).fold(side, |n, _| n.div_ceil(2))
    }

    pub fn section_names(&self) -> Vec<&str> {
        self.sections.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn head(&self) -> &Linear {
        &self.fc
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        &mut self.fc
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let s = x.shape();
        let min = self.min_input();
        if s.len() != 4 || s[1] != 1 || s[2] < min || s[3] < min {
            return Err(ModelError::InputShape {
                shape: s.to_vec(),
                min,
            });
        }
        Ok(())
    }

    /// Activation map of the last backbone stage, before pooling.
    pub fn features(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for s in self.sections.iter_mut() {
            h = s.body.forward(&h, mode);
        }
        Ok(h)
    }

    /// Pool and project a feature map to `(n, width)` outputs.
    pub fn head_forward(&mut self, features: &Tensor) -> Tensor {
        let pooled = self.pool.forward(features, Mode::Eval);
        self.fc.forward(&pooled, Mode::Eval)
    }

    /// Gradient of the head input (the feature map) given output gradients.
    pub fn head_backward(&mut self, grad_output: &Tensor) -> Tensor {
        let g = self.fc.backward(grad_output);
        self.pool.backward(&g)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        let f = self.features(x, mode)?;
        Ok(self.head_forward(&f))
    }

    /// Backpropagate through the head and every trainable section. Frozen
    /// sections form a prefix of the backbone, so propagation stops there.
    pub fn backward(&mut self, grad_output: &Tensor) {
        let mut g = self.head_backward(grad_output);
        for s in self.sections.iter_mut().rev() {
            if s.frozen {
                break;
            }
            g = s.body.backward(&g);
        }
    }

    pub fn apply_freeze(&mut self, scheme: FreezeScheme) -> Result<FreezePlan, ModelError> {
        if !scheme.is_valid_for(self.backbone) {
            return Err(ModelError::InvalidFreeze {
                backbone: self.backbone,
                freeze: scheme,
            });
        }
        let frozen = scheme.frozen_sections();
        for s in self.sections.iter_mut() {
            s.frozen = frozen.contains(&s.name.as_str());
            s.body.set_frozen(s.frozen);
        }
        Ok(self.freeze_plan())
    }

    pub fn freeze_plan(&mut self) -> FreezePlan {
        let mut frozen_parameter_names = Vec::new();
        let mut trainable_parameter_names = Vec::new();
        for s in self.sections.iter_mut() {
            let mut slots = Vec::new();
            s.body.slots(&s.name, &mut slots);
            let names = slots.into_iter().filter(|n| n.is_param()).map(|n| n.name);
            if s.frozen {
                frozen_parameter_names.extend(names);
            } else {
                trainable_parameter_names.extend(names);
            }
        }
        let mut head = Vec::new();
        self.fc.slots(HEAD_PREFIX, &mut head);
        trainable_parameter_names.extend(head.into_iter().map(|n| n.name));
        FreezePlan {
            frozen_parameter_names,
            trainable_parameter_names,
        }
    }

    /// Every parameter and buffer, in a fixed order.
    pub fn slots(&mut self) -> Vec<NamedSlot<'_>> {
        let mut out = Vec::new();
        for s in self.sections.iter_mut() {
            s.body.slots(&s.name, &mut out);
        }
        self.fc.slots(HEAD_PREFIX, &mut out);
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        self.slots().iter().filter(|s| s.is_param()).map(|s| s.tensor().len()).sum()
    }

    pub fn state(&mut self) -> BTreeMap<String, Tensor> {
        self.slots()
            .into_iter()
            .map(|s| (s.name.clone(), s.tensor().clone()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for s in self.slots() {
            if let Slot::Param(p) = s.slot {
                p.zero_grad();
            }
        }
    }

    /// One optimizer update of every trainable parameter.
    pub fn sgd_step(&mut self, opt: &mut Sgd) {
        let mut slots = Vec::new();
        for s in self.sections.iter_mut().filter(|s| !s.frozen) {
            s.body.slots(&s.name, &mut slots);
        }
        self.fc.slots(HEAD_PREFIX, &mut slots);
        for s in slots {
            if let Slot::Param(p) = s.slot {
                opt.update(&s.name, p);
            }
        }
    }

    /// Copy tensors whose names satisfy `select` from `tensors`. Every
    /// selected name must exist on both sides with matching shapes.
    fn load_tensors(
        &mut self,
        tensors: &BTreeMap<String, Tensor>,
        select: impl Fn(&str) -> bool,
        reason: &str,
    ) -> Result<(), ModelError> {
        let mine: BTreeSet<String> = self.slots().into_iter().map(|s| s.name).filter(|n| select(n)).collect();
        let theirs: BTreeSet<String> = tensors.keys().filter(|n| select(n)).cloned().collect();
        let missing: Vec<String> = mine.difference(&theirs).cloned().collect();
        let unexpected: Vec<String> = theirs.difference(&mine).cloned().collect();
        let mut mismatched = Vec::new();
        for s in self.slots() {
            if let Some(t) = tensors.get(&s.name) {
                if select(&s.name) && t.shape() != s.tensor().shape() {
                    mismatched.push(s.name.clone());
                }
            }
        }
        if !missing.is_empty() || !unexpected.is_empty() || !mismatched.is_empty() {
            let reason = if mismatched.is_empty() {
                reason.to_string()
            } else {
                format!("{reason}; shape mismatch for {}", mismatched.join(", "))
            };
            return Err(ModelError::IncompatibleCheckpoint {
                reason,
                missing,
                unexpected,
            });
        }
        for mut s in self.slots() {
            if select(&s.name) {
                *s.tensor_mut() = tensors[&s.name].clone();
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&mut self, target_stats: Option<TargetStats>, pixel_stats: Option<PixelStats>) -> Checkpoint {
        Checkpoint {
            backbone: self.backbone,
            head: self.head_kind,
            scale: self.scale,
            target_stats,
            pixel_stats,
            epoch: None,
            tensors: self.state(),
        }
    }

    /// Exact restore of a checkpoint, head included.
    pub fn from_checkpoint(ckpt: &Checkpoint, freeze: FreezeScheme) -> Result<Self, ModelError> {
        let spec = ModelSpec {
            backbone: ckpt.backbone,
            head: ckpt.head,
            freeze,
            init: Init::Scratch,
            scale: ckpt.scale,
        };
        let mut net = Network::scratch(&spec, 0)?;
        net.load_tensors(&ckpt.tensors, |_| true, "checkpoint does not match its declared architecture")?;
        Ok(net)
    }

    pub fn restore_state(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
        self.load_tensors(tensors, |_| true, "state does not match this network")
    }
}

fn is_backbone_name(name: &str) -> bool {
    !name.starts_with("head.")
}

/// Build a network for `spec`: scratch weights, or a backbone transferred
/// from the checkpoint named in `spec.init`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Network, ModelError> {
    spec.validate()?;
    match &spec.init {
        Init::Scratch => Network::scratch(spec, seed),
        Init::FromCheckpoint(path) => {
            let source = Checkpoint::load(path)?;
            transfer_weights(&source, spec, seed)
        }
    }
}

/// Copy every backbone tensor (parameters and normalization statistics)
/// from `source` into a fresh network for `spec`. The head is always newly
/// initialized, since the source head was fit to a different target.
pub fn transfer_weights(source: &Checkpoint, spec: &ModelSpec, seed: u64) -> Result<Network, ModelError> {
    let mut net = Network::scratch(spec, seed)?;
    let mut reasons = Vec::new();
    if source.backbone != spec.backbone {
        reasons.push(format!("source backbone {} != target {}", source.backbone, spec.backbone));
    }
    if source.scale != spec.scale {
        reasons.push(format!("source scale {:?} != target {:?}", source.scale, spec.scale));
    }
    let reason = if reasons.is_empty() {
        "backbone parameters differ".to_string()
    } else {
        reasons.join("; ")
    };
    net.load_tensors(&source.tensors, is_backbone_name, &reason)?;
    if !reasons.is_empty() {
        // Names can coincide across scales; shapes are checked above, but
        // a declared mismatch is still an error.
        return Err(ModelError::IncompatibleCheckpoint {
            reason,
            missing: Vec::new(),
            unexpected: Vec::new(),
        });
    }
    Ok(net)
}

/// Frozen/trainable partition for `spec`.
pub fn freeze_plan(spec: &ModelSpec) -> Result<FreezePlan, ModelError> {
    Ok(Network::scratch(spec, 0)?.freeze_plan())
}
