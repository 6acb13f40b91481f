//! Loss functions and the optimization loop with best-validation
//! checkpoint selection.

mod loss;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sharpscore_nn::{par, Mode, Sgd, Tensor};
use thiserror::Error;

pub use loss::{
    cross_entropy_loss, cross_entropy_loss_grad, mse_loss, mse_loss_grad, smooth_loss, smooth_loss_grad, softmax,
    LossError, SmoothLossParams,
};

use crate::dataset::{DatasetError, ImageRecord, Manifest, Split, TargetStats, Task};
use crate::imaging::{GrayImage, ImageError};
use crate::models::{Checkpoint, HeadKind, ModelError, Network};
use crate::preprocess::{apply_augmentation, prepare_eval, resize_square, AugmentDraw, AugmentPolicy, PixelStats, PreprocessError};
use crate::svdh::{SeverityBinning, SvdhError, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Score(#[from] SvdhError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTask {
    BoneAge,
    SvdhRegression,
    SvdhClassification,
}

impl TrainTask {
    pub fn head(&self) -> HeadKind {
        match self {
            TrainTask::SvdhClassification => HeadKind::Classification,
            _ => HeadKind::Regression,
        }
    }

    pub fn manifest_task(&self) -> Task {
        match self {
            TrainTask::BoneAge => Task::BoneAge,
            _ => Task::Svdh,
        }
    }

    pub fn default_epochs(&self) -> usize {
        match self {
            TrainTask::BoneAge => 50,
            _ => 100,
        }
    }

    pub fn default_loss(&self) -> LossKind {
        match self {
            TrainTask::SvdhClassification => LossKind::CrossEntropy,
            _ => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Smooth,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TrainTask,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub loss: LossKind,
    pub smooth: SmoothLossParams,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub binning: SeverityBinning,
}

impl TrainConfig {
    pub fn new(task: TrainTask) -> Self {
        TrainConfig {
            task,
            epochs: task.default_epochs(),
            batch_size: 4,
            learning_rate: 0.001,
            weight_decay: 0.001,
            momentum: 0.9,
            loss: task.default_loss(),
            smooth: SmoothLossParams::default(),
            seed: 0,
            augment: AugmentPolicy::default(),
            binning: SeverityBinning::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let classification = self.task == TrainTask::SvdhClassification;
        if classification != (self.loss == LossKind::CrossEntropy) {
            return Err(TrainError::Config(format!(
                "loss {:?} cannot be used for task {:?}",
                self.loss, self.task
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("momentum", self.momentum),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        self.smooth.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch losses seen while updating.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean absolute error in target units (class indices for
    /// classification), from an inference pass after the epoch.
    pub train_mae: f64,
    pub val_mae: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub pixel_stats: PixelStats,
}

/// 1-based epoch with the lowest validation loss; ties go to the earliest.
pub fn best_epoch(history: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in history {
        if best.is_none_or(|b| r.val_loss < b.val_loss) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

/// Decoded images of a manifest, resized once to the network input size.
pub struct ImageBank {
    pub size: usize,
    images: Vec<GrayImage>,
}

impl ImageBank {
    pub fn load(records: &[ImageRecord], size: usize) -> Result<Self, TrainError> {
        let loaded = par::map(records.len(), |i| -> Result<GrayImage, TrainError> {
            let img = GrayImage::open(&records[i].image_path)?;
            Ok(resize_square(&img, size)?)
        });
        let images = loaded.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(ImageBank { size, images })
    }

    pub fn from_images(images: &[GrayImage], size: usize) -> Result<Self, TrainError> {
        let images = images.iter().map(|i| resize_square(i, size)).collect::<Result<Vec<_>, _>>()?;
        Ok(ImageBank { size, images })
    }

    pub fn get(&self, index: usize) -> &GrayImage {
        &self.images[index]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_stats(&self, indices: &[usize]) -> Result<PixelStats, TrainError> {
        Ok(PixelStats::from_images(indices.iter().map(|&i| &self.images[i]))?)
    }

    /// Normalized `(n, 1, s, s)` batch of the given images.
    pub fn eval_batch(&self, indices: &[usize], stats: &PixelStats) -> Result<Tensor, TrainError> {
        let samples = par::map(indices.len(), |k| prepare_eval(&self.images[indices[k]], self.size, stats));
        let samples = samples
            .into_iter()
            .map(|r| r.map(|img| img.to_sample()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::stack(&samples))
    }
}

/// SplitMix64 finalizer, used to derive independent per-image seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn augmentation_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ index as u64)
}

/// Per-sample learning signal.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Standardized regression targets.
    Regression(Vec<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(v) => Targets::Regression(idx.iter().map(|&i| v[i]).collect()),
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Loss of network outputs against targets, and its gradient with respect
/// to the outputs.
pub fn loss_and_grad(
    kind: LossKind,
    smooth: &SmoothLossParams,
    outputs: &[f32],
    targets: &Targets,
) -> Result<(f64, Vec<f32>), TrainError> {
    let (loss, grad) = match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(labels)) => {
            let logits: Vec<f64> = outputs.iter().map(|&v| v as f64).collect();
            cross_entropy_loss_grad(&logits, labels, NUM_CLASSES)?
        }
        (LossKind::Mse | LossKind::Smooth, Targets::Regression(y)) => {
            let residuals: Vec<f64> = y.iter().zip(outputs).map(|(y, &p)| y - p as f64).collect();
            let (l, g) = if kind == LossKind::Mse {
                mse_loss_grad(&residuals)?
            } else {
                smooth_loss_grad(&residuals, smooth)?
            };
            // d/d(prediction) = -d/d(residual)
            (l, g.into_iter().map(|v| -v).collect())
        }
        _ => return Err(TrainError::Config(format!("loss {kind:?} does not match the targets"))),
    };
    Ok((loss, grad.into_iter().map(|v| v as f32).collect()))
}

/// Predictions in target units from raw network outputs: destandardized
/// scores for regression, argmax class indices for classification.
pub fn decode_outputs(head: HeadKind, outputs: &[f32], stats: Option<&TargetStats>) -> Vec<f64> {
    match head {
        HeadKind::Regression => outputs
            .iter()
            .map(|&z| stats.map_or(z as f64, |s| s.destandardize(z as f64)))
            .collect(),
        HeadKind::Classification => outputs.chunks_exact(NUM_CLASSES).map(|row| argmax(row) as f64).collect(),
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn abs_errors(head: HeadKind, outputs: &[f32], targets: &Targets, stats: &TargetStats) -> Vec<f64> {
    let pred = decode_outputs(head, outputs, Some(stats));
    match targets {
        Targets::Regression(z) => pred.iter().zip(z).map(|(p, z)| (p - stats.destandardize(*z)).abs()).collect(),
        Targets::Classes(c) => pred.iter().zip(c).map(|(p, &c)| (p - c as f64).abs()).collect(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Raw outputs for already-resized images, `batch_size` at a time.
pub fn infer(
    net: &mut Network,
    bank: &ImageBank,
    indices: &[usize],
    stats: &PixelStats,
    batch_size: usize,
) -> Result<Vec<f32>, TrainError> {
    let mut out = Vec::new();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = bank.eval_batch(chunk, stats)?;
        out.extend_from_slice(net.forward(&x, Mode::Eval)?.data());
    }
    Ok(out)
}

/// Raw outputs of a checkpoint on image files.
pub fn predict_files(ckpt: &Checkpoint, paths: &[&Path], size: usize, batch_size: usize) -> Result<Vec<f32>, TrainError> {
    let mut net = Network::from_checkpoint(ckpt, crate::models::FreezeScheme::None)?;
    let stats = ckpt.pixel_stats.unwrap_or(PixelStats::IDENTITY);
    let records: Vec<ImageRecord> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| ImageRecord {
            id: i.to_string(),
            image_path: p.to_path_buf(),
            target: 0.0,
            split: Split::Test,
        })
        .collect();
    let bank = ImageBank::load(&records, size)?;
    let all: Vec<usize> = (0..bank.len()).collect();
    infer(&mut net, &bank, &all, &stats, batch_size)
}

/// Learning targets for every record of the manifest.
pub fn targets_for(manifest: &Manifest, config: &TrainConfig) -> Result<Targets, TrainError> {
    Ok(match config.task.head() {
        HeadKind::Regression => Targets::Regression(
            manifest
                .records
                .iter()
                .map(|r| manifest.target_stats.standardize(r.target))
                .collect(),
        ),
        HeadKind::Classification => Targets::Classes(
            manifest
                .records
                .iter()
                .map(|r| config.binning.score_to_class(r.target))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Train `net` on the manifest's train split, scoring the validation split
/// after every epoch. Images are decoded from the manifest paths.
pub fn train(net: &mut Network, manifest: &Manifest, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let bank = ImageBank::load(&manifest.records, config.augment.target_size)?;
    train_with_bank(net, manifest, &bank, config, |_| {})
}

/// As [`train`], with images supplied in manifest order and a callback per
/// finished epoch.
pub fn train_with_bank(
    net: &mut Network,
    manifest: &Manifest,
    bank: &ImageBank,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if manifest.task != config.task.manifest_task() {
        return Err(TrainError::Config(format!(
            "manifest task {:?} does not match training task {:?}",
            manifest.task, config.task
        )));
    }
    if net.head_kind() != config.task.head() {
        return Err(TrainError::Config(format!(
            "model head {:?} does not match training task {:?}",
            net.head_kind(),
            config.task
        )));
    }
    if bank.len() != manifest.records.len() || bank.size != config.augment.target_size {
        return Err(TrainError::Config("image bank does not match the manifest".into()));
    }
    let train_idx = manifest.split_indices(Split::Train);
    let val_idx = manifest.split_indices(Split::Validation);
    if train_idx.is_empty() {
        return Err(DatasetError::NoTrainingRows.into());
    }
    if val_idx.is_empty() {
        return Err(TrainError::Config("manifest has no validation rows".into()));
    }

    let head = net.head_kind();
    let stats = bank.pixel_stats(&train_idx)?;
    let targets = targets_for(manifest, config)?;
    let val_targets = targets.select(&val_idx);
    let target_stats = (head == HeadKind::Regression).then_some(manifest.target_stats);
    let mut opt = Sgd::new(
        config.learning_rate as f32,
        config.momentum as f32,
        config.weight_decay as f32,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let size = config.augment.target_size;
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let samples = par::map(idx.len(), |k| {
                let mut rng = ChaCha8Rng::seed_from_u64(augmentation_seed(config.seed, epoch, idx[k]));
                let draw = AugmentDraw::sample(&config.augment, &mut rng);
                apply_augmentation(bank.get(idx[k]), draw, size, &stats).map(|img| img.to_sample())
            });
            let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
            let x = Tensor::stack(&samples);
            let batch_targets = targets.select(idx);
            net.zero_grad();
            let out = net.forward(&x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(config.loss, &config.smooth, out.data(), &batch_targets)?;
            if !loss.is_finite() || !out.all_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            net.backward(&Tensor::from_vec(out.shape(), grad));
            net.sgd_step(&mut opt);
            loss_sum += loss * idx.len() as f64;
        }

        let train_out = infer(net, bank, &train_idx, &stats, config.batch_size)?;
        let train_errors = abs_errors(head, &train_out, &targets.select(&train_idx), &manifest.target_stats);
        let val_out = infer(net, bank, &val_idx, &stats, config.batch_size)?;
        let (val_loss, _) = loss_and_grad(config.loss, &config.smooth, &val_out, &val_targets)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            train_mae: mean(&train_errors),
            val_mae: mean(&abs_errors(head, &val_out, &val_targets, &manifest.target_stats)),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|(_, l, _)| val_loss < *l) {
            let mut ckpt = net.to_checkpoint(target_stats, Some(stats));
            ckpt.epoch = Some(epoch);
            best = Some((epoch, val_loss, ckpt));
        }
        history.push(record);
    }

    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        pixel_stats: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, val_loss: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.0,
            val_loss,
            train_mae: 0.0,
            val_mae: 0.0,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn best_epoch_is_first_minimum() {
        assert_eq!(best_epoch(&[record(1, 3.0), record(2, 2.0), record(3, 1.0)]), Some(3));
        assert_eq!(best_epoch(&[record(1, 3.0), record(2, 1.0), record(3, 1.0)]), Some(2));
        assert_eq!(best_epoch(&[]), None);
    }

    #[test]
    fn config_compatibility() {
        let mut c = TrainConfig::new(TrainTask::SvdhRegression);
        assert_eq!(c.epochs, 100);
        assert_eq!(TrainConfig::new(TrainTask::BoneAge).epochs, 50);
        assert!(c.validate().is_ok());
        c.loss = LossKind::CrossEntropy;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(TrainTask::SvdhClassification);
        c.loss = LossKind::Smooth;
        assert!(c.validate().is_err());
    }

    #[test]
    fn regression_gradient_sign() {
        let t = Targets::Regression(vec![1.0]);
        let (_, g) = loss_and_grad(LossKind::Mse, &SmoothLossParams::default(), &[0.0], &t).unwrap();
        // Increasing the prediction toward the target lowers the loss.
        assert!(g[0] < 0.0);
    }

    #[test]
    fn augmentation_seeds_differ() {
        assert_ne!(augmentation_seed(1, 1, 0), augmentation_seed(1, 1, 1));
        assert_ne!(augmentation_seed(1, 1, 0), augmentation_seed(1, 2, 0));
        assert_eq!(augmentation_seed(5, 3, 2), augmentation_seed(5, 3, 2));
    }
}
