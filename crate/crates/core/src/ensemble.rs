//! Linear stacking of three member models.
//!
//! Member outputs are passed as one flat vector per member: `n` values for
//! regression (standardized scores), `n * 10` row-major logits for the
//! classification modes.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TargetStats;
use crate::svdh::NUM_CLASSES;
use crate::training::{cross_entropy_loss_grad, softmax, LossError};

pub const MEMBERS: usize = 3;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("a stacked ensemble needs exactly {MEMBERS} members, got {0}")]
    MemberCount(usize),
    #[error("member {member} has {got} outputs, expected {expected}")]
    Misaligned { member: usize, got: usize, expected: usize },
    #[error("{targets} targets for {samples} samples")]
    Targets { targets: usize, samples: usize },
    #[error("stacker weights do not match mode {0:?}")]
    Weights(StackMode),
    #[error("invalid stacker fit settings: {0}")]
    Settings(String),
    #[error("least-squares system is singular")]
    Singular,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("cannot read ensemble spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ensemble spec: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    /// Three scores to one score.
    Regression,
    /// All 30 member logits to 10 logits.
    ClassificationAllClasses,
    /// For each class, the three members' logits of that class to one logit.
    ClassificationSingleClass,
}

impl StackMode {
    /// Outputs per sample of each member.
    pub fn member_width(&self) -> usize {
        match self {
            StackMode::Regression => 1,
            _ => NUM_CLASSES,
        }
    }

    pub fn outputs(&self) -> usize {
        self.member_width()
    }

    pub fn inputs_per_output(&self) -> usize {
        match self {
            StackMode::ClassificationAllClasses => MEMBERS * NUM_CLASSES,
            _ => MEMBERS,
        }
    }
}

/// One weight row and bias per stacked output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stacker {
    pub mode: StackMode,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Stacker {
    /// Equal-weight averaging of the members (per class for classification).
    pub fn averaging(mode: StackMode) -> Self {
        let third = 1.0 / MEMBERS as f64;
        let weights = match mode {
            StackMode::Regression => vec![vec![third; MEMBERS]],
            StackMode::ClassificationSingleClass => vec![vec![third; MEMBERS]; NUM_CLASSES],
            StackMode::ClassificationAllClasses => (0..NUM_CLASSES)
                .map(|k| {
                    let mut row = vec![0.0; MEMBERS * NUM_CLASSES];
                    for m in 0..MEMBERS {
                        row[m * NUM_CLASSES + k] = third;
                    }
                    row
                })
                .collect(),
        };
        Stacker {
            mode,
            weights,
            bias: vec![0.0; mode.outputs()],
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let ok = self.weights.len() == self.mode.outputs()
            && self.bias.len() == self.mode.outputs()
            && self.weights.iter().all(|r| r.len() == self.mode.inputs_per_output());
        if ok {
            Ok(())
        } else {
            Err(EnsembleError::Weights(self.mode))
        }
    }

    /// Stacked outputs for `n` samples, row-major `n x outputs`.
    pub fn apply(&self, members: &[Vec<f64>]) -> Result<Vec<f64>, EnsembleError> {
        self.validate()?;
        let n = check_members(self.mode, members)?;
        let mut out = Vec::with_capacity(n * self.mode.outputs());
        let mut x = Vec::with_capacity(self.mode.inputs_per_output());
        for i in 0..n {
            for o in 0..self.mode.outputs() {
                features(self.mode, members, i, o, &mut x);
                out.push(dot(&self.weights[o], &x) + self.bias[o]);
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Sample count, after checking member count and lengths.
fn check_members(mode: StackMode, members: &[Vec<f64>]) -> Result<usize, EnsembleError> {
    if members.len() != MEMBERS {
        return Err(EnsembleError::MemberCount(members.len()));
    }
    let width = mode.member_width();
    let total = members[0].len();
    if total % width != 0 {
        return Err(EnsembleError::Misaligned {
            member: 0,
            got: total,
            expected: total.div_ceil(width) * width,
        });
    }
    for (m, v) in members.iter().enumerate() {
        if v.len() != total {
            return Err(EnsembleError::Misaligned {
                member: m,
                got: v.len(),
                expected: total,
            });
        }
    }
    Ok(total / width)
}

/// Inputs feeding stacked output `o` of sample `i`.
fn features(mode: StackMode, members: &[Vec<f64>], i: usize, o: usize, x: &mut Vec<f64>) {
    x.clear();
    match mode {
        StackMode::Regression => x.extend(members.iter().map(|m| m[i])),
        StackMode::ClassificationSingleClass => x.extend(members.iter().map(|m| m[i * NUM_CLASSES + o])),
        StackMode::ClassificationAllClasses => {
            for m in members {
                x.extend_from_slice(&m[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum StackTargets {
    /// Standardized scores.
    Regression(Vec<f64>),
    Classes(Vec<usize>),
}

impl StackTargets {
    fn len(&self) -> usize {
        match self {
            StackTargets::Regression(v) => v.len(),
            StackTargets::Classes(v) => v.len(),
        }
    }
}

/// Optimizer settings for gradient fitting of the stacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackFit {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for StackFit {
    fn default() -> Self {
        StackFit {
            batch_size: 4,
            epochs: 100,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.001,
            seed: 0,
        }
    }
}

/// Fit the linear map by minibatch SGD with momentum, starting from
/// member averaging. Regression minimizes MSE; the classification modes
/// minimize cross-entropy of the stacked logits.
pub fn fit_stacker(
    members: &[Vec<f64>],
    targets: &StackTargets,
    mode: StackMode,
    fit: &StackFit,
) -> Result<Stacker, EnsembleError> {
    let n = check_members(mode, members)?;
    if targets.len() != n || n == 0 {
        return Err(EnsembleError::Targets {
            targets: targets.len(),
            samples: n,
        });
    }
    match (mode, targets) {
        (StackMode::Regression, StackTargets::Regression(_)) => {}
        (StackMode::ClassificationAllClasses | StackMode::ClassificationSingleClass, StackTargets::Classes(_)) => {}
        _ => return Err(EnsembleError::Settings(format!("targets do not match mode {mode:?}"))),
    }
    if fit.batch_size == 0 || fit.epochs == 0 {
        return Err(EnsembleError::Settings("batch_size and epochs must be at least 1".into()));
    }
    let outputs = mode.outputs();
    let inputs = mode.inputs_per_output();
    let mut stacker = Stacker::averaging(mode);
    let mut vel_w = vec![vec![0.0; inputs]; outputs];
    let mut vel_b = vec![0.0; outputs];
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut x = Vec::with_capacity(inputs);

    for _ in 0..fit.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(fit.batch_size) {
            let mut out = Vec::with_capacity(batch.len() * outputs);
            for &i in batch {
                for o in 0..outputs {
                    features(mode, members, i, o, &mut x);
                    out.push(dot(&stacker.weights[o], &x) + stacker.bias[o]);
                }
            }
            let grad_out: Vec<f64> = match targets {
                StackTargets::Regression(y) => {
                    let m = batch.len() as f64;
                    batch.iter().zip(&out).map(|(&i, p)| 2.0 * (p - y[i]) / m).collect()
                }
                StackTargets::Classes(c) => {
                    let labels: Vec<usize> = batch.iter().map(|&i| c[i]).collect();
                    cross_entropy_loss_grad(&out, &labels, NUM_CLASSES)?.1
                }
            };
            let mut gw = vec![vec![0.0; inputs]; outputs];
            let mut gb = vec![0.0; outputs];
            for (b, &i) in batch.iter().enumerate() {
                for o in 0..outputs {
                    let g = grad_out[b * outputs + o];
                    features(mode, members, i, o, &mut x);
                    gw[o].iter_mut().zip(&x).for_each(|(w, xv)| *w += g * xv);
                    gb[o] += g;
                }
            }
            for o in 0..outputs {
                for j in 0..inputs {
                    let p = &mut stacker.weights[o][j];
                    let g = gw[o][j] + fit.weight_decay * *p;
                    vel_w[o][j] = fit.momentum * vel_w[o][j] + g;
                    *p -= fit.learning_rate * vel_w[o][j];
                }
                let g = gb[o] + fit.weight_decay * stacker.bias[o];
                vel_b[o] = fit.momentum * vel_b[o] + g;
                stacker.bias[o] -= fit.learning_rate * vel_b[o];
            }
        }
    }
    Ok(stacker)
}

/// Ordinary least-squares regression stacker, solved by SVD.
pub fn least_squares_stacker(members: &[Vec<f64>], targets: &[f64]) -> Result<Stacker, EnsembleError> {
    let n = check_members(StackMode::Regression, members)?;
    if targets.len() != n || n == 0 {
        return Err(EnsembleError::Targets {
            targets: targets.len(),
            samples: n,
        });
    }
    let a = DMatrix::from_fn(n, MEMBERS + 1, |i, j| if j < MEMBERS { members[j][i] } else { 1.0 });
    let b = DVector::from_column_slice(targets);
    let solution = a.svd(true, true).solve(&b, 1e-12).map_err(|_| EnsembleError::Singular)?;
    Ok(Stacker {
        mode: StackMode::Regression,
        weights: vec![solution.as_slice()[..MEMBERS].to_vec()],
        bias: vec![solution[MEMBERS]],
    })
}

/// Serialized ensemble: member checkpoints plus the fitted map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub mode: StackMode,
    pub members: Vec<PathBuf>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Destandardization of regression outputs.
    pub target_stats: Option<TargetStats>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<PathBuf>, stacker: Stacker, target_stats: Option<TargetStats>) -> Result<Self, EnsembleError> {
        if members.len() != MEMBERS {
            return Err(EnsembleError::MemberCount(members.len()));
        }
        stacker.validate()?;
        Ok(EnsembleSpec {
            mode: stacker.mode,
            members,
            weights: stacker.weights,
            bias: stacker.bias,
            target_stats,
        })
    }

    pub fn stacker(&self) -> Stacker {
        Stacker {
            mode: self.mode,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, EnsembleError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        let spec: EnsembleSpec = serde_json::from_str(text)?;
        if spec.members.len() != MEMBERS {
            return Err(EnsembleError::MemberCount(spec.members.len()));
        }
        spec.stacker().validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StackedPrediction {
    /// Scores in target units.
    Regression(Vec<f64>),
    Classification {
        /// Row-major `n x 10`.
        logits: Vec<f64>,
        classes: Vec<usize>,
        probabilities: Vec<Vec<f64>>,
    },
}

pub fn predict_stacked(spec: &EnsembleSpec, members: &[Vec<f64>]) -> Result<StackedPrediction, EnsembleError> {
    let out = spec.stacker().apply(members)?;
    Ok(match spec.mode {
        StackMode::Regression => StackedPrediction::Regression(
            out.into_iter()
                .map(|z| spec.target_stats.map_or(z, |s| s.destandardize(z)))
                .collect(),
        ),
        _ => {
            let probabilities: Vec<Vec<f64>> = out.chunks_exact(NUM_CLASSES).map(softmax).collect();
            let classes = out
                .chunks_exact(NUM_CLASSES)
                .map(|row| {
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect();
            StackedPrediction::Classification {
                logits: out,
                classes,
                probabilities,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(stacker: Stacker) -> EnsembleSpec {
        EnsembleSpec::new(vec!["a".into(), "b".into(), "c".into()], stacker, None).unwrap()
    }

    #[test]
    fn averaging_map() {
        let s = spec(Stacker::averaging(StackMode::Regression));
        let p = predict_stacked(&s, &[vec![3.0], vec![6.0], vec![9.0]]).unwrap();
        match p {
            StackedPrediction::Regression(v) => assert!((v[0] - 6.0).abs() < 1e-12),
            _ => unreachable!(),
        }
        let mut with_stats = s.clone();
        with_stats.target_stats = Some(TargetStats { mean: 15.0, sd: 5.0 });
        assert_eq!(
            predict_stacked(&with_stats, &[vec![1.0], vec![1.0], vec![1.0]]).unwrap(),
            StackedPrediction::Regression(vec![20.0])
        );
    }

    #[test]
    fn identity_embedding_replicates_first_member() {
        let mut st = Stacker::averaging(StackMode::ClassificationAllClasses);
        for (k, row) in st.weights.iter_mut().enumerate() {
            row.iter_mut().for_each(|w| *w = 0.0);
            row[k] = 1.0;
        }
        let m0: Vec<f64> = (0..20).map(|v| v as f64 * 0.1).collect();
        let m1 = vec![5.0; 20];
        let m2 = vec![-3.0; 20];
        let out = st.apply(&[m0.clone(), m1, m2]).unwrap();
        assert_eq!(out, m0);
    }

    #[test]
    fn single_class_permutation_symmetry() {
        let mut st = Stacker::averaging(StackMode::ClassificationSingleClass);
        for (k, row) in st.weights.iter_mut().enumerate() {
            *row = vec![0.1 * k as f64, 0.5, -0.25];
        }
        let m: Vec<Vec<f64>> = (0..3).map(|j| (0..10).map(|k| (k * 3 + j) as f64 * 0.7).collect()).collect();
        let base = st.apply(&m).unwrap();
        let perm = [2usize, 0, 1];
        let mut st2 = st.clone();
        for row in st2.weights.iter_mut() {
            let old = row.clone();
            for (new_pos, &src) in perm.iter().enumerate() {
                row[new_pos] = old[src];
            }
        }
        let m2: Vec<Vec<f64>> = perm.iter().map(|&j| m[j].clone()).collect();
        let out = st2.apply(&m2).unwrap();
        for (a, b) in base.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(st.weights.len(), 10);
        assert!(st.weights.iter().all(|r| r.len() == 3));
    }

    #[test]
    fn perfect_members_fit_exactly() {
        let y: Vec<f64> = (0..40).map(|i| (i as f64 - 20.0) / 10.0).collect();
        let members = vec![y.clone(), y.clone(), y.clone()];
        let st = fit_stacker(&members, &StackTargets::Regression(y.clone()), StackMode::Regression, &StackFit::default()).unwrap();
        let out = st.apply(&members).unwrap();
        let rmse = (out.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(rmse < 1e-2, "{rmse}");
    }

    #[test]
    fn argument_errors() {
        let st = Stacker::averaging(StackMode::Regression);
        assert!(matches!(st.apply(&[vec![1.0], vec![1.0]]), Err(EnsembleError::MemberCount(2))));
        assert!(matches!(
            st.apply(&[vec![1.0], vec![1.0, 2.0], vec![1.0]]),
            Err(EnsembleError::Misaligned { member: 1, .. })
        ));
        let r = fit_stacker(
            &[vec![1.0], vec![1.0], vec![1.0]],
            &StackTargets::Regression(vec![1.0, 2.0]),
            StackMode::Regression,
            &StackFit::default(),
        );
        assert!(matches!(r, Err(EnsembleError::Targets { .. })));
        let c = Stacker::averaging(StackMode::ClassificationAllClasses);
        assert!(c.apply(&[vec![0.0; 15], vec![0.0; 15], vec![0.0; 15]]).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = spec(Stacker::averaging(StackMode::ClassificationSingleClass));
        assert_eq!(EnsembleSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}
