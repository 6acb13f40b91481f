//! Agreement metrics, confusion matrices, score-to-class conversion and
//! Grad-CAM case selection.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svdh::{SeverityBinning, MAX_TOTAL, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {predicted} predictions for {truth} truths")]
    Length { predicted: usize, truth: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("Pearson correlation is undefined when a series has zero variance")]
    UndefinedPcc,
    #[error("class {class} at index {index} is outside [0, {NUM_CLASSES})")]
    ClassOutOfRange { index: usize, class: usize },
    #[error("agreement file: {0}")]
    Agreement(String),
}

fn check_lengths(predicted: usize, truth: usize) -> Result<(), EvalError> {
    if predicted != truth {
        return Err(EvalError::Length { predicted, truth });
    }
    if predicted == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_lengths(x.len(), y.len())?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if x.len() < 2 || sxx <= 0.0 || syy <= 0.0 {
        return Err(EvalError::UndefinedPcc);
    }
    let d = n - 1.0;
    Ok(((sxy / d) / ((sxx / d).sqrt() * (syy / d).sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl RegressionMetrics {
    pub fn require_pcc(&self) -> Result<f64, EvalError> {
        self.pcc.ok_or(EvalError::UndefinedPcc)
    }
}

pub fn regression_metrics(predicted: &[f64], truth: &[f64]) -> Result<RegressionMetrics, EvalError> {
    check_lengths(predicted.len(), truth.len())?;
    let n = predicted.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in predicted.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok(RegressionMetrics {
        pcc: pearson(predicted, truth).ok(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n: predicted.len(),
    })
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize]) -> Result<Vec<Vec<u64>>, EvalError> {
    check_lengths(predicted.len(), truth.len())?;
    let mut m = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for (index, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
        for class in [p, t] {
            if class >= NUM_CLASSES {
                return Err(EvalError::ClassOutOfRange { index, class });
            }
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub pcc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub confusion: Option<Vec<Vec<u64>>>,
}

impl MetricsReport {
    pub fn from_regression(m: RegressionMetrics) -> Self {
        MetricsReport {
            n: m.n,
            pcc: m.pcc,
            mae: m.mae,
            rmse: m.rmse,
            accuracy: None,
            balanced_accuracy: None,
            confusion: None,
        }
    }
}

/// Accuracy, balanced accuracy over the classes present in `truth`, and the
/// ordinal metrics on class indices.
pub fn classification_metrics(predicted: &[usize], truth: &[usize]) -> Result<MetricsReport, EvalError> {
    let confusion = confusion_matrix(predicted, truth)?;
    let total = predicted.len() as f64;
    let correct: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
    let mut recalls = Vec::new();
    for (k, row) in confusion.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support > 0 {
            recalls.push(row[k] as f64 / support as f64);
        }
    }
    let p: Vec<f64> = predicted.iter().map(|&c| c as f64).collect();
    let t: Vec<f64> = truth.iter().map(|&c| c as f64).collect();
    let ordinal = regression_metrics(&p, &t)?;
    Ok(MetricsReport {
        n: predicted.len(),
        pcc: ordinal.pcc,
        mae: ordinal.mae,
        rmse: ordinal.rmse,
        accuracy: Some(correct as f64 / total),
        balanced_accuracy: Some(recalls.iter().sum::<f64>() / recalls.len() as f64),
        confusion: Some(confusion),
    })
}

/// Clamp each score into `[0, 280]` and bin it. Non-finite scores map to
/// class 0.
pub fn regression_to_classification(scores: &[f64], binning: &SeverityBinning) -> Vec<usize> {
    scores
        .iter()
        .map(|&s| {
            if s.is_finite() {
                binning.score_to_class(s.clamp(0.0, MAX_TOTAL)).expect("clamped score is in range")
            } else {
                0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseKind {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "TN")]
    TrueNegative,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "FN")]
    FalseNegative,
}

impl CaseKind {
    pub fn label(&self) -> &'static str {
        match self {
            CaseKind::TruePositive => "TP",
            CaseKind::TrueNegative => "TN",
            CaseKind::FalsePositive => "FP",
            CaseKind::FalseNegative => "FN",
        }
    }
}

/// Thresholds separating healthy, severe and badly mispredicted cases.
pub const HEALTHY_BELOW: f64 = 5.0;
pub const SEVERE_ABOVE: f64 = 200.0;
pub const ACCURATE_WITHIN: f64 = 10.0;
pub const MISSED_BEYOND: f64 = 50.0;

/// Case kind of one prediction, if any. Over-prediction by more than 50 is
/// a false positive, under-prediction a false negative.
pub fn classify_case(truth: f64, predicted: f64) -> Option<CaseKind> {
    let err = predicted - truth;
    if err > MISSED_BEYOND {
        Some(CaseKind::FalsePositive)
    } else if err < -MISSED_BEYOND {
        Some(CaseKind::FalseNegative)
    } else if err.abs() < ACCURATE_WITHIN && truth > SEVERE_ABOVE {
        Some(CaseKind::TruePositive)
    } else if err.abs() < ACCURATE_WITHIN && truth < HEALTHY_BELOW {
        Some(CaseKind::TrueNegative)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamCase {
    pub kind: CaseKind,
    pub id: String,
    pub truth: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CamCases {
    pub tp: Vec<CamCase>,
    pub tn: Vec<CamCase>,
    pub fp: Vec<CamCase>,
    #[serde(rename = "fn")]
    pub fn_: Vec<CamCase>,
}

impl CamCases {
    pub fn all(&self) -> impl Iterator<Item = &CamCase> {
        self.tp.iter().chain(&self.tn).chain(&self.fp).chain(&self.fn_)
    }

    fn push(&mut self, case: CamCase) {
        match case.kind {
            CaseKind::TruePositive => self.tp.push(case),
            CaseKind::TrueNegative => self.tn.push(case),
            CaseKind::FalsePositive => self.fp.push(case),
            CaseKind::FalseNegative => self.fn_.push(case),
        }
    }
}

/// Select Grad-CAM exemplars from regression scores.
pub fn select_cam_cases(ids: &[String], predicted: &[f64], truth: &[f64]) -> Result<CamCases, EvalError> {
    check_lengths(predicted.len(), truth.len())?;
    check_lengths(ids.len(), truth.len())?;
    let mut cases = CamCases::default();
    for ((id, &p), &t) in ids.iter().zip(predicted).zip(truth) {
        if let Some(kind) = classify_case(t, p) {
            cases.push(CamCase {
                kind,
                id: id.clone(),
                truth: t,
                predicted: p,
            });
        }
    }
    Ok(cases)
}

/// Classification variant: each class stands at its bin midpoint and the
/// regression thresholds are applied to those midpoints. This is a
/// heuristic; the recorded truth/predicted values are the midpoints.
pub fn select_cam_cases_classes(
    ids: &[String],
    predicted: &[usize],
    truth: &[usize],
    binning: &SeverityBinning,
) -> Result<CamCases, EvalError> {
    confusion_matrix(predicted, truth)?;
    let p: Vec<f64> = predicted.iter().map(|&c| binning.midpoint(c)).collect();
    let t: Vec<f64> = truth.iter().map(|&c| binning.midpoint(c)).collect();
    select_cam_cases(ids, &p, &t)
}

/// Agreement between two raters' score columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub columns: [String; 2],
    pub n: usize,
    pub pcc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

/// Two-column CSV of scores. A non-numeric first row is taken as a header.
pub fn agreement_report<R: Read>(reader: R) -> Result<AgreementReport, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut columns = ["rater_a".to_string(), "rater_b".to_string()];
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| EvalError::Agreement(e.to_string()))?;
        if row.len() != 2 {
            return Err(EvalError::Agreement(format!("row {} has {} columns, expected 2", i + 1, row.len())));
        }
        match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
                a.push(x);
                b.push(y);
            }
            _ if i == 0 => columns = [row[0].to_string(), row[1].to_string()],
            _ => return Err(EvalError::Agreement(format!("row {} is not a pair of finite numbers", i + 1))),
        }
    }
    let m = regression_metrics(&b, &a)?;
    Ok(AgreementReport {
        columns,
        n: m.n,
        pcc: m.pcc,
        mae: m.mae,
        rmse: m.rmse,
    })
}

pub fn agreement_report_file(path: &Path) -> Result<AgreementReport, EvalError> {
    let f = std::fs::File::open(path).map_err(|e| EvalError::Agreement(format!("{}: {e}", path.display())))?;
    agreement_report(f)
}
