use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER: [&str; 4] = ["id", "image_path", "target", "split"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot open manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest header must be exactly `id,image_path,target,split`, found `{0}`")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("no training rows")]
    NoTrainingRows,
    #[error("training targets have zero spread; cannot standardize")]
    DegenerateTargets,
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSd(f64),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid synthetic request: {0}")]
    Synthetic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, validation or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the `target` column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Hands-and-wrists SvdH total in `[0, 280]`.
    Svdh,
    /// Skeletal age in months, used for pretraining.
    BoneAge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub target: f64,
    pub split: Split,
}

/// Z-score parameters of the training targets (population standard
/// deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub sd: f64,
}

impl TargetStats {
    pub fn new(mean: f64, sd: f64) -> Result<Self, DatasetError> {
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(DatasetError::NonPositiveSd(sd));
        }
        Ok(TargetStats { mean, sd })
    }

    pub fn from_values(values: &[f64]) -> Result<Self, DatasetError> {
        if values.is_empty() {
            return Err(DatasetError::NoTrainingRows);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(DatasetError::DegenerateTargets);
        }
        Ok(TargetStats { mean, sd })
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// `(y - mean) / sd`.
pub fn standardize_target(y: f64, stats: &TargetStats) -> Result<f64, DatasetError> {
    if !(stats.sd > 0.0) {
        return Err(DatasetError::NonPositiveSd(stats.sd));
    }
    Ok(stats.standardize(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub task: Task,
    pub target_stats: TargetStats,
}

impl Manifest {
    /// Validate records and derive target statistics from the train split.
    pub fn from_records(records: Vec<ImageRecord>, task: Task) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !ids.insert(r.id.as_str()) {
                return Err(DatasetError::Row {
                    row: i + 1,
                    message: format!("duplicate id `{}`", r.id),
                });
            }
            if !r.target.is_finite() {
                return Err(DatasetError::Row {
                    row: i + 1,
                    message: format!("target `{}` is not finite", r.target),
                });
            }
        }
        let train: Vec<f64> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.target)
            .collect();
        let target_stats = TargetStats::from_values(&train)?;
        Ok(Manifest {
            records,
            task,
            target_stats,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Parse manifest CSV text. Relative image paths resolve against `base`;
/// every referenced file must be readable.
pub fn parse_manifest<R: Read>(reader: R, base: &Path, task: Task) -> Result<Manifest, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(DatasetError::Header(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // Header is line 1; data rows are numbered from 1.
        let row_no = i + 1;
        let row = row.map_err(|e| DatasetError::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(DatasetError::Row {
                row: row_no,
                message: "empty id".into(),
            });
        }
        let target: f64 = field(2).parse().map_err(|_| DatasetError::Row {
            row: row_no,
            message: format!("target `{}` is not a number", field(2)),
        })?;
        let split: Split = field(3).parse().map_err(|message| DatasetError::Row {
            row: row_no,
            message,
        })?;
        let raw_path = PathBuf::from(field(1));
        let image_path = if raw_path.is_absolute() {
            raw_path
        } else {
            base.join(raw_path)
        };
        if let Err(e) = std::fs::File::open(&image_path) {
            return Err(DatasetError::Row {
                row: row_no,
                message: format!("unreadable image path {}: {e}", image_path.display()),
            });
        }
        records.push(ImageRecord {
            id,
            image_path,
            target,
            split,
        });
    }
    Manifest::from_records(records, task)
}

pub fn load_manifest(path: &Path, task: Task) -> Result<Manifest, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(file, base, task)
}

/// Write records with image paths relative to `base` where possible.
pub fn write_manifest<W: Write>(
    writer: W,
    records: &[ImageRecord],
    base: &Path,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        let p = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        w.write_record([
            r.id.as_str(),
            &p.to_string_lossy(),
            &r.target.to_string(),
            r.split.as_str(),
        ])?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: base.display().to_string(),
        source,
    })?;
    Ok(())
}
