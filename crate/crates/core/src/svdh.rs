//! Van der Heijde-modified Sharp scoring arithmetic for hands and wrists,
//! and the ordinal severity binning used as the classification target.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest attainable hands-and-wrists total.
pub const MAX_TOTAL: f64 = 280.0;
pub const MAX_AREA_EROSION: u32 = 5;
pub const MAX_JSN_GRADE: u8 = 4;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SvdhError {
    #[error("erosion component #{index} of {hand} {area} is {value}; components must be 1, 2 or 3")]
    InvalidComponent {
        hand: Hand,
        area: ErosionArea,
        index: usize,
        value: u8,
    },
    #[error("JSN grade {grade} of {hand} {joint} is outside 0..=4")]
    InvalidGrade { hand: Hand, joint: JsnJoint, grade: u8 },
    #[error("duplicate erosion entry for {hand} {area}")]
    DuplicateArea { hand: Hand, area: ErosionArea },
    #[error("duplicate JSN entry for {hand} {joint}")]
    DuplicateJoint { hand: Hand, joint: JsnJoint },
    #[error("score {0} is outside [0, 280]")]
    OutOfRange(f64),
    #[error("invalid severity binning: {0}")]
    InvalidBinning(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const ALL: [Hand; 2] = [Hand::Left, Hand::Right];
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

/// The 16 areas scored for erosion in each hand and wrist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErosionArea {
    Pip2,
    Pip3,
    Pip4,
    Pip5,
    Ip,
    Mcp1,
    Mcp2,
    Mcp3,
    Mcp4,
    Mcp5,
    FirstMetacarpal,
    Multangulars,
    Scaphoid,
    Lunate,
    Radius,
    Ulna,
}

impl ErosionArea {
    pub const ALL: [ErosionArea; 16] = [
        ErosionArea::Pip2,
        ErosionArea::Pip3,
        ErosionArea::Pip4,
        ErosionArea::Pip5,
        ErosionArea::Ip,
        ErosionArea::Mcp1,
        ErosionArea::Mcp2,
        ErosionArea::Mcp3,
        ErosionArea::Mcp4,
        ErosionArea::Mcp5,
        ErosionArea::FirstMetacarpal,
        ErosionArea::Multangulars,
        ErosionArea::Scaphoid,
        ErosionArea::Lunate,
        ErosionArea::Radius,
        ErosionArea::Ulna,
    ];
}

impl fmt::Display for ErosionArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The 15 joints graded for joint space narrowing in each hand and wrist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsnJoint {
    Pip2,
    Pip3,
    Pip4,
    Pip5,
    Mcp1,
    Mcp2,
    Mcp3,
    Mcp4,
    Mcp5,
    Cmc3,
    Cmc4,
    Cmc5,
    TrapeziumScaphoid,
    CapitateScaphoidLunate,
    Radiocarpal,
}

impl JsnJoint {
    pub const ALL: [JsnJoint; 15] = [
        JsnJoint::Pip2,
        JsnJoint::Pip3,
        JsnJoint::Pip4,
        JsnJoint::Pip5,
        JsnJoint::Mcp1,
        JsnJoint::Mcp2,
        JsnJoint::Mcp3,
        JsnJoint::Mcp4,
        JsnJoint::Mcp5,
        JsnJoint::Cmc3,
        JsnJoint::Cmc4,
        JsnJoint::Cmc5,
        JsnJoint::TrapeziumScaphoid,
        JsnJoint::CapitateScaphoidLunate,
        JsnJoint::Radiocarpal,
    ];
}

impl fmt::Display for JsnJoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Erosions found in one area; each component is one discrete erosion
/// graded 1 (discrete), 2 (large, not passing midline) or 3 (passing midline).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErosionEntry {
    pub hand: Hand,
    pub area: ErosionArea,
    pub components: Vec<u8>,
}

impl ErosionEntry {
    pub fn new(hand: Hand, area: ErosionArea, components: Vec<u8>) -> Self {
        ErosionEntry {
            hand,
            area,
            components,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsnEntry {
    pub hand: Hand,
    pub joint: JsnJoint,
    pub grade: u8,
}

impl JsnEntry {
    pub fn new(hand: Hand, joint: JsnJoint, grade: u8) -> Self {
        JsnEntry { hand, joint, grade }
    }
}

/// Either a full per-site reading or just the aggregate, as in datasets
/// whose labels are the mean of two readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdHScore {
    Detailed {
        erosions: Vec<ErosionEntry>,
        jsn: Vec<JsnEntry>,
    },
    Aggregate(f64),
}

/// `min(sum(components), 5)`.
pub fn erosion_area_score(entry: &ErosionEntry) -> Result<u32, SvdhError> {
    let mut sum = 0u32;
    for (index, &value) in entry.components.iter().enumerate() {
        if !(1..=3).contains(&value) {
            return Err(SvdhError::InvalidComponent {
                hand: entry.hand,
                area: entry.area,
                index,
                value,
            });
        }
        sum += u32::from(value);
    }
    Ok(sum.min(MAX_AREA_EROSION))
}

pub fn erosion_total(erosions: &[ErosionEntry]) -> Result<u32, SvdhError> {
    let mut seen = HashSet::new();
    let mut total = 0;
    for e in erosions {
        if !seen.insert((e.hand, e.area)) {
            return Err(SvdhError::DuplicateArea {
                hand: e.hand,
                area: e.area,
            });
        }
        total += erosion_area_score(e)?;
    }
    Ok(total)
}

pub fn jsn_total(jsn: &[JsnEntry]) -> Result<u32, SvdhError> {
    let mut seen = HashSet::new();
    let mut total = 0;
    for j in jsn {
        if j.grade > MAX_JSN_GRADE {
            return Err(SvdhError::InvalidGrade {
                hand: j.hand,
                joint: j.joint,
                grade: j.grade,
            });
        }
        if !seen.insert((j.hand, j.joint)) {
            return Err(SvdhError::DuplicateJoint {
                hand: j.hand,
                joint: j.joint,
            });
        }
        total += u32::from(j.grade);
    }
    Ok(total)
}

/// Hands-and-wrists total in `[0, 280]`.
pub fn total_score(score: &SvdHScore) -> Result<f64, SvdhError> {
    match score {
        SvdHScore::Detailed { erosions, jsn } => {
            Ok(f64::from(erosion_total(erosions)? + jsn_total(jsn)?))
        }
        SvdHScore::Aggregate(total) => {
            if (0.0..=MAX_TOTAL).contains(total) {
                Ok(*total)
            } else {
                Err(SvdhError::OutOfRange(*total))
            }
        }
    }
}

/// Ordered bin edges splitting `[0, 280]` into ten severity classes.
///
/// Class `k` covers `[edges[k], edges[k + 1])`; the last class also
/// includes 280. Widths never shrink towards the high end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SeverityBinning {
    edges: [f64; NUM_CLASSES + 1],
}

impl SeverityBinning {
    pub const DEFAULT_EDGES: [f64; NUM_CLASSES + 1] =
        [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 70.0, 110.0, 180.0, 280.0];

    pub fn new(edges: &[f64]) -> Result<Self, SvdhError> {
        let edges: [f64; NUM_CLASSES + 1] = edges.try_into().map_err(|_| {
            SvdhError::InvalidBinning(format!("expected 11 edges, got {}", edges.len()))
        })?;
        if edges[0] != 0.0 || edges[NUM_CLASSES] != MAX_TOTAL {
            return Err(SvdhError::InvalidBinning(
                "edges must start at 0 and end at 280".into(),
            ));
        }
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(SvdhError::InvalidBinning(
                "edges must be strictly increasing".into(),
            ));
        }
        if widths.windows(2).any(|w| w[1] < w[0]) {
            return Err(SvdhError::InvalidBinning(
                "bin widths must not shrink towards higher scores".into(),
            ));
        }
        Ok(SeverityBinning { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// `[low, high)` of class `k` (closed at 280 for the last class).
    pub fn range(&self, class: usize) -> (f64, f64) {
        (self.edges[class], self.edges[class + 1])
    }

    pub fn midpoint(&self, class: usize) -> f64 {
        let (lo, hi) = self.range(class);
        0.5 * (lo + hi)
    }

    pub fn score_to_class(&self, total: f64) -> Result<usize, SvdhError> {
        if !(0.0..=MAX_TOTAL).contains(&total) {
            return Err(SvdhError::OutOfRange(total));
        }
        // Number of interior edges at or below the total.
        let k = self.edges[1..NUM_CLASSES]
            .iter()
            .take_while(|&&e| e <= total)
            .count();
        Ok(k)
    }
}

impl Default for SeverityBinning {
    fn default() -> Self {
        SeverityBinning {
            edges: Self::DEFAULT_EDGES,
        }
    }
}

impl TryFrom<Vec<f64>> for SeverityBinning {
    type Error = SvdhError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        SeverityBinning::new(&v)
    }
}

impl From<SeverityBinning> for Vec<f64> {
    fn from(b: SeverityBinning) -> Self {
        b.edges.to_vec()
    }
}

pub fn score_to_class(total: f64, binning: &SeverityBinning) -> Result<usize, SvdhError> {
    binning.score_to_class(total)
}
