//! Synthetic hand-radiograph phantoms with exactly known SvdH totals.
//!
//! Each image holds two hands (left hand in the left half, mirrored right
//! hand in the right half) with a fixed template of 31 sites per hand: the
//! 16 erosion areas and the 15 JSN joints. Erosion sites brighten with the
//! area's effective erosion score; JSN sites darken with the narrowing
//! grade. The returned total is computed from the drawn grade table with
//! [`total_score`], so image intensity and target are tied by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DatasetError;
use crate::imaging::GrayImage;
use crate::svdh::{
    erosion_area_score, total_score, ErosionArea, ErosionEntry, Hand, JsnEntry, JsnJoint,
    SvdHScore,
};

pub const MIN_SIDE: usize = 32;

const BACKGROUND: f32 = 0.08;
const SOFT_TISSUE: f32 = 0.28;
const BONE: f32 = 0.55;
const EROSION_STEP: f32 = 0.08;
const JSN_STEP: f32 = 0.11;
const NOISE_SD: f64 = 0.01;

/// Site centres in a left hand, in fractions of the half-image.
const EROSION_SITES: [(f32, f32); 16] = [
    (0.32, 0.22), // PIP2
    (0.50, 0.18), // PIP3
    (0.68, 0.22), // PIP4
    (0.86, 0.30), // PIP5
    (0.12, 0.36), // IP
    (0.16, 0.50), // MCP1
    (0.34, 0.46), // MCP2
    (0.50, 0.44), // MCP3
    (0.66, 0.46), // MCP4
    (0.82, 0.52), // MCP5
    (0.22, 0.62), // first metacarpal
    (0.32, 0.74), // multangulars
    (0.42, 0.84), // scaphoid
    (0.58, 0.84), // lunate
    (0.44, 0.95), // radius
    (0.70, 0.95), // ulna
];

const JSN_SITES: [(f32, f32); 15] = [
    (0.32, 0.30), // PIP2
    (0.50, 0.26), // PIP3
    (0.68, 0.30), // PIP4
    (0.86, 0.38), // PIP5
    (0.16, 0.58), // MCP1
    (0.34, 0.54), // MCP2
    (0.50, 0.52), // MCP3
    (0.66, 0.54), // MCP4
    (0.82, 0.60), // MCP5
    (0.54, 0.66), // CMC3
    (0.68, 0.66), // CMC4
    (0.82, 0.70), // CMC5
    (0.26, 0.82), // trapezium-scaphoid
    (0.56, 0.75), // capitate-scaphoid-lunate
    (0.58, 0.91), // radiocarpal
];

/// Per-site grades for both hands.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeTable {
    /// Erosion components per `(hand, area)`, hand-major in
    /// [`Hand::ALL`] x [`ErosionArea::ALL`] order.
    pub erosion: Vec<Vec<u8>>,
    /// JSN grade per `(hand, joint)`, hand-major.
    pub jsn: Vec<u8>,
}

impl GradeTable {
    pub fn healthy() -> Self {
        GradeTable {
            erosion: vec![Vec::new(); 32],
            jsn: vec![0; 30],
        }
    }

    /// Every area eroded past the cap and every joint ankylosed.
    pub fn maximal() -> Self {
        GradeTable {
            erosion: vec![vec![3, 3]; 32],
            jsn: vec![4; 30],
        }
    }

    /// Severity `s = u^2` skews towards mild disease; each site is then
    /// graded independently with `s` as the per-step probability.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u: f64 = rng.random();
        let s = u * u;
        let erosion = (0..32)
            .map(|_| {
                (0..3)
                    .filter_map(|_| {
                        rng.random_bool(s).then(|| {
                            1 + u8::from(rng.random_bool(s)) + u8::from(rng.random_bool(s * 0.5))
                        })
                    })
                    .collect()
            })
            .collect();
        let jsn = (0..30)
            .map(|_| (0..4).filter(|_| rng.random_bool(s)).count() as u8)
            .collect();
        GradeTable { erosion, jsn }
    }

    pub fn to_score(&self) -> SvdHScore {
        let mut erosions = Vec::with_capacity(32);
        let mut jsn = Vec::with_capacity(30);
        for (h, hand) in Hand::ALL.iter().enumerate() {
            for (a, area) in ErosionArea::ALL.iter().enumerate() {
                erosions.push(ErosionEntry::new(*hand, *area, self.erosion[h * 16 + a].clone()));
            }
            for (j, joint) in JsnJoint::ALL.iter().enumerate() {
                jsn.push(JsnEntry::new(*hand, *joint, self.jsn[h * 15 + j]));
            }
        }
        SvdHScore::Detailed { erosions, jsn }
    }

    pub fn total(&self) -> f64 {
        total_score(&self.to_score()).expect("generated grades are valid")
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GrayImage,
    pub grades: GradeTable,
    pub total: f64,
}

fn disc(img: &mut [f32], side: usize, cx: f32, cy: f32, r: f32, value: f32) {
    let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(side - 1));
    let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(side - 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                img[y * side + x] = value;
            }
        }
    }
}

/// Draw the phantom for `grades` on a `side x side` canvas.
pub fn render_phantom<R: Rng + ?Sized>(grades: &GradeTable, side: usize, rng: &mut R) -> GrayImage {
    let mut px = vec![BACKGROUND; side * side];
    let half = side as f32 / 2.0;
    let radius = (half * 0.05).max(1.0);
    for (h, _) in Hand::ALL.iter().enumerate() {
        // Left hand as drawn; right hand mirrored into the right half.
        let place = |fx: f32, fy: f32| -> (f32, f32) {
            let x = if h == 0 { fx * half } else { side as f32 - fx * half };
            (x, fy * side as f32)
        };
        let x_lo = if h == 0 { 0.04 * half } else { half + 0.04 * half };
        let x_hi = x_lo + 0.92 * half;
        for y in (0.12 * side as f32) as usize..side {
            for x in x_lo as usize..(x_hi as usize).min(side) {
                px[y * side + x] = SOFT_TISSUE;
            }
        }
        for (a, &(fx, fy)) in EROSION_SITES.iter().enumerate() {
            let entry = ErosionEntry::new(Hand::ALL[h], ErosionArea::ALL[a], grades.erosion[h * 16 + a].clone());
            let score = erosion_area_score(&entry).expect("generated grades are valid") as f32;
            let (x, y) = place(fx, fy);
            disc(&mut px, side, x, y, radius, BONE + EROSION_STEP * score);
        }
        for (j, &(fx, fy)) in JSN_SITES.iter().enumerate() {
            let grade = grades.jsn[h * 15 + j] as f32;
            let (x, y) = place(fx, fy);
            disc(&mut px, side, x, y, radius, BONE - JSN_STEP * grade);
        }
    }
    let noise = Normal::new(0.0, NOISE_SD).expect("finite sd");
    for v in px.iter_mut() {
        *v = (*v + noise.sample(rng) as f32).clamp(0.0, 1.0);
    }
    GrayImage::new(side, side, px).expect("side is non-zero")
}

/// `count` phantoms of `side x side` pixels, deterministic in `seed`.
pub fn generate_synthetic(count: usize, side: usize, seed: u64) -> Result<Vec<Phantom>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::Synthetic("count must be at least 1".into()));
    }
    if side < MIN_SIDE {
        return Err(DatasetError::Synthetic(format!("side must be at least {MIN_SIDE} px, got {side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let grades = GradeTable::random(&mut rng);
            let image = render_phantom(&grades, side, &mut rng);
            let total = grades.total();
            Phantom {
                image,
                grades,
                total,
            }
        })
        .collect())
}

/// A monotone stand-in for skeletal age (months) used to exercise the
/// pretraining path on phantoms.
pub fn bone_age_proxy(total: f64) -> f64 {
    18.0 + 0.6 * total
}
