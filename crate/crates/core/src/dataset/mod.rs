//! Image manifests, fixed splits, target standardization, and the
//! synthetic phantom generator.

mod manifest;
pub mod synthetic;

pub use manifest::{
    load_manifest, parse_manifest, standardize_target, write_manifest, DatasetError, ImageRecord, Manifest, Split,
    TargetStats, Task,
};
pub use synthetic::{bone_age_proxy, generate_synthetic, render_phantom, GradeTable, Phantom};
