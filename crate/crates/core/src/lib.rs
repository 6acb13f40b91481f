//! Automated Sharp/van der Heijde scoring of hand radiographs.

pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod evaluation;
pub mod explain;
pub mod figures;
pub mod imaging;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod svdh;
pub mod training;
