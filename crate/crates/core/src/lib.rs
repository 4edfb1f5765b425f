//! Patch-based analysis of operating-table scenes.
//!
//! Two tasks share one machinery: segmenting surgical instruments against
//! the table background from a single frame, and detecting instruments
//! that appeared or disappeared between a 'before' and an 'after' frame.
//! Both describe square patches with a 14-element mean/std descriptor
//! over seven channel planes and regress an instrument probability from
//! the k nearest labeled reference patches, evaluated coarse-to-fine.

pub mod change;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod knn;
pub mod optimize;
pub mod runner;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
