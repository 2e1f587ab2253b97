//! Synthesis of object-removal training triplets by copy-paste.
//!
//! Instances cut from annotated images are filtered, scaled and pasted
//! into backgrounds at positions that avoid existing objects. The pasted
//! region is feathered with a trimap-derived alpha ramp. Each triplet holds
//! the composite, the paste mask, a deformed version of that mask and the
//! untouched background as ground truth.

pub mod annotation;
pub mod compositor;
pub mod config;
pub mod enhance;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod pipeline;
pub mod placement;
pub mod toy;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::{BackgroundRecord, BinaryMask, Image, InstanceRecord, Rect, Triplet};
