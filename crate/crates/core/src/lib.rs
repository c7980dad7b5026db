// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod change;
pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod export;
pub mod image;
pub mod ingest;
pub mod morph;
pub mod pipeline;
pub mod regions;
pub mod review;
pub mod texture;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use events::{EventSegment, ResponseSeries};
pub use image::{BoundingBox, FrameBuffer, MaskImage, Plane};
