//! End-to-end text reading and entity extraction for document images.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod context;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod reader;
pub mod training;

pub use error::{Error, Result};
