//! Filtering and geo-referencing of geotagged street-level photos.
//!
//! A candidate set of images passes through five filters. The survivors are
//! tied to the building they show, and each building's OpenStreetMap tags
//! give the image a weak function label (commercial, other, residential).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod detfilter;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod exif;
pub mod geoindex;
pub mod geometry;
pub mod jsonl;
pub mod manifest;
pub mod osm;
pub mod pipeline;
pub mod sightline;
pub mod simfilter;
pub mod synthetic;

pub use error::{Error, Result};
