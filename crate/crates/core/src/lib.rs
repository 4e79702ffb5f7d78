//! Segmentation-free word spotting: region proposals over whole manuscript
//! pages, learned region descriptors in a word-embedding space, and ranked
//! retrieval by query string or query image.

mod binio;
pub mod augmentation;
pub mod corpus;
pub mod dtp;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod glyphs;
pub mod ingestion;
pub mod localization;
pub mod neural;
pub mod raster;
pub mod retrieval;

pub use embeddings::EmbeddingKind;
pub use error::{Error, Result};
pub use geometry::BBox;
pub use ingestion::{Page, PageRecord, RunConfig};
pub use neural::SpotModel;
pub use raster::GrayImage;
pub use retrieval::{Hit, SpotIndex};
