//! Layout dataset model, taxonomy remapping, plan-validated harmonization,
//! and cross-dataset discrepancy analytics.

pub mod dataset;
pub mod discrepancy;
pub mod geometry;
pub mod harmonizer;
pub mod taxonomy;

pub use dataset::{Annotation, DatasetError, LayoutDataset, PageRecord};
pub use geometry::BBox;
pub use taxonomy::{Taxonomy, TaxonomyMapping};
