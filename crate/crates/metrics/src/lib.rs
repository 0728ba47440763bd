//! Evaluation of predicted structured documents against references:
//! detection matching, text edit distance, tree similarity for tables and
//! pages, table cell accuracy, token recovery, and predicted-box overlap.

use std::path::PathBuf;

use thiserror::Error;

pub mod doc;
pub mod matching;
pub mod report;
pub mod table;
pub mod text;
pub mod tree;

pub use doc::{Element, PageId, StructuredDoc, TableCell, TableGrid};
pub use matching::{detection_prf, iou, DetectionResult, Labeled};
pub use report::{bbox_overlap_stats, evaluate_docs, token_metrics, EvalOptions, MetricsReport};
pub use table::{cell_metrics, teds};
pub use text::{adjusted_ned, ned};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("page {page_id}: {message}")]
    InvalidTable { page_id: String, message: String },
    #[error("duplicate page id {page_id:?} in {side} documents")]
    DuplicatePageId { side: String, page_id: String },
}
