//! Structured document model and its JSONL interchange form.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use harmony_core::{BBox, LayoutDataset};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::MetricsError;

/// Page identifier. JSON input may give it as a string or an integer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct PageId(pub String);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PageId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = PageId;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a string or integer page id")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<PageId, E> {
                Ok(PageId(v.to_string()))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<PageId, E> {
                Ok(PageId(v.to_string()))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<PageId, E> {
                Ok(PageId(v.to_string()))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub row: usize,
    pub col: usize,
    #[serde(default = "one")]
    pub row_span: usize,
    #[serde(default = "one")]
    pub col_span: usize,
    #[serde(default)]
    pub text: String,
}

fn one() -> usize {
    1
}

impl TableCell {
    pub fn new(row: usize, col: usize, text: impl Into<String>) -> Self {
        Self {
            row,
            col,
            row_span: 1,
            col_span: 1,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    #[serde(default)]
    pub cells: Vec<TableCell>,
}

impl TableGrid {
    pub fn empty() -> Self {
        Self {
            n_rows: 0,
            n_cols: 0,
            cells: Vec::new(),
        }
    }

    /// Builds a grid of 1x1 cells from row-major text.
    pub fn from_rows<S: AsRef<str>>(rows: &[Vec<S>]) -> Self {
        let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let cells = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(c, t)| TableCell::new(r, c, t.as_ref()))
            })
            .collect();
        Self {
            n_rows: rows.len(),
            n_cols,
            cells,
        }
    }

    /// Checks anchor uniqueness and that spans stay inside the grid.
    pub fn check(&self) -> Result<(), String> {
        let mut anchors = HashSet::new();
        for c in &self.cells {
            if c.row_span == 0 || c.col_span == 0 {
                return Err(format!("cell ({}, {}) has a zero span", c.row, c.col));
            }
            if c.row + c.row_span > self.n_rows || c.col + c.col_span > self.n_cols {
                return Err(format!(
                    "cell ({}, {}) with span {}x{} exceeds the {}x{} grid",
                    c.row, c.col, c.row_span, c.col_span, self.n_rows, self.n_cols
                ));
            }
            if !anchors.insert((c.row, c.col)) {
                return Err(format!("duplicate cell anchor ({}, {})", c.row, c.col));
            }
        }
        Ok(())
    }

    /// Text at the cell anchored at `(row, col)`, if any.
    pub fn text_at(&self, row: usize, col: usize) -> Option<&str> {
        self.cells
            .iter()
            .find(|c| c.row == row && c.col == col)
            .map(|c| c.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub category: String,
    pub bbox: BBox,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableGrid>,
}

/// One page: elements in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDoc {
    pub page_id: PageId,
    #[serde(default)]
    pub elements: Vec<Element>,
}

impl StructuredDoc {
    pub fn new(page_id: impl Into<String>, elements: Vec<Element>) -> Self {
        Self {
            page_id: PageId(page_id.into()),
            elements,
        }
    }

    /// Element texts joined in reading order.
    pub fn text(&self) -> String {
        self.elements
            .iter()
            .map(|e| e.text.as_str())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        for e in &self.elements {
            if let Some(t) = &e.table {
                t.check().map_err(|message| MetricsError::InvalidTable {
                    page_id: self.page_id.to_string(),
                    message,
                })?;
            }
        }
        Ok(())
    }
}

/// Parses one document per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<StructuredDoc>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: StructuredDoc = serde_json::from_str(line).map_err(|e| MetricsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.check()?;
        out.push(doc);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<StructuredDoc>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&text)
}

pub fn to_jsonl(docs: &[StructuredDoc]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    out
}

/// Text-free documents from a layout dataset, one per page, keyed by image id.
///
/// Annotations carrying a string `text` extra keep it as element text.
pub fn docs_from_dataset(dataset: &LayoutDataset) -> Vec<StructuredDoc> {
    dataset
        .pages
        .iter()
        .map(|p| {
            let elements = p
                .annotations
                .iter()
                .map(|a| Element {
                    category: a.category.clone(),
                    bbox: a.bbox,
                    text: a
                        .extra
                        .get("text")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_string(),
                    table: None,
                })
                .collect();
            StructuredDoc::new(p.image_id.to_string(), elements)
        })
        .collect()
}
