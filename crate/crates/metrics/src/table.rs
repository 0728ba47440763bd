//! Tree similarity (TEDS) for tables and pages, and cell-level table accuracy.

use std::collections::HashMap;

use crate::doc::{StructuredDoc, TableGrid};
use crate::text::{ned, normalize};
use crate::tree::{tree_edit_distance, Tree};

/// Node label of a table or page tree.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLabel {
    Root,
    Row,
    Cell {
        row_span: usize,
        col_span: usize,
        text: String,
    },
    Element {
        category: String,
        text: String,
    },
}

/// Rename cost: 1 across node kinds, spans or categories, otherwise the text
/// distance `1 - ned`.
pub fn rename_cost(a: &NodeLabel, b: &NodeLabel) -> f64 {
    use NodeLabel::*;
    match (a, b) {
        (Root, Root) | (Row, Row) => 0.0,
        (
            Cell {
                row_span: ra,
                col_span: ca,
                text: ta,
            },
            Cell {
                row_span: rb,
                col_span: cb,
                text: tb,
            },
        ) => {
            if (ra, ca) != (rb, cb) {
                1.0
            } else {
                1.0 - ned(ta, tb)
            }
        }
        (Element { category: ca, text: ta }, Element { category: cb, text: tb }) => {
            if ca != cb {
                1.0
            } else {
                1.0 - ned(ta, tb)
            }
        }
        _ => 1.0,
    }
}

fn prepare(text: &str, corrected: bool) -> String {
    if corrected {
        normalize(text)
    } else {
        text.to_string()
    }
}

fn row_nodes(grid: &TableGrid, corrected: bool) -> Vec<Tree<NodeLabel>> {
    let mut rows: Vec<Vec<(usize, Tree<NodeLabel>)>> = (0..grid.n_rows).map(|_| Vec::new()).collect();
    for c in &grid.cells {
        if let Some(r) = rows.get_mut(c.row) {
            r.push((
                c.col,
                Tree::leaf(NodeLabel::Cell {
                    row_span: c.row_span,
                    col_span: c.col_span,
                    text: prepare(&c.text, corrected),
                }),
            ));
        }
    }
    rows.into_iter()
        .map(|mut cells| {
            cells.sort_by_key(|(col, _)| *col);
            Tree::node(NodeLabel::Row, cells.into_iter().map(|(_, t)| t).collect())
        })
        .collect()
}

/// Root, one node per row, one leaf per cell anchored in that row.
pub fn table_tree(grid: &TableGrid, corrected: bool) -> Tree<NodeLabel> {
    Tree::node(NodeLabel::Root, row_nodes(grid, corrected))
}

/// Root, one node per element in reading order; table elements carry their
/// rows as children.
pub fn page_tree(doc: &StructuredDoc, corrected: bool) -> Tree<NodeLabel> {
    let children = doc
        .elements
        .iter()
        .map(|e| {
            Tree::node(
                NodeLabel::Element {
                    category: e.category.clone(),
                    text: prepare(&e.text, corrected),
                },
                e.table.as_ref().map(|g| row_nodes(g, corrected)).unwrap_or_default(),
            )
        })
        .collect();
    Tree::node(NodeLabel::Root, children)
}

/// `1 - TED / max(|a|, |b|)`.
pub fn tree_similarity(a: &Tree<NodeLabel>, b: &Tree<NodeLabel>) -> f64 {
    let n = a.size().max(b.size());
    let d = tree_edit_distance(a, b, rename_cost);
    (1.0 - d / n as f64).clamp(0.0, 1.0)
}

pub fn teds(pred: &TableGrid, reference: &TableGrid, corrected: bool) -> f64 {
    tree_similarity(&table_tree(pred, corrected), &table_tree(reference, corrected))
}

pub fn page_teds(pred: &StructuredDoc, reference: &StructuredDoc, corrected: bool) -> f64 {
    tree_similarity(&page_tree(pred, corrected), &page_tree(reference, corrected))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScores {
    pub content_acc: f64,
    pub index_acc: f64,
    pub shifted_content_acc: f64,
}

pub const DEFAULT_SHIFT_WINDOW: i64 = 2;

/// Cell accuracy of `pred` against `reference` with texts normalized.
///
/// Content accuracy ignores placement. Index accuracy asks that the anchor
/// `(r, c)` in pred hold the reference text. Shifted accuracy is the best
/// index accuracy when pred is read at `(r - dr, c - dc)` for offsets in
/// `[-window, window]`. With no reference cells every score is 1 when pred
/// has no cells either, else 0.
pub fn cell_metrics(pred: &TableGrid, reference: &TableGrid, window: i64) -> CellScores {
    if reference.cells.is_empty() {
        let v = if pred.cells.is_empty() { 1.0 } else { 0.0 };
        return CellScores {
            content_acc: v,
            index_acc: v,
            shifted_content_acc: v,
        };
    }
    let total = reference.cells.len() as f64;

    let mut pred_counts: HashMap<String, usize> = HashMap::new();
    for c in &pred.cells {
        *pred_counts.entry(normalize(&c.text)).or_default() += 1;
    }
    let mut ref_counts: HashMap<String, usize> = HashMap::new();
    for c in &reference.cells {
        *ref_counts.entry(normalize(&c.text)).or_default() += 1;
    }
    let matched: usize = ref_counts
        .iter()
        .map(|(t, n)| (*n).min(pred_counts.get(t).copied().unwrap_or(0)))
        .sum();

    let anchors: HashMap<(i64, i64), String> = pred
        .cells
        .iter()
        .map(|c| ((c.row as i64, c.col as i64), normalize(&c.text)))
        .collect();
    let ref_norm: Vec<(i64, i64, String)> = reference
        .cells
        .iter()
        .map(|c| (c.row as i64, c.col as i64, normalize(&c.text)))
        .collect();
    let shifted = |dr: i64, dc: i64| -> f64 {
        let hits = ref_norm
            .iter()
            .filter(|(r, c, t)| anchors.get(&(r - dr, c - dc)) == Some(t))
            .count();
        hits as f64 / total
    };
    let mut best: f64 = 0.0;
    for dr in -window..=window {
        for dc in -window..=window {
            best = best.max(shifted(dr, dc));
        }
    }
    CellScores {
        content_acc: matched as f64 / total,
        index_acc: shifted(0, 0),
        shifted_content_acc: best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::TableCell;

    #[test]
    fn identical_tables() {
        let g = TableGrid::from_rows(&[vec!["a", "b"], vec!["c", "d"]]);
        assert_eq!(teds(&g, &g, false), 1.0);
        let s = cell_metrics(&g, &g, DEFAULT_SHIFT_WINDOW);
        assert_eq!((s.content_acc, s.index_acc, s.shifted_content_acc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn extra_empty_cell() {
        let reference = TableGrid::from_rows(&[vec!["x", "x"]]);
        let pred = TableGrid::from_rows(&[vec!["x", "x", ""]]);
        assert!((teds(&pred, &reference, false) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_pred_table() {
        let reference = TableGrid::from_rows(&[vec!["x", "y"]]);
        assert!((teds(&TableGrid::empty(), &reference, false) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn span_mismatch_costs_full_rename() {
        let a = TableGrid::from_rows(&[vec!["x"]]);
        let mut b = a.clone();
        b.n_cols = 2;
        b.cells[0].col_span = 2;
        // 3 nodes each, one rename at cost 1
        assert!((teds(&a, &b, false) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn corrected_variant_normalizes_text() {
        let a = TableGrid::from_rows(&[vec!["Total  Sum"]]);
        let b = TableGrid::from_rows(&[vec!["total sum"]]);
        assert!(teds(&a, &b, false) < 1.0);
        assert_eq!(teds(&a, &b, true), 1.0);
    }

    #[test]
    fn shifted_column() {
        let reference = TableGrid::from_rows(&[vec!["a", "b"], vec!["c", "d"]]);
        let mut pred = TableGrid {
            n_rows: 2,
            n_cols: 3,
            cells: Vec::new(),
        };
        for r in 0..2 {
            pred.cells.push(TableCell::new(r, 0, ""));
            for c in 0..2 {
                pred.cells
                    .push(TableCell::new(r, c + 1, reference.text_at(r, c).unwrap()));
            }
        }
        let s = cell_metrics(&pred, &reference, DEFAULT_SHIFT_WINDOW);
        assert_eq!(s.index_acc, 0.0);
        assert_eq!(s.content_acc, 1.0);
        assert_eq!(s.shifted_content_acc, 1.0);
    }
}
