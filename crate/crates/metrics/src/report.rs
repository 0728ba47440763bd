//! Token and overlap statistics and the corpus-level report.

use std::collections::{HashMap, HashSet};

use harmony_core::BBox;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::{PageId, StructuredDoc, TableGrid};
use crate::matching::{detection_prf, Labeled};
use crate::table::{cell_metrics, page_teds, teds, DEFAULT_SHIFT_WINDOW};
use crate::text::{adjusted_ned, ned, normalize};
use crate::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenScores {
    pub percent_tokens_found: f64,
    pub percent_tokens_added: f64,
    pub element_alignment: f64,
}

fn tokens(doc: &StructuredDoc) -> Vec<String> {
    normalize(&doc.text())
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Multiset token recovery and over-generation, plus mean text similarity of
/// detection-matched element pairs.
///
/// With no reference tokens, `found` is 1. `added` is 0 for an empty pred.
/// Alignment is 1 when both documents have no elements and 0 when elements
/// exist but none match.
pub fn token_metrics(pred: &StructuredDoc, reference: &StructuredDoc, iou_threshold: f64) -> TokenScores {
    let pt = tokens(pred);
    let rt = tokens(reference);
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &rt {
        *ref_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(n) = ref_counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    let found = if rt.is_empty() {
        1.0
    } else {
        common as f64 / rt.len() as f64
    };
    let added = if pt.is_empty() {
        0.0
    } else {
        (pt.len() - common) as f64 / pt.len() as f64
    };

    let alignment = if pred.elements.is_empty() && reference.elements.is_empty() {
        1.0
    } else {
        let det = detection_prf(&pred.elements, &reference.elements, iou_threshold);
        if det.matches.is_empty() {
            0.0
        } else {
            det.matches
                .iter()
                .map(|m| ned(&pred.elements[m.pred].text, &reference.elements[m.reference].text))
                .sum::<f64>()
                / det.matches.len() as f64
        }
    };
    TokenScores {
        percent_tokens_found: found,
        percent_tokens_added: added,
        element_alignment: alignment,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapStats {
    pub max_iou: f64,
    pub mean_iou: f64,
    pub num_overlapping_pairs: usize,
}

/// IoU statistics over unordered pairs of predicted boxes that overlap.
pub fn bbox_overlap_stats<T: Labeled>(pred: &[T]) -> OverlapStats {
    let boxes: Vec<BBox> = pred.iter().map(Labeled::bbox).collect();
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let v = boxes[i].iou(&boxes[j]);
            if v > 0.0 {
                max = max.max(v);
                sum += v;
                count += 1;
            }
        }
    }
    OverlapStats {
        max_iou: max,
        mean_iou: if count == 0 { 0.0 } else { sum / count as f64 },
        num_overlapping_pairs: count,
    }
}

/// The seventeen corpus-level scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "adjusted_NED")]
    pub adjusted_ned: f64,
    #[serde(rename = "NED")]
    pub ned: f64,
    pub detection_f: f64,
    pub detection_precision: f64,
    pub detection_recall: f64,
    pub page_teds_corrected: f64,
    pub table_teds: f64,
    pub table_teds_corrected: f64,
    pub cell_level_content_acc: f64,
    pub cell_level_index_acc: f64,
    pub shifted_cell_content_acc: f64,
    pub element_alignment: f64,
    pub percent_tokens_found: f64,
    pub percent_tokens_added: f64,
    pub bbox_max_iou: f64,
    pub bbox_mean_iou: f64,
    pub bbox_num_overlapping_pairs: f64,
}

impl MetricsReport {
    /// Field names with values, in declaration order.
    pub fn fields(&self) -> [(&'static str, f64); 17] {
        [
            ("adjusted_NED", self.adjusted_ned),
            ("NED", self.ned),
            ("detection_f", self.detection_f),
            ("detection_precision", self.detection_precision),
            ("detection_recall", self.detection_recall),
            ("page_teds_corrected", self.page_teds_corrected),
            ("table_teds", self.table_teds),
            ("table_teds_corrected", self.table_teds_corrected),
            ("cell_level_content_acc", self.cell_level_content_acc),
            ("cell_level_index_acc", self.cell_level_index_acc),
            ("shifted_cell_content_acc", self.shifted_cell_content_acc),
            ("element_alignment", self.element_alignment),
            ("percent_tokens_found", self.percent_tokens_found),
            ("percent_tokens_added", self.percent_tokens_added),
            ("bbox_max_iou", self.bbox_max_iou),
            ("bbox_mean_iou", self.bbox_mean_iou),
            ("bbox_num_overlapping_pairs", self.bbox_num_overlapping_pairs),
        ]
    }

    /// Names of metrics where lower is better.
    pub const LOWER_IS_BETTER: [&'static str; 4] = [
        "percent_tokens_added",
        "bbox_max_iou",
        "bbox_mean_iou",
        "bbox_num_overlapping_pairs",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub shift_window: i64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            shift_window: DEFAULT_SHIFT_WINDOW,
        }
    }
}

/// Per-page scores before corpus averaging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageMetrics {
    pub page_id: PageId,
    pub adjusted_ned: f64,
    pub ned: f64,
    pub detection_precision: f64,
    pub detection_recall: f64,
    pub detection_f: f64,
    pub page_teds_corrected: f64,
    pub tokens: TokenScores,
    pub overlap: OverlapStats,
    /// One entry per reference table.
    pub tables: Vec<TableScores>,
    /// Predicted tables on the page.
    pub pred_tables: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableScores {
    pub teds: f64,
    pub teds_corrected: f64,
    pub content_acc: f64,
    pub index_acc: f64,
    pub shifted_content_acc: f64,
}

struct TableBox(BBox);

impl Labeled for TableBox {
    fn category(&self) -> &str {
        "table"
    }

    fn bbox(&self) -> BBox {
        self.0
    }
}

fn tables(doc: &StructuredDoc) -> Vec<(BBox, &TableGrid)> {
    doc.elements
        .iter()
        .filter_map(|e| e.table.as_ref().map(|t| (e.bbox, t)))
        .collect()
}

/// All scores for one pred/ref page pair.
///
/// Reference tables are paired with predicted tables by IoU matching.
/// Unpaired reference tables score 0.
pub fn page_metrics(pred: &StructuredDoc, reference: &StructuredDoc, opts: EvalOptions) -> PageMetrics {
    let (pt, rt) = (pred.text(), reference.text());
    let det = detection_prf(&pred.elements, &reference.elements, opts.iou_threshold);

    let p_tables = tables(pred);
    let r_tables = tables(reference);
    let pb: Vec<TableBox> = p_tables.iter().map(|t| TableBox(t.0)).collect();
    let rb: Vec<TableBox> = r_tables.iter().map(|t| TableBox(t.0)).collect();
    let pairing = detection_prf(&pb, &rb, opts.iou_threshold);
    let table_scores = (0..r_tables.len())
        .map(|j| match pairing.matches.iter().find(|m| m.reference == j) {
            Some(m) => {
                let (p, r) = (p_tables[m.pred].1, r_tables[j].1);
                let cells = cell_metrics(p, r, opts.shift_window);
                TableScores {
                    teds: teds(p, r, false),
                    teds_corrected: teds(p, r, true),
                    content_acc: cells.content_acc,
                    index_acc: cells.index_acc,
                    shifted_content_acc: cells.shifted_content_acc,
                }
            }
            None => TableScores {
                teds: 0.0,
                teds_corrected: 0.0,
                content_acc: 0.0,
                index_acc: 0.0,
                shifted_content_acc: 0.0,
            },
        })
        .collect();

    PageMetrics {
        page_id: reference.page_id.clone(),
        adjusted_ned: adjusted_ned(&pt, &rt),
        ned: ned(&pt, &rt),
        detection_precision: det.precision,
        detection_recall: det.recall,
        detection_f: det.f,
        page_teds_corrected: page_teds(pred, reference, true),
        tokens: token_metrics(pred, reference, opts.iou_threshold),
        overlap: bbox_overlap_stats(&pred.elements),
        tables: table_scores,
        pred_tables: p_tables.len(),
    }
}

fn check_unique(docs: &[StructuredDoc], side: &str) -> Result<(), MetricsError> {
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(&d.page_id) {
            return Err(MetricsError::DuplicatePageId {
                side: side.to_string(),
                page_id: d.page_id.to_string(),
            });
        }
    }
    Ok(())
}

/// Pairs pages by id. Reference pages without a prediction are scored against
/// an empty prediction, and predicted pages without a reference against an
/// empty reference.
pub fn pair_pages<'a>(
    pred: &'a [StructuredDoc],
    reference: &'a [StructuredDoc],
) -> Result<Vec<(StructuredDoc, StructuredDoc)>, MetricsError> {
    check_unique(pred, "pred")?;
    check_unique(reference, "ref")?;
    let by_id: HashMap<&PageId, &StructuredDoc> = pred.iter().map(|d| (&d.page_id, d)).collect();
    let ref_ids: HashSet<&PageId> = reference.iter().map(|d| &d.page_id).collect();
    let empty = |id: &PageId| StructuredDoc {
        page_id: id.clone(),
        elements: Vec::new(),
    };
    let mut pairs: Vec<(StructuredDoc, StructuredDoc)> = reference
        .iter()
        .map(|r| {
            let p = by_id
                .get(&r.page_id)
                .map(|d| (*d).clone())
                .unwrap_or_else(|| empty(&r.page_id));
            (p, r.clone())
        })
        .collect();
    pairs.extend(
        pred.iter()
            .filter(|p| !ref_ids.contains(&p.page_id))
            .map(|p| (p.clone(), empty(&p.page_id))),
    );
    Ok(pairs)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Corpus report: page scores macro-averaged over pages, table scores averaged
/// over all reference tables. With no reference tables the table scores are 1
/// if no tables were predicted either, else 0. An empty corpus scores as if
/// both sides were empty pages.
pub fn aggregate(pages: &[PageMetrics]) -> MetricsReport {
    let avg = |f: &dyn Fn(&PageMetrics) -> f64| mean(pages.iter().map(f)).unwrap_or(1.0);
    let avg_low = |f: &dyn Fn(&PageMetrics) -> f64| mean(pages.iter().map(f)).unwrap_or(0.0);
    let tables: Vec<&TableScores> = pages.iter().flat_map(|p| &p.tables).collect();
    let no_table_score = if pages.iter().any(|p| p.pred_tables > 0) {
        0.0
    } else {
        1.0
    };
    let tavg = |f: &dyn Fn(&TableScores) -> f64| mean(tables.iter().map(|t| f(t))).unwrap_or(no_table_score);
    MetricsReport {
        adjusted_ned: avg(&|p| p.adjusted_ned),
        ned: avg(&|p| p.ned),
        detection_f: avg(&|p| p.detection_f),
        detection_precision: avg(&|p| p.detection_precision),
        detection_recall: avg(&|p| p.detection_recall),
        page_teds_corrected: avg(&|p| p.page_teds_corrected),
        table_teds: tavg(&|t| t.teds),
        table_teds_corrected: tavg(&|t| t.teds_corrected),
        cell_level_content_acc: tavg(&|t| t.content_acc),
        cell_level_index_acc: tavg(&|t| t.index_acc),
        shifted_cell_content_acc: tavg(&|t| t.shifted_content_acc),
        element_alignment: avg(&|p| p.tokens.element_alignment),
        percent_tokens_found: avg(&|p| p.tokens.percent_tokens_found),
        percent_tokens_added: avg_low(&|p| p.tokens.percent_tokens_added),
        bbox_max_iou: avg_low(&|p| p.overlap.max_iou),
        bbox_mean_iou: avg_low(&|p| p.overlap.mean_iou),
        bbox_num_overlapping_pairs: avg_low(&|p| p.overlap.num_overlapping_pairs as f64),
    }
}

/// Per-page scores in pairing order.
pub fn evaluate_pages(
    pred: &[StructuredDoc],
    reference: &[StructuredDoc],
    opts: EvalOptions,
) -> Result<Vec<PageMetrics>, MetricsError> {
    let pairs = pair_pages(pred, reference)?;
    Ok(pairs.par_iter().map(|(p, r)| page_metrics(p, r, opts)).collect())
}

pub fn evaluate_docs(
    pred: &[StructuredDoc],
    reference: &[StructuredDoc],
    opts: EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    Ok(aggregate(&evaluate_pages(pred, reference, opts)?))
}
