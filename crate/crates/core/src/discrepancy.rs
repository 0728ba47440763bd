//! Dataset diagnostics: split overviews, class distributions, and
//! cross-dataset spatial statistics with matched-category ratios.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::LayoutDataset;
use crate::taxonomy::{Mapped, TaxonomyMapping};

#[derive(Debug, Error, PartialEq)]
pub enum DiscrepancyError {
    #[error("category {category:?} not present in dataset {dataset:?}")]
    CategoryNotFound { dataset: String, category: String },
    #[error("cannot form ratio for {category:?}: reference mean {field} is zero")]
    Degenerate { category: String, field: &'static str },
}

/// Sum with pairwise (cascade) reduction; error grows as O(log n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

/// Rounds half away from zero to one decimal.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetOverview {
    pub name: String,
    pub images: usize,
    pub annotations: usize,
    /// Annotations per image, one decimal. Absent for an empty dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_annotations_per_image: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_page_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_page_height: Option<f64>,
}

impl DatasetOverview {
    /// Overview from split totals. `mean_page` is the mean page size, if known.
    pub fn from_totals(name: &str, images: usize, annotations: usize, mean_page: Option<(f64, f64)>) -> Self {
        let avg = (images > 0).then(|| round1(annotations as f64 / images as f64));
        Self {
            name: name.to_string(),
            images,
            annotations,
            avg_annotations_per_image: avg,
            avg_page_width: mean_page.map(|p| p.0),
            avg_page_height: mean_page.map(|p| p.1),
        }
    }
}

pub fn dataset_overview(dataset: &LayoutDataset) -> DatasetOverview {
    let widths: Vec<f64> = dataset.pages.iter().map(|p| p.width).collect();
    let heights: Vec<f64> = dataset.pages.iter().map(|p| p.height).collect();
    let page = (!widths.is_empty()).then(|| (mean(&widths), mean(&heights)));
    DatasetOverview::from_totals(&dataset.name, dataset.pages.len(), dataset.annotation_count(), page)
}

/// Per-category count, share, and mean box dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub category: String,
    pub count: usize,
    /// `100 * count / total`, unrounded. Renderings show one decimal.
    pub percent: f64,
    pub mean_width: f64,
    pub mean_height: f64,
    /// Mean of per-box areas (not mean width times mean height).
    pub mean_area: f64,
}

/// Count and share of one category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassShare {
    pub category: String,
    pub count: u64,
    pub percent: f64,
}

/// Shares from raw counts, sorted by descending count then name.
pub fn class_shares<S: AsRef<str>>(counts: &[(S, u64)]) -> Vec<ClassShare> {
    let total: u64 = counts.iter().map(|c| c.1).sum();
    let mut out: Vec<ClassShare> = counts
        .iter()
        .map(|(c, n)| ClassShare {
            category: c.as_ref().to_string(),
            count: *n,
            percent: if total == 0 {
                0.0
            } else {
                100.0 * *n as f64 / total as f64
            },
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SpatialOptions {
    /// Divide widths by page width and heights by page height before averaging.
    pub normalize_by_page: bool,
}

#[derive(Default)]
struct Dims {
    w: Vec<f64>,
    h: Vec<f64>,
    area: Vec<f64>,
}

fn collect_dims(dataset: &LayoutDataset, opts: SpatialOptions) -> BTreeMap<&str, Dims> {
    let mut by_cat: BTreeMap<&str, Dims> = BTreeMap::new();
    for p in &dataset.pages {
        let (sx, sy) = if opts.normalize_by_page {
            (p.width, p.height)
        } else {
            (1.0, 1.0)
        };
        for a in &p.annotations {
            let d = by_cat.entry(a.category.as_str()).or_default();
            let w = a.bbox.width() / sx;
            let h = a.bbox.height() / sy;
            d.w.push(w);
            d.h.push(h);
            d.area.push(w * h);
        }
    }
    by_cat
}

fn stats_for(category: &str, d: &Dims, total: usize) -> ClassStats {
    ClassStats {
        category: category.to_string(),
        count: d.w.len(),
        percent: if total == 0 {
            0.0
        } else {
            100.0 * d.w.len() as f64 / total as f64
        },
        mean_width: mean(&d.w),
        mean_height: mean(&d.h),
        mean_area: mean(&d.area),
    }
}

/// Statistics for every category present, sorted by descending count.
pub fn class_distribution(dataset: &LayoutDataset, opts: SpatialOptions) -> Vec<ClassStats> {
    let total = dataset.annotation_count();
    let mut out: Vec<ClassStats> = collect_dims(dataset, opts)
        .iter()
        .map(|(c, d)| stats_for(c, d, total))
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)));
    out
}

pub fn spatial_stats(
    dataset: &LayoutDataset,
    category: &str,
    opts: SpatialOptions,
) -> Result<ClassStats, DiscrepancyError> {
    let dims = collect_dims(dataset, opts);
    dims.get(category)
        .map(|d| stats_for(category, d, dataset.annotation_count()))
        .ok_or_else(|| DiscrepancyError::CategoryNotFound {
            dataset: dataset.name.clone(),
            category: category.to_string(),
        })
}

/// Side-by-side means of one matched category and their ratios (a over b).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRecord {
    pub category_a: String,
    pub category_b: String,
    pub width_a: f64,
    pub width_b: f64,
    pub height_a: f64,
    pub height_b: f64,
    pub area_a: f64,
    pub area_b: f64,
    pub width_ratio: f64,
    pub height_ratio: f64,
    pub area_ratio: f64,
}

/// Two-decimal ratio label, e.g. `5.23×`.
pub fn format_ratio(r: f64) -> String {
    format!("{r:.2}×")
}

impl RatioRecord {
    pub fn width_label(&self) -> String {
        format_ratio(self.width_ratio)
    }

    pub fn height_label(&self) -> String {
        format_ratio(self.height_ratio)
    }

    pub fn area_label(&self) -> String {
        format_ratio(self.area_ratio)
    }
}

pub fn cross_ratios(a: &ClassStats, b: &ClassStats) -> Result<RatioRecord, DiscrepancyError> {
    for (field, v) in [
        ("width", b.mean_width),
        ("height", b.mean_height),
        ("area", b.mean_area),
    ] {
        if v == 0.0 || !v.is_finite() {
            return Err(DiscrepancyError::Degenerate {
                category: b.category.clone(),
                field,
            });
        }
    }
    Ok(RatioRecord {
        category_a: a.category.clone(),
        category_b: b.category.clone(),
        width_a: a.mean_width,
        width_b: b.mean_width,
        height_a: a.mean_height,
        height_b: b.mean_height,
        area_a: a.mean_area,
        area_b: b.mean_area,
        width_ratio: a.mean_width / b.mean_width,
        height_ratio: a.mean_height / b.mean_height,
        area_ratio: a.mean_area / b.mean_area,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetClassStats {
    pub dataset: String,
    pub classes: Vec<ClassStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub normalized_by_page: bool,
    pub overviews: Vec<DatasetOverview>,
    pub class_stats: Vec<DatasetClassStats>,
    /// One row per category matched in both datasets.
    pub ratios: Vec<RatioRecord>,
    pub unmatched_a: Vec<String>,
    pub unmatched_b: Vec<String>,
}

/// Compares dataset `a` against reference `b`.
///
/// `correspondence` maps b's category names to a's. Without it, categories
/// match by identical name. Ratio rows are a over b.
pub fn discrepancy_report(
    a: &LayoutDataset,
    b: &LayoutDataset,
    correspondence: Option<&TaxonomyMapping>,
    opts: SpatialOptions,
) -> Result<DiscrepancyReport, DiscrepancyError> {
    let stats_a = class_distribution(a, opts);
    let stats_b = class_distribution(b, opts);
    let find = |s: &[ClassStats], c: &str| s.iter().position(|x| x.category == c);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (ib, sb) in stats_b.iter().enumerate() {
        let target = match correspondence {
            Some(m) => match m.map_label(&sb.category) {
                Ok(Mapped::To(t)) => Some(t),
                _ => None,
            },
            None => Some(sb.category.as_str()),
        };
        if let Some(ia) = target.and_then(|t| find(&stats_a, t)) {
            pairs.push((ia, ib));
        }
    }
    // order rows by a's taxonomy, then by b's category
    pairs.sort_by_key(|&(ia, ib)| {
        (
            a.taxonomy.position(&stats_a[ia].category).unwrap_or(usize::MAX),
            stats_b[ib].category.clone(),
        )
    });
    let ratios = pairs
        .iter()
        .map(|&(ia, ib)| cross_ratios(&stats_a[ia], &stats_b[ib]))
        .collect::<Result<Vec<_>, _>>()?;

    let unmatched = |stats: &[ClassStats], matched: Vec<usize>| -> Vec<String> {
        stats
            .iter()
            .enumerate()
            .filter(|(i, _)| !matched.contains(i))
            .map(|(_, s)| s.category.clone())
            .collect()
    };
    let unmatched_a = unmatched(&stats_a, pairs.iter().map(|p| p.0).collect());
    let unmatched_b = unmatched(&stats_b, pairs.iter().map(|p| p.1).collect());

    Ok(DiscrepancyReport {
        normalized_by_page: opts.normalize_by_page,
        overviews: vec![dataset_overview(a), dataset_overview(b)],
        class_stats: vec![
            DatasetClassStats {
                dataset: a.name.clone(),
                classes: stats_a,
            },
            DatasetClassStats {
                dataset: b.name.clone(),
                classes: stats_b,
            },
        ],
        ratios,
        unmatched_a,
        unmatched_b,
    })
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(header.iter().map(|h| h.to_string()).collect()));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")
    );
    for r in rows {
        let _ = writeln!(out, "{}", line(r.clone()));
    }
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "—".to_string())
}

/// Aligned plain-text rendering of a report.
pub fn render_text(report: &DiscrepancyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Dataset overview");
    let rows: Vec<Vec<String>> = report
        .overviews
        .iter()
        .map(|o| {
            vec![
                o.name.clone(),
                o.images.to_string(),
                o.annotations.to_string(),
                fmt_opt(o.avg_annotations_per_image, |v| format!("{v:.1}")),
                match (o.avg_page_width, o.avg_page_height) {
                    (Some(w), Some(h)) => format!("{w:.0}×{h:.0}"),
                    _ => "—".to_string(),
                },
            ]
        })
        .collect();
    table(
        &mut out,
        &["Split", "Images", "Annotations", "Avg Ann/Img", "Avg Size (W×H)"],
        &rows,
    );

    for ds in &report.class_stats {
        let _ = writeln!(out, "\nClass distribution: {}", ds.dataset);
        let rows: Vec<Vec<String>> = ds
            .classes
            .iter()
            .map(|c| {
                vec![
                    c.category.clone(),
                    c.count.to_string(),
                    format!("{:.1}%", c.percent),
                    format!("{:.1}", c.mean_width),
                    format!("{:.1}", c.mean_height),
                    format!("{:.0}", c.mean_area),
                ]
            })
            .collect();
        table(
            &mut out,
            &["Category", "Count", "%", "Avg W", "Avg H", "Avg Area"],
            &rows,
        );
    }

    let _ = writeln!(
        out,
        "\nMatched categories{}",
        if report.normalized_by_page {
            " (page-normalized)"
        } else {
            ""
        }
    );
    let rows: Vec<Vec<String>> = report
        .ratios
        .iter()
        .map(|r| {
            vec![
                format!("{} / {}", r.category_a, r.category_b),
                format!("{:.1}", r.width_a),
                format!("{:.1}", r.height_a),
                format!("{:.0}", r.area_a),
                format!("{:.0}", r.area_b),
                r.width_label(),
                r.height_label(),
                r.area_label(),
            ]
        })
        .collect();
    table(
        &mut out,
        &[
            "Class",
            "A W",
            "A H",
            "A Area",
            "B Area",
            "W Ratio",
            "H Ratio",
            "Area Ratio",
        ],
        &rows,
    );
    let _ = writeln!(out, "\nOnly in A: {}", report.unmatched_a.join(", "));
    let _ = writeln!(out, "Only in B: {}", report.unmatched_b.join(", "));
    out
}
