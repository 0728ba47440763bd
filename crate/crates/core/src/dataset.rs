//! Corpus data model and COCO-style annotation file ingestion/emission.
//!
//! A [`LayoutDataset`] is a named list of pages, each a [`PageRecord`] with its
//! annotations. Categories are identified by name; numeric COCO category ids
//! are resolved on load and regenerated (1-based, taxonomy order) on save.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::BBox;
use crate::taxonomy::Taxonomy;

/// Unknown JSON keys carried through a load/save round trip.
pub type Extra = Map<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub bbox: BBox,
    pub category: String,
    pub extra: Extra,
}

impl Annotation {
    pub fn new(id: u64, bbox: BBox, category: impl Into<String>) -> Self {
        Self {
            id,
            bbox,
            category: category.into(),
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub image_id: u64,
    pub file_name: String,
    pub width: f64,
    pub height: f64,
    /// Resolved location of the page image, when known. Not serialized.
    pub image_path: Option<PathBuf>,
    pub annotations: Vec<Annotation>,
    pub extra: Extra,
}

impl PageRecord {
    pub fn new(image_id: u64, file_name: impl Into<String>, width: f64, height: f64) -> Self {
        Self {
            image_id,
            file_name: file_name.into(),
            width,
            height,
            image_path: None,
            annotations: Vec::new(),
            extra: Extra::new(),
        }
    }

    /// Annotation count (M for this page).
    pub fn annotation_count(&self) -> usize {
        self.annotations.len()
    }

    pub fn annotation(&self, id: u64) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDataset {
    pub name: String,
    pub taxonomy: Taxonomy,
    pub pages: Vec<PageRecord>,
    /// Top-level keys other than `images`, `annotations`, `categories`.
    pub extra: Extra,
}

impl LayoutDataset {
    pub fn new(name: impl Into<String>, taxonomy: Taxonomy, pages: Vec<PageRecord>) -> Self {
        Self {
            name: name.into(),
            taxonomy,
            pages,
            extra: Extra::new(),
        }
    }

    pub fn annotation_count(&self) -> usize {
        self.pages.iter().map(PageRecord::annotation_count).sum()
    }

    /// Sets `image_path = root/file_name` on every page.
    pub fn resolve_images(&mut self, root: &Path) {
        for p in &mut self.pages {
            p.image_path = Some(root.join(&p.file_name));
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation file at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{message}: {ids:?}")]
    Structural { message: String, ids: Vec<u64> },
}

impl DatasetError {
    fn structural(message: impl Into<String>, ids: Vec<u64>) -> Self {
        DatasetError::Structural {
            message: message.into(),
            ids,
        }
    }
}

/// Identifies one annotation in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationRef {
    pub image_id: u64,
    pub annotation_id: u64,
}

/// Side effects of normalization performed by [`load_coco`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// Annotations with non-positive width or height (before or after clamping).
    pub dropped_degenerate: Vec<AnnotationRef>,
    /// Annotations whose box was clamped into the page.
    pub clamped: Vec<AnnotationRef>,
    /// Keys that could not be carried through a round trip.
    pub dropped_keys: BTreeSet<String>,
}

#[derive(Deserialize)]
struct RawCoco {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategory>,
    #[serde(flatten)]
    extra: Extra,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    #[serde(default)]
    file_name: String,
    width: f64,
    height: f64,
    #[serde(flatten)]
    extra: Extra,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(flatten)]
    extra: Extra,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
    #[serde(flatten)]
    extra: Extra,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Reads a COCO-style annotation file.
pub fn load_coco(path: &Path, dataset_name: &str) -> Result<(LayoutDataset, LoadReport), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_coco(&text, dataset_name)
}

/// Parses COCO-style JSON text. See [`load_coco`].
pub fn parse_coco(text: &str, dataset_name: &str) -> Result<(LayoutDataset, LoadReport), DatasetError> {
    let raw: RawCoco = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut report = LoadReport::default();

    let mut categories = raw.categories;
    categories.sort_by_key(|c| c.id);
    let mut cat_names: HashMap<u64, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut dup_cat_ids = Vec::new();
    for c in &categories {
        if cat_names.insert(c.id, names.len()).is_some() {
            dup_cat_ids.push(c.id);
        }
        for k in c.extra.keys() {
            report.dropped_keys.insert(format!("categories.{k}"));
        }
        names.push(c.name.clone());
    }
    if !dup_cat_ids.is_empty() {
        return Err(DatasetError::structural("duplicate category ids", dup_cat_ids));
    }
    let taxonomy = Taxonomy::new(names.iter().cloned()).map_err(|e| {
        let ids = categories
            .iter()
            .filter(|c| c.name.is_empty() || names.iter().filter(|n| **n == c.name).count() > 1)
            .map(|c| c.id)
            .collect();
        DatasetError::structural(format!("invalid categories ({e})"), ids)
    })?;

    let mut pages: Vec<PageRecord> = Vec::with_capacity(raw.images.len());
    let mut page_index: HashMap<u64, usize> = HashMap::new();
    let mut dup_images = Vec::new();
    let mut bad_size = Vec::new();
    for img in raw.images {
        if !(img.width > 0.0 && img.height > 0.0 && img.width.is_finite() && img.height.is_finite()) {
            bad_size.push(img.id);
        }
        if page_index.insert(img.id, pages.len()).is_some() {
            dup_images.push(img.id);
        }
        pages.push(PageRecord {
            image_id: img.id,
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            image_path: None,
            annotations: Vec::new(),
            extra: img.extra,
        });
    }
    if !dup_images.is_empty() {
        return Err(DatasetError::structural("duplicate image ids", dup_images));
    }
    if !bad_size.is_empty() {
        return Err(DatasetError::structural("images with non-positive size", bad_size));
    }

    let unknown_image: Vec<u64> = raw
        .annotations
        .iter()
        .filter(|a| !page_index.contains_key(&a.image_id))
        .map(|a| a.id)
        .collect();
    if !unknown_image.is_empty() {
        return Err(DatasetError::structural(
            "annotations reference unknown image ids",
            unknown_image,
        ));
    }
    let unknown_cat: Vec<u64> = raw
        .annotations
        .iter()
        .filter(|a| !cat_names.contains_key(&a.category_id))
        .map(|a| a.id)
        .collect();
    if !unknown_cat.is_empty() {
        return Err(DatasetError::structural(
            "annotations reference unknown category ids",
            unknown_cat,
        ));
    }

    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut dup_ann = Vec::new();
    for a in raw.annotations {
        let page = &mut pages[page_index[&a.image_id]];
        let r = AnnotationRef {
            image_id: a.image_id,
            annotation_id: a.id,
        };
        if !seen.insert((a.image_id, a.id)) {
            dup_ann.push(a.id);
            continue;
        }
        let [x, y, w, h] = a.bbox;
        if !(w > 0.0 && h > 0.0) || !a.bbox.iter().all(|v| v.is_finite()) {
            report.dropped_degenerate.push(r);
            continue;
        }
        let mut bbox = BBox::from_xywh(x, y, w, h);
        if !bbox.within_page(page.width, page.height) {
            bbox = bbox.clamp_to_page(page.width, page.height);
            if bbox.area() <= 0.0 {
                report.dropped_degenerate.push(r);
                continue;
            }
            report.clamped.push(r);
        }
        let mut extra = a.extra;
        // derived from bbox or defaulted, regenerated on save
        extra.remove("area");
        if extra.get("iscrowd").and_then(Value::as_u64) == Some(0) {
            extra.remove("iscrowd");
        }
        page.annotations.push(Annotation {
            id: a.id,
            bbox,
            category: names[cat_names[&a.category_id]].clone(),
            extra,
        });
    }
    if !dup_ann.is_empty() {
        return Err(DatasetError::structural(
            "duplicate annotation ids within a page",
            dup_ann,
        ));
    }

    for k in &report.dropped_keys {
        log::warn!("dropping unsupported key `{k}`");
    }
    if !report.dropped_degenerate.is_empty() {
        log::info!(
            "{}: dropped {} zero-area annotations",
            dataset_name,
            report.dropped_degenerate.len()
        );
    }
    if !report.clamped.is_empty() {
        log::info!("{}: clamped {} out-of-page boxes", dataset_name, report.clamped.len());
    }

    Ok((
        LayoutDataset {
            name: dataset_name.to_string(),
            taxonomy,
            pages,
            extra: raw.extra,
        },
        report,
    ))
}

/// Integral values are written as JSON integers so that files read back by
/// other COCO tooling keep integer sizes.
fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

/// Builds the COCO JSON document for a dataset.
///
/// Category ids are 1..=K in taxonomy order. Annotation ids are kept when they
/// are unique across the whole dataset, otherwise all are renumbered 1..=N in
/// page order.
pub fn to_coco_value(dataset: &LayoutDataset) -> Value {
    let mut global = HashSet::new();
    let keep_ids = dataset
        .pages
        .iter()
        .flat_map(|p| p.annotations.iter())
        .all(|a| global.insert(a.id));

    let images: Vec<Value> = dataset
        .pages
        .iter()
        .map(|p| {
            let mut m = Map::new();
            m.insert("id".into(), Value::from(p.image_id));
            m.insert("file_name".into(), Value::from(p.file_name.clone()));
            m.insert("width".into(), number(p.width));
            m.insert("height".into(), number(p.height));
            for (k, v) in &p.extra {
                m.entry(k.clone()).or_insert_with(|| v.clone());
            }
            Value::Object(m)
        })
        .collect();

    let mut next_id = 1u64;
    let mut annotations = Vec::with_capacity(dataset.annotation_count());
    for p in &dataset.pages {
        for a in &p.annotations {
            let id = if keep_ids { a.id } else { next_id };
            next_id += 1;
            let category_id = dataset
                .taxonomy
                .position(&a.category)
                .map(|i| i as u64 + 1)
                .unwrap_or(0);
            let mut m = Map::new();
            m.insert("id".into(), Value::from(id));
            m.insert("image_id".into(), Value::from(p.image_id));
            m.insert("category_id".into(), Value::from(category_id));
            m.insert(
                "bbox".into(),
                Value::Array(a.bbox.to_xywh().iter().map(|v| number(*v)).collect()),
            );
            m.insert("area".into(), number(a.bbox.area()));
            for (k, v) in &a.extra {
                m.entry(k.clone()).or_insert_with(|| v.clone());
            }
            m.entry("iscrowd").or_insert(Value::from(0));
            annotations.push(Value::Object(m));
        }
    }

    let categories: Vec<Value> = dataset
        .taxonomy
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut m = Map::new();
            m.insert("id".into(), Value::from(i as u64 + 1));
            m.insert("name".into(), Value::from(name));
            Value::Object(m)
        })
        .collect();

    let mut top = Map::new();
    top.insert("images".into(), Value::Array(images));
    top.insert("annotations".into(), Value::Array(annotations));
    top.insert("categories".into(), Value::Array(categories));
    for (k, v) in &dataset.extra {
        top.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Value::Object(top)
}

/// Writes a dataset as COCO-style JSON.
pub fn save_coco(dataset: &LayoutDataset, path: &Path) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(&to_coco_value(dataset)).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    InvalidPageSize,
    DuplicatePageId,
    DuplicateAnnotationId,
    NonFiniteBox,
    InvertedBox,
    ZeroArea,
    OutOfPage,
    EmptyCategory,
    UnknownCategory { category: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub image_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<u64>,
    #[serde(flatten)]
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&IssueKind) -> bool) -> usize {
        self.issues.iter().filter(|i| pred(&i.kind)).count()
    }
}

/// Lists every invariant violation in the dataset. Pure.
pub fn validate(dataset: &LayoutDataset) -> ValidationReport {
    let mut issues = Vec::new();
    let mut page_ids = BTreeMap::<u64, usize>::new();
    for p in &dataset.pages {
        *page_ids.entry(p.image_id).or_default() += 1;
    }
    for (&id, &n) in &page_ids {
        if n > 1 {
            issues.push(Issue {
                image_id: id,
                annotation_id: None,
                kind: IssueKind::DuplicatePageId,
            });
        }
    }

    for p in &dataset.pages {
        let issue = |annotation_id: Option<u64>, kind: IssueKind| Issue {
            image_id: p.image_id,
            annotation_id,
            kind,
        };
        if !(p.width > 0.0 && p.height > 0.0 && p.width.is_finite() && p.height.is_finite()) {
            issues.push(issue(None, IssueKind::InvalidPageSize));
        }
        let mut ann_ids = BTreeMap::<u64, usize>::new();
        for a in &p.annotations {
            *ann_ids.entry(a.id).or_default() += 1;
        }
        for (&id, &n) in &ann_ids {
            if n > 1 {
                issues.push(issue(Some(id), IssueKind::DuplicateAnnotationId));
            }
        }
        for a in &p.annotations {
            let b = &a.bbox;
            if !b.is_finite() {
                issues.push(issue(Some(a.id), IssueKind::NonFiniteBox));
            } else if b.x0 > b.x1 || b.y0 > b.y1 {
                issues.push(issue(Some(a.id), IssueKind::InvertedBox));
            } else {
                if b.area() <= 0.0 {
                    issues.push(issue(Some(a.id), IssueKind::ZeroArea));
                }
                if !b.within_page(p.width, p.height) {
                    issues.push(issue(Some(a.id), IssueKind::OutOfPage));
                }
            }
            if a.category.is_empty() {
                issues.push(issue(Some(a.id), IssueKind::EmptyCategory));
            } else if !dataset.taxonomy.contains(&a.category) {
                issues.push(issue(
                    Some(a.id),
                    IssueKind::UnknownCategory {
                        category: a.category.clone(),
                    },
                ));
            }
        }
    }
    ValidationReport { issues }
}
