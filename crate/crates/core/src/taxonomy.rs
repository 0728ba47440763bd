//! Label spaces, many-to-one category mappings, and dataset remapping.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, LayoutDataset};

/// Name the builtin mappings use to refer to the 17-category target label space.
pub const TARGET_TAXONOMY_NAME: &str = "target17";

const TARGET_TAXONOMY_JSON: &str = include_str!("../data/target_taxonomy.json");
const HERON_TAXONOMY_JSON: &str = include_str!("../data/heron_taxonomy.json");
const HERON_TO_TARGET_JSON: &str = include_str!("../data/heron_to_target.json");
const UNSTRUCTURED_TO_TARGET_JSON: &str = include_str!("../data/unstructured_to_target.json");
const DOCLAYNET_TO_TARGET_JSON: &str = include_str!("../data/doclaynet_to_target.json");
const DOCLAYNET_TO_UNSTRUCTURED_JSON: &str = include_str!("../data/doclaynet_to_unstructured.json");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy contains an empty category name")]
    EmptyName,
    #[error("taxonomy lists category {0:?} more than once")]
    Duplicate(String),
}

/// Ordered set of category names. Order defines numeric ids on save (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Taxonomy(Vec<String>);

impl TryFrom<Vec<String>> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Taxonomy::new(names)
    }
}

impl From<Taxonomy> for Vec<String> {
    fn from(t: Taxonomy) -> Self {
        t.0
    }
}

impl Taxonomy {
    pub fn new<I, S>(names: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for name in names {
            let name = name.into();
            if name.is_empty() {
                return Err(TaxonomyError::EmptyName);
            }
            if out.contains(&name) {
                return Err(TaxonomyError::Duplicate(name));
            }
            out.push(name);
        }
        Ok(Taxonomy(out))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|n| n == name)
    }

    /// Zero-based position; the saved COCO id is `position + 1`.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Appends `name` if absent. Used when assembling a taxonomy from data.
    pub fn insert(&mut self, name: &str) -> Result<(), TaxonomyError> {
        if name.is_empty() {
            return Err(TaxonomyError::EmptyName);
        }
        if !self.contains(name) {
            self.0.push(name.to_string());
        }
        Ok(())
    }
}

/// What to do with a category that has no mapping entry.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmappedPolicy {
    #[default]
    Error,
    Drop,
    MapTo(String),
}

/// Many-to-one correspondence between a source and a target label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyMapping {
    pub source: String,
    pub target: String,
    #[serde(deserialize_with = "unique_entries")]
    pub entries: BTreeMap<String, String>,
    #[serde(default)]
    pub unmapped_policy: UnmappedPolicy,
}

/// Result of mapping a single label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapped<'a> {
    To(&'a str),
    Dropped,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RemapError {
    #[error("category {category:?} has no entry in mapping {mapping:?} and the unmapped policy is `error`")]
    Unmapped { mapping: String, category: String },
    #[error("mapping {mapping:?} targets {category:?}, which is not in the target taxonomy")]
    UnknownTarget { mapping: String, category: String },
    #[error("invalid mapping file: {0}")]
    Invalid(String),
}

impl TaxonomyMapping {
    /// Maps every category of `taxonomy` to itself.
    pub fn identity(name: &str, taxonomy: &Taxonomy) -> Self {
        TaxonomyMapping {
            source: name.to_string(),
            target: name.to_string(),
            entries: taxonomy.iter().map(|c| (c.to_string(), c.to_string())).collect(),
            unmapped_policy: UnmappedPolicy::Error,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RemapError> {
        serde_json::from_str(text).map_err(|e| RemapError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RemapError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RemapError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn map_label(&self, label: &str) -> Result<Mapped<'_>, RemapError> {
        if let Some(t) = self.entries.get(label) {
            return Ok(Mapped::To(t));
        }
        match &self.unmapped_policy {
            UnmappedPolicy::Error => Err(RemapError::Unmapped {
                mapping: self.name(),
                category: label.to_string(),
            }),
            UnmappedPolicy::Drop => Ok(Mapped::Dropped),
            UnmappedPolicy::MapTo(t) => Ok(Mapped::To(t)),
        }
    }

    /// Every entry target (and the `map_to` fallback) must be in `target`.
    pub fn check_targets(&self, target: &Taxonomy) -> Result<(), RemapError> {
        let fallback = match &self.unmapped_policy {
            UnmappedPolicy::MapTo(t) => Some(t),
            _ => None,
        };
        for t in self.entries.values().chain(fallback) {
            if !target.contains(t) {
                return Err(RemapError::UnknownTarget {
                    mapping: self.name(),
                    category: t.clone(),
                });
            }
        }
        Ok(())
    }

    /// Distinct target categories in entry order of first appearance by source name.
    pub fn image(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in self.entries.values() {
            if !out.contains(&t.as_str()) {
                out.push(t);
            }
        }
        out
    }

    fn name(&self) -> String {
        format!("{}->{}", self.source, self.target)
    }
}

fn unique_entries<'de, D>(d: D) -> Result<BTreeMap<String, String>, D::Error>
where
    D: Deserializer<'de>,
{
    struct EntriesVisitor;

    impl<'de> Visitor<'de> for EntriesVisitor {
        type Value = BTreeMap<String, String>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object mapping source category names to target category names")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = access.next_entry::<String, String>()? {
                if out.insert(k.clone(), v).is_some() {
                    return Err(serde::de::Error::custom(format!(
                        "source category {k:?} is mapped more than once"
                    )));
                }
            }
            Ok(out)
        }
    }

    d.deserialize_map(EntriesVisitor)
}

/// Per (source, target) counts produced by [`remap_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RemapReport {
    pub pairs: Vec<PairCount>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairCount {
    pub source: String,
    pub target: String,
    pub count: usize,
}

/// The 17-category target label space.
pub fn builtin_target_taxonomy() -> Taxonomy {
    serde_json::from_str(TARGET_TAXONOMY_JSON).expect("bundled target taxonomy is valid")
}

/// The 17 canonical categories of the Heron base detector.
pub fn builtin_heron_taxonomy() -> Taxonomy {
    serde_json::from_str(HERON_TAXONOMY_JSON).expect("bundled heron taxonomy is valid")
}

/// Heron categories into the target label space.
pub fn builtin_heron_remap() -> TaxonomyMapping {
    TaxonomyMapping::from_json(HERON_TO_TARGET_JSON).expect("bundled heron mapping is valid")
}

/// Unstructured categories into the target label space; radio buttons go to `other`.
pub fn builtin_unstructured_remap() -> TaxonomyMapping {
    TaxonomyMapping::from_json(UNSTRUCTURED_TO_TARGET_JSON).expect("bundled mapping is valid")
}

/// DocLayNet categories into the target label space.
pub fn builtin_doclaynet_remap() -> TaxonomyMapping {
    TaxonomyMapping::from_json(DOCLAYNET_TO_TARGET_JSON).expect("bundled mapping is valid")
}

/// Cross-dataset correspondence of the eight directly matching categories
/// (DocLayNet name to Unstructured name). Categories without a counterpart are dropped.
pub fn builtin_doclaynet_unstructured_correspondence() -> TaxonomyMapping {
    TaxonomyMapping::from_json(DOCLAYNET_TO_UNSTRUCTURED_JSON).expect("bundled mapping is valid")
}

/// Looks up a builtin mapping by short name (`heron`, `unstructured`, `doclaynet`).
pub fn builtin_mapping(name: &str) -> Option<TaxonomyMapping> {
    match name {
        "heron" => Some(builtin_heron_remap()),
        "unstructured" => Some(builtin_unstructured_remap()),
        "doclaynet" => Some(builtin_doclaynet_remap()),
        "doclaynet-unstructured" => Some(builtin_doclaynet_unstructured_correspondence()),
        _ => None,
    }
}

/// Replaces every annotation category according to `mapping`. Geometry and ids
/// are untouched. The output dataset carries `target` as its taxonomy.
pub fn remap_dataset(
    dataset: &LayoutDataset,
    mapping: &TaxonomyMapping,
    target: &Taxonomy,
) -> Result<(LayoutDataset, RemapReport), RemapError> {
    mapping.check_targets(target)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut pages = Vec::with_capacity(dataset.pages.len());
    for page in &dataset.pages {
        let mut out = page.clone();
        out.annotations = Vec::with_capacity(page.annotations.len());
        for ann in &page.annotations {
            match mapping.map_label(&ann.category)? {
                Mapped::To(t) => {
                    if !target.contains(t) {
                        return Err(RemapError::UnknownTarget {
                            mapping: mapping.name(),
                            category: t.to_string(),
                        });
                    }
                    *counts.entry((ann.category.clone(), t.to_string())).or_default() += 1;
                    out.annotations.push(Annotation {
                        category: t.to_string(),
                        ..ann.clone()
                    });
                }
                Mapped::Dropped => dropped += 1,
            }
        }
        pages.push(out);
    }
    let report = RemapReport {
        pairs: counts
            .into_iter()
            .map(|((source, target), count)| PairCount { source, target, count })
            .collect(),
        dropped,
    };
    Ok((
        LayoutDataset {
            name: dataset.name.clone(),
            taxonomy: target.clone(),
            pages,
            extra: dataset.extra.clone(),
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PageRecord;
    use crate::geometry::BBox;

    fn page(anns: &[(u64, &str)]) -> PageRecord {
        let mut p = PageRecord::new(1, "p.png", 100.0, 100.0);
        for (i, (id, cat)) in anns.iter().enumerate() {
            let y = i as f64 * 10.0;
            p.annotations
                .push(Annotation::new(*id, BBox::new(0.0, y, 10.0, y + 5.0), *cat));
        }
        p
    }

    #[test]
    fn target_taxonomy_contents() {
        let t = builtin_target_taxonomy();
        assert_eq!(t.len(), 17);
        assert!(t.contains("figure_caption"));
        assert!(t.contains("list_item"));
        assert!(t.contains("paragraph"));
        assert!(!t.contains("Footnote"));
        assert_eq!(t.names()[0], "paragraph");
        assert_eq!(t.names()[16], "other");
    }

    #[test]
    fn taxonomy_rejects_duplicates_and_empty() {
        assert_eq!(Taxonomy::new(["a", "a"]), Err(TaxonomyError::Duplicate("a".into())));
        assert_eq!(Taxonomy::new([""]), Err(TaxonomyError::EmptyName));
        assert!(serde_json::from_str::<Taxonomy>(r#"["x","x"]"#).is_err());
    }

    #[test]
    fn heron_remap_examples() {
        let m = builtin_heron_remap();
        assert_eq!(m.map_label("Text").unwrap(), Mapped::To("paragraph"));
        assert_eq!(m.map_label("Document Index").unwrap(), Mapped::To("other"));
        assert_eq!(m.map_label("Footnote").unwrap(), Mapped::To("other"));
        assert_eq!(m.map_label("Key-Value Region").unwrap(), Mapped::To("form_key_values"));
        assert!(m.check_targets(&builtin_target_taxonomy()).is_ok());
        let heron = builtin_heron_taxonomy();
        assert_eq!(heron.len(), 17);
        for c in heron.iter() {
            assert!(m.entries.contains_key(c), "{c} not covered");
        }
        assert_eq!(m.entries.len(), 17);
    }

    /// Token-overlap similarity between category names, used as an
    /// independent check that the non-obvious Heron entries pick the only
    /// lexically related target.
    fn name_tokens(name: &str) -> Vec<String> {
        name.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.trim_end_matches('s').to_string())
            .collect()
    }

    fn jaccard(a: &str, b: &str) -> f64 {
        let ta = name_tokens(a);
        let tb = name_tokens(b);
        let inter = ta.iter().filter(|t| tb.contains(t)).count() as f64;
        let union = (ta.len() + tb.len()) as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    #[test]
    fn key_value_region_matches_name_similarity_oracle() {
        let target = builtin_target_taxonomy();
        let scores: Vec<(f64, &str)> = target.iter().map(|t| (jaccard("Key-Value Region", t), t)).collect();
        let best = scores
            .iter()
            .cloned()
            .fold((f64::MIN, ""), |acc, s| if s.0 > acc.0 { s } else { acc });
        assert_eq!(best.1, "form_key_values");
        assert!(best.0 > 0.0);
        assert_eq!(
            scores.iter().filter(|s| s.0 == best.0).count(),
            1,
            "argmax must be unique"
        );
        let m = builtin_heron_remap();
        assert_eq!(m.entries["Key-Value Region"], best.1);
    }

    #[test]
    fn unstructured_radio_buttons_go_to_other() {
        let m = builtin_unstructured_remap();
        assert_eq!(m.entries.len(), 16);
        assert_eq!(m.map_label("radio_button").unwrap(), Mapped::To("other"));
        assert_eq!(m.map_label("radio_button_checked").unwrap(), Mapped::To("other"));
        assert!(m.check_targets(&builtin_target_taxonomy()).is_ok());
        assert!(builtin_doclaynet_remap()
            .check_targets(&builtin_target_taxonomy())
            .is_ok());
        assert_eq!(builtin_doclaynet_unstructured_correspondence().entries.len(), 8);
    }

    #[test]
    fn remap_doclaynet_section_header() {
        let ds = LayoutDataset::new(
            "dln",
            Taxonomy::new(["Section-header", "Text"]).unwrap(),
            vec![page(&[(1, "Section-header"), (2, "Text")])],
        );
        let (out, report) = remap_dataset(&ds, &builtin_doclaynet_remap(), &builtin_target_taxonomy()).unwrap();
        assert_eq!(out.pages[0].annotations[0].category, "subheading");
        assert_eq!(out.pages[0].annotations[1].category, "paragraph");
        assert_eq!(out.pages[0].annotations[0].bbox, ds.pages[0].annotations[0].bbox);
        assert_eq!(report.pairs.len(), 2);
        assert_eq!(out.taxonomy, builtin_target_taxonomy());
    }

    #[test]
    fn remap_unmapped_policies() {
        let tax = Taxonomy::new(["Footnote", "Mystery"]).unwrap();
        let ds = LayoutDataset::new("h", tax, vec![page(&[(1, "Footnote"), (2, "Mystery")])]);
        let target = builtin_target_taxonomy();
        let mut m = TaxonomyMapping {
            source: "h".into(),
            target: TARGET_TAXONOMY_NAME.into(),
            entries: BTreeMap::new(),
            unmapped_policy: UnmappedPolicy::Error,
        };
        let err = remap_dataset(&ds, &m, &target).unwrap_err();
        assert!(matches!(err, RemapError::Unmapped { ref category, .. } if category == "Footnote"));

        m.unmapped_policy = UnmappedPolicy::MapTo("other".into());
        let (out, _) = remap_dataset(&ds, &m, &target).unwrap();
        assert!(out.pages[0].annotations.iter().all(|a| a.category == "other"));

        m.unmapped_policy = UnmappedPolicy::Drop;
        let (out, report) = remap_dataset(&ds, &m, &target).unwrap();
        assert!(out.pages[0].annotations.is_empty());
        assert_eq!(report.dropped, 2);

        m.unmapped_policy = UnmappedPolicy::MapTo("nope".into());
        assert!(matches!(
            remap_dataset(&ds, &m, &target),
            Err(RemapError::UnknownTarget { .. })
        ));
    }

    #[test]
    fn identity_remap_is_noop_and_idempotent() {
        let tax = Taxonomy::new(["a", "b"]).unwrap();
        let ds = LayoutDataset::new("x", tax.clone(), vec![page(&[(1, "a"), (2, "b"), (3, "a")])]);
        let id = TaxonomyMapping::identity("x", &tax);
        let (once, _) = remap_dataset(&ds, &id, &tax).unwrap();
        assert_eq!(once, ds);
        let (twice, _) = remap_dataset(&once, &id, &tax).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn mapping_json_schema() {
        let m = TaxonomyMapping::from_json(
            r#"{"source":"s","target":"t","entries":{"A":"x"},"unmapped_policy":{"map_to":"other"}}"#,
        )
        .unwrap();
        assert_eq!(m.unmapped_policy, UnmappedPolicy::MapTo("other".into()));
        let m = TaxonomyMapping::from_json(r#"{"source":"s","target":"t","entries":{}}"#).unwrap();
        assert_eq!(m.unmapped_policy, UnmappedPolicy::Error);
        assert!(TaxonomyMapping::from_json(r#"{"source":"s","target":"t","entries":{"A":"x","A":"y"}}"#).is_err());
    }
}
