//! Embedding records and their JSONL form.

use std::collections::BTreeMap;
use std::path::Path;

use harmony_core::taxonomy::{Mapped, TaxonomyMapping};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::RepGeomError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub page_id: String,
    pub label: String,
    pub vector: Vec<f64>,
    /// Precomputed 2D coordinates, when supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xy: Option<(f64, f64)>,
}

impl EmbeddingRecord {
    pub fn new(id: u64, page_id: impl Into<String>, label: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            id,
            page_id: page_id.into(),
            label: label.into(),
            vector,
            xy: None,
        }
    }
}

/// Records sharing one dimension `dim >= 2`, all finite.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self, RepGeomError> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        for (i, r) in records.iter().enumerate() {
            check_vector(i + 1, dim, &r.vector)?;
        }
        Ok(Self { dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct labels, sorted.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.label.clone()).collect();
        c.sort();
        c.dedup();
        c
    }
}

fn check_vector(line: usize, dim: usize, v: &[f64]) -> Result<(), RepGeomError> {
    if v.len() != dim {
        return Err(RepGeomError::Dimension {
            line,
            expected: dim,
            found: v.len(),
        });
    }
    if v.len() < 2 {
        return Err(RepGeomError::InvalidRecord {
            line,
            message: format!("vector dimension {} is below 2", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RepGeomError::InvalidRecord {
            line,
            message: "vector has non-finite values".into(),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    id: u64,
    #[serde(default)]
    page_id: Value,
    label: String,
    vector: Vec<f64>,
    x: Option<f64>,
    y: Option<f64>,
}

/// Parses JSONL `{id, page_id, label, vector, x?, y?}` rows, optionally
/// remapping labels. Rows whose label maps to a drop are skipped.
pub fn parse_embeddings(text: &str, remap: Option<&TaxonomyMapping>) -> Result<EmbeddingSet, RepGeomError> {
    let mut records = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| RepGeomError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let d = *dim.get_or_insert(raw.vector.len());
        check_vector(line_no, d, &raw.vector)?;
        let label = match remap {
            Some(m) => match m
                .map_label(&raw.label)
                .map_err(|source| RepGeomError::Remap { line: line_no, source })?
            {
                Mapped::To(t) => t.to_string(),
                Mapped::Dropped => continue,
            },
            None => raw.label,
        };
        let page_id = match raw.page_id {
            Value::String(s) => s,
            Value::Null => String::new(),
            other => other.to_string(),
        };
        let xy = match (raw.x, raw.y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => {
                return Err(RepGeomError::InvalidRecord {
                    line: line_no,
                    message: "x and y must be given together".into(),
                })
            }
        };
        records.push(EmbeddingRecord {
            id: raw.id,
            page_id,
            label,
            vector: raw.vector,
            xy,
        });
    }
    Ok(EmbeddingSet {
        dim: dim.unwrap_or(0),
        records,
    })
}

pub fn load_embeddings(path: &Path, remap: Option<&TaxonomyMapping>) -> Result<EmbeddingSet, RepGeomError> {
    let text = std::fs::read_to_string(path).map_err(|source| RepGeomError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(&text, remap)
}

/// Keeps at most `cap` records per class, chosen uniformly with a seeded
/// generator. Input order is preserved.
pub fn subsample(set: &EmbeddingSet, cap: usize, seed: u64) -> EmbeddingSet {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in set.records.iter().enumerate() {
        by_class.entry(r.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; set.len()];
    for idx in by_class.values() {
        if idx.len() <= cap {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            for k in sample(&mut rng, idx.len(), cap) {
                keep[idx[k]] = true;
            }
        }
    }
    EmbeddingSet {
        dim: set.dim,
        records: set
            .records
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(r, _)| r.clone())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_rows() {
        let text = r#"{"id": 1, "page_id": 9, "label": "Text", "vector": [1, 2, 3, 4]}
{"id": 2, "page_id": "p", "label": "Text", "vector": [1, 2, 3, 5]}
{"id": 3, "page_id": "p", "label": "Table", "vector": [0, 0, 0, 0], "x": 1.5, "y": -2}"#;
        let s = parse_embeddings(text, None).unwrap();
        assert_eq!((s.len(), s.dim), (3, 4));
        assert_eq!(s.records[0].page_id, "9");
        assert_eq!(s.records[2].xy, Some((1.5, -2.0)));
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let text = "{\"id\": 1, \"label\": \"a\", \"vector\": [1, 2, 3, 4]}\n{\"id\": 2, \"label\": \"a\", \"vector\": [1, 2, 3, 4, 5]}";
        let err = parse_embeddings(text, None).unwrap_err();
        assert!(matches!(
            err,
            RepGeomError::Dimension {
                line: 2,
                expected: 4,
                found: 5
            }
        ));
    }

    #[test]
    fn heron_remap_sends_footnote_to_other() {
        let text = "{\"id\": 1, \"label\": \"Footnote\", \"vector\": [1, 2]}\n{\"id\": 2, \"label\": \"Document Index\", \"vector\": [3, 2]}";
        let m = harmony_core::taxonomy::builtin_heron_remap();
        let s = parse_embeddings(text, Some(&m)).unwrap();
        assert!(s.records.iter().all(|r| r.label == "other"));
    }

    #[test]
    fn subsample_is_seeded() {
        let records = (0..50)
            .map(|i| EmbeddingRecord::new(i, "p", if i % 2 == 0 { "a" } else { "b" }, vec![i as f64, 0.0]))
            .collect();
        let s = EmbeddingSet::new(records).unwrap();
        let a = subsample(&s, 5, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample(&s, 5, 7));
        assert_eq!(subsample(&s, 100, 7), s);
    }
}
