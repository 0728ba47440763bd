//! Geometry of exported detector embeddings: how compact and separated each
//! class is (silhouette), how pure each point's neighborhood is (kNN purity),
//! and a deterministic 2D projection for plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harmony_core::taxonomy::{Mapped, RemapError, TaxonomyMapping};
use thiserror::Error;

pub mod embed;
pub mod plot;

pub use embed::{load_embeddings, parse_embeddings, subsample, EmbeddingRecord, EmbeddingSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Error)]
pub enum RepGeomError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: vector has dimension {found}, expected {expected}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("line {line}: {source}")]
    Remap {
        line: usize,
        #[source]
        source: RemapError,
    },
    #[error("empty embedding set")]
    Empty,
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Mean silhouette per class with Euclidean distance.
///
/// Singleton classes score 0, as does any point whose intra- and
/// nearest-other-class mean distances are both 0.
pub fn silhouette_per_class(set: &EmbeddingSet) -> Result<BTreeMap<String, f64>, RepGeomError> {
    let classes = set.classes();
    if classes.len() < 2 {
        return Err(RepGeomError::Degenerate(format!(
            "silhouette needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let class_of: Vec<usize> = set
        .records
        .iter()
        .map(|r| classes.binary_search(&r.label).expect("label is a class"))
        .collect();
    let sizes: Vec<usize> = (0..classes.len())
        .map(|c| class_of.iter().filter(|&&k| k == c).count())
        .collect();

    let scores: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let own = class_of[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; classes.len()];
            for j in 0..set.len() {
                if j != i {
                    sums[class_of[j]] += euclidean(&set.records[i].vector, &set.records[j].vector);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..classes.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();

    let mut out = BTreeMap::new();
    for (c, name) in classes.iter().enumerate() {
        let mine: Vec<f64> = (0..set.len())
            .filter(|&i| class_of[i] == c)
            .map(|i| scores[i])
            .collect();
        out.insert(name.clone(), mine.iter().sum::<f64>() / mine.len() as f64);
    }
    Ok(out)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    pub k_requested: usize,
    /// `min(k, N - 1)`.
    pub k_effective: usize,
    pub mean: f64,
    pub per_class: BTreeMap<String, f64>,
}

/// Fraction of same-class points among each point's `min(k, N-1)` nearest
/// neighbors, ties broken by ascending record id.
pub fn neighborhood_purity(set: &EmbeddingSet, k: usize) -> Result<Purity, RepGeomError> {
    if set.is_empty() {
        return Err(RepGeomError::Empty);
    }
    if set.len() < 2 {
        return Err(RepGeomError::Degenerate("purity needs at least 2 points".into()));
    }
    if k == 0 {
        return Err(RepGeomError::Degenerate("k must be at least 1".into()));
    }
    let kk = k.min(set.len() - 1);
    let per_point: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let me = &set.records[i];
            let mut others: Vec<(f64, u64, usize)> = set
                .records
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, r)| (euclidean(&me.vector, &r.vector), r.id, j))
                .collect();
            others.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let same = others[..kk]
                .iter()
                .filter(|o| set.records[o.2].label == me.label)
                .count();
            same as f64 / kk as f64
        })
        .collect();

    let mut per_class = BTreeMap::new();
    for c in set.classes() {
        let v: Vec<f64> = (0..set.len())
            .filter(|&i| set.records[i].label == c)
            .map(|i| per_point[i])
            .collect();
        per_class.insert(c, v.iter().sum::<f64>() / v.len() as f64);
    }
    Ok(Purity {
        k_requested: k,
        k_effective: kk,
        mean: per_point.iter().sum::<f64>() / per_point.len() as f64,
        per_class,
    })
}

/// Principal-component projection onto the top two variance directions.
///
/// Data is mean-centered first. Each axis is oriented so that its
/// largest-magnitude loading is positive (the first such loading on ties).
pub fn project_2d(set: &EmbeddingSet) -> Result<Vec<(f64, f64)>, RepGeomError> {
    let n = set.len();
    let d = set.dim;
    if n < 2 || d < 2 {
        return Err(RepGeomError::Degenerate(format!(
            "projection needs at least 2 points in at least 2 dimensions (got {n} x {d})"
        )));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| set.records[i].vector[j]);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        for i in 0..n {
            x[(i, j)] -= mean;
        }
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if top <= 1e-12 * scale || top <= 0.0 {
        return Err(RepGeomError::Degenerate("all points coincide (zero variance)".into()));
    }

    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, val)| if val.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter().map(|a| -a).collect()
            } else {
                v
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(r, w)| r * w).sum::<f64>();
            (p(&axes[0]), p(&axes[1]))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub k_requested: usize,
    pub k_effective: usize,
    pub distance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_cap: Option<usize>,
    pub seed: u64,
    /// `pca` or `precomputed`.
    pub projection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: u64,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub n_records: usize,
    pub dim: usize,
    pub params: GeometryParams,
    pub silhouette: BTreeMap<String, f64>,
    pub mean_purity: f64,
    pub purity_per_class: BTreeMap<String, f64>,
    pub points: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometryOptions {
    pub k: usize,
    /// Per-class cap applied by seeded uniform subsampling.
    pub sample_cap: Option<usize>,
    pub seed: u64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            k: 100,
            sample_cap: None,
            seed: 0,
        }
    }
}

/// Silhouette, purity and projection in one report. Precomputed `x, y`
/// coordinates are used when every record carries them.
pub fn analyze(set: &EmbeddingSet, opts: GeometryOptions) -> Result<GeometryReport, RepGeomError> {
    let sampled;
    let set = match opts.sample_cap {
        Some(cap) => {
            sampled = subsample(set, cap, opts.seed);
            &sampled
        }
        None => set,
    };
    let silhouette = silhouette_per_class(set)?;
    let purity = neighborhood_purity(set, opts.k)?;
    let precomputed = set.records.iter().all(|r| r.xy.is_some());
    let coords = if precomputed {
        set.records.iter().map(|r| r.xy.expect("checked above")).collect()
    } else {
        project_2d(set)?
    };
    Ok(GeometryReport {
        n_records: set.len(),
        dim: set.dim,
        params: GeometryParams {
            k_requested: opts.k,
            k_effective: purity.k_effective,
            distance: "euclidean".into(),
            sample_cap: opts.sample_cap,
            seed: opts.seed,
            projection: if precomputed { "precomputed" } else { "pca" }.into(),
        },
        silhouette,
        mean_purity: purity.mean,
        purity_per_class: purity.per_class,
        points: set
            .records
            .iter()
            .zip(coords)
            .map(|(r, (x, y))| ProjectedPoint {
                id: r.id,
                label: r.label.clone(),
                x,
                y,
            })
            .collect(),
    })
}

/// Applies a label mapping; records whose label maps to a drop are removed.
pub fn remap_labels(set: &EmbeddingSet, mapping: &TaxonomyMapping) -> Result<EmbeddingSet, RepGeomError> {
    let mut out = EmbeddingSet {
        dim: set.dim,
        records: Vec::with_capacity(set.len()),
    };
    for (i, r) in set.records.iter().enumerate() {
        match mapping
            .map_label(&r.label)
            .map_err(|source| RepGeomError::Remap { line: i + 1, source })?
        {
            Mapped::To(t) => out.records.push(EmbeddingRecord {
                label: t.to_string(),
                ..r.clone()
            }),
            Mapped::Dropped => {}
        }
    }
    Ok(out)
}

pub fn read_report(path: &Path) -> Result<GeometryReport, RepGeomError> {
    let text = std::fs::read_to_string(path).map_err(|source| RepGeomError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RepGeomError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
