//! IoU and optimal one-to-one detection matching.

use harmony_core::{Annotation, BBox};
use serde::Serialize;

use crate::doc::Element;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Anything with a category and a box.
pub trait Labeled {
    fn category(&self) -> &str;
    fn bbox(&self) -> BBox;
}

impl Labeled for Annotation {
    fn category(&self) -> &str {
        &self.category
    }

    fn bbox(&self) -> BBox {
        self.bbox
    }
}

impl Labeled for Element {
    fn category(&self) -> &str {
        &self.category
    }

    fn bbox(&self) -> BBox {
        self.bbox
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is `n x m` with `n <= m`. Returns the column assigned to each row.
/// Shortest augmenting path with potentials, O(n^2 m).
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= columns");
    // 1-based internals; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Maximum-weight matching where only `feasible` pairs may be matched.
///
/// Returns `(row, col)` pairs. Infeasible entries are never returned.
pub fn max_weight_matching(weight: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    let n = weight.len();
    let m = weight.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let w = |r: usize, c: usize| if transpose { weight[c][r] } else { weight[r][c] };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| (0..cols).map(|c| -w(r, c).unwrap_or(0.0)).collect())
        .collect();
    min_cost_assignment(&cost)
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| w(r, c).is_some())
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub reference: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub matches: Vec<MatchedPair>,
}

impl DetectionResult {
    pub fn true_positives(&self) -> usize {
        self.matches.len()
    }

    pub fn total_iou(&self) -> f64 {
        self.matches.iter().map(|m| m.iou).sum()
    }
}

/// One-to-one matching of same-category pairs with IoU at least `threshold`,
/// maximizing the number of matches and then their total IoU.
///
/// Empty pred and empty ref score 1 throughout; when exactly one side is empty
/// precision and recall are both 0.
pub fn detection_prf<T: Labeled>(pred: &[T], reference: &[T], threshold: f64) -> DetectionResult {
    if pred.is_empty() && reference.is_empty() {
        return DetectionResult {
            precision: 1.0,
            recall: 1.0,
            f: 1.0,
            matches: Vec::new(),
        };
    }
    let mut categories: Vec<&str> = pred.iter().map(Labeled::category).collect();
    categories.sort_unstable();
    categories.dedup();

    let mut matches = Vec::new();
    for cat in categories {
        let pi: Vec<usize> = (0..pred.len()).filter(|&i| pred[i].category() == cat).collect();
        let ri: Vec<usize> = (0..reference.len())
            .filter(|&j| reference[j].category() == cat)
            .collect();
        if ri.is_empty() {
            continue;
        }
        // any extra match outweighs every possible IoU total
        let bonus = pi.len().min(ri.len()) as f64 + 1.0;
        let weight: Vec<Vec<Option<f64>>> = pi
            .iter()
            .map(|&i| {
                ri.iter()
                    .map(|&j| {
                        let v = iou(&pred[i].bbox(), &reference[j].bbox());
                        (v >= threshold && v > 0.0).then_some(bonus + v)
                    })
                    .collect()
            })
            .collect();
        for (a, b) in max_weight_matching(&weight) {
            matches.push(MatchedPair {
                pred: pi[a],
                reference: ri[b],
                iou: iou(&pred[pi[a]].bbox(), &reference[ri[b]].bbox()),
            });
        }
    }
    matches.sort_by_key(|m| m.pred);

    let tp = matches.len() as f64;
    let precision = if pred.is_empty() { 0.0 } else { tp / pred.len() as f64 };
    let recall = if reference.is_empty() {
        0.0
    } else {
        tp / reference.len() as f64
    };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionResult {
        precision,
        recall,
        f,
        matches,
    }
}
