//! Reference implementations for cross-checking the production kernels.
//!
//! Everything here is written for obviousness rather than speed: full
//! dynamic-programming tables, exhaustive enumeration, and all-pairs loops.
//! Nothing in this crate calls into the code it checks.

use harmony_core::BBox;

/// Intersection over union from first principles.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let area = |r: &BBox| (r.x1 - r.x0) * (r.y1 - r.y0);
    inter / (area(a) + area(b) - inter)
}

/// Edit distance from the full `(n+1) x (m+1)` table.
pub fn levenshtein_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Best one-to-one matching by exhaustive search over every injection.
///
/// Returns `(match count, total IoU)` for the lexicographically best matching
/// among same-category pairs with IoU at least `threshold`.
pub fn brute_force_matching(pred: &[(String, BBox)], reference: &[(String, BBox)], threshold: f64) -> (usize, f64) {
    fn go(
        i: usize,
        pred: &[(String, BBox)],
        reference: &[(String, BBox)],
        threshold: f64,
        used: &mut Vec<bool>,
        acc: (usize, f64),
        best: &mut (usize, f64),
    ) {
        if i == pred.len() {
            if acc.0 > best.0 || (acc.0 == best.0 && acc.1 > best.1) {
                *best = acc;
            }
            return;
        }
        go(i + 1, pred, reference, threshold, used, acc, best);
        for j in 0..reference.len() {
            if used[j] || pred[i].0 != reference[j].0 {
                continue;
            }
            let v = iou(&pred[i].1, &reference[j].1);
            if v >= threshold && v > 0.0 {
                used[j] = true;
                go(i + 1, pred, reference, threshold, used, (acc.0 + 1, acc.1 + v), best);
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(
        0,
        pred,
        reference,
        threshold,
        &mut vec![false; reference.len()],
        (0, 0.0),
        &mut best,
    );
    best
}

/// Ordered tree for the edit-distance oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OTree<L> {
    pub label: L,
    pub children: Vec<OTree<L>>,
}

impl<L> OTree<L> {
    pub fn new(label: L, children: Vec<OTree<L>>) -> Self {
        Self { label, children }
    }
}

struct Post<'a, L> {
    labels: Vec<&'a L>,
    /// `anc[i][k]`: node `i` is a proper ancestor of node `k`.
    anc: Vec<Vec<bool>>,
}

fn postorder<L>(t: &OTree<L>) -> Post<'_, L> {
    fn walk<'a, L>(t: &'a OTree<L>, labels: &mut Vec<&'a L>, parents: &mut Vec<Option<usize>>) -> usize {
        let kids: Vec<usize> = t.children.iter().map(|c| walk(c, labels, parents)).collect();
        let me = labels.len();
        labels.push(&t.label);
        parents.push(None);
        for k in kids {
            parents[k] = Some(me);
        }
        me
    }
    let mut labels = Vec::new();
    let mut parents = Vec::new();
    walk(t, &mut labels, &mut parents);
    let n = labels.len();
    let mut anc = vec![vec![false; n]; n];
    for (k, _) in parents.iter().enumerate() {
        let mut p = parents[k];
        while let Some(i) = p {
            anc[i][k] = true;
            p = parents[i];
        }
    }
    Post { labels, anc }
}

/// Tree edit distance as the cheapest valid mapping, found by enumerating every
/// ancestor- and order-preserving partial one-to-one map between the nodes.
/// Unit insert/delete costs. Exponential; keep trees to a handful of nodes.
pub fn mapping_ted<L>(a: &OTree<L>, b: &OTree<L>, rename: &dyn Fn(&L, &L) -> f64) -> f64 {
    let pa = postorder(a);
    let pb = postorder(b);
    let (n, m) = (pa.labels.len(), pb.labels.len());

    fn go<L>(
        i: usize,
        pa: &Post<L>,
        pb: &Post<L>,
        pairs: &mut Vec<(usize, usize)>,
        cost: f64,
        rename: &dyn Fn(&L, &L) -> f64,
        best: &mut f64,
    ) {
        let (n, m) = (pa.labels.len(), pb.labels.len());
        if i == n {
            let k = pairs.len();
            let total = cost + (n - k) as f64 + (m - k) as f64;
            if total < *best {
                *best = total;
            }
            return;
        }
        go(i + 1, pa, pb, pairs, cost, rename, best);
        let start = pairs.last().map_or(0, |p| p.1 + 1);
        for j in start..m {
            let ok = pairs
                .iter()
                .all(|&(i2, j2)| pa.anc[i][i2] == pb.anc[j][j2] && pa.anc[i2][i] == pb.anc[j2][j]);
            if ok {
                pairs.push((i, j));
                go(
                    i + 1,
                    pa,
                    pb,
                    pairs,
                    cost + rename(pa.labels[i], pb.labels[j]),
                    rename,
                    best,
                );
                pairs.pop();
            }
        }
    }
    let mut best = (n + m) as f64;
    go(0, &pa, &pb, &mut Vec::new(), 0.0, rename, &mut best);
    best
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Silhouette per class straight from the definition. Returns `(label, score)`
/// sorted by label.
pub fn silhouette_direct(points: &[Vec<f64>], labels: &[String]) -> Vec<(String, f64)> {
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let mut out = Vec::new();
    for c in &classes {
        let members: Vec<usize> = (0..points.len()).filter(|&i| &labels[i] == c).collect();
        if members.len() == 1 {
            out.push((c.clone(), 0.0));
            continue;
        }
        let mut total = 0.0;
        for &i in &members {
            let mean_to = |cls: &String, skip_self: bool| {
                let idx: Vec<usize> = (0..points.len())
                    .filter(|&j| &labels[j] == cls && !(skip_self && j == i))
                    .collect();
                idx.iter().map(|&j| euclidean(&points[i], &points[j])).sum::<f64>() / idx.len() as f64
            };
            let a = mean_to(c, true);
            let b = classes
                .iter()
                .filter(|o| *o != c)
                .map(|o| mean_to(o, false))
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
        }
        out.push((c.clone(), total / members.len() as f64));
    }
    out
}

/// kNN purity by sorting every other point by `(distance, id)`.
/// Returns `(mean purity, per-point purity)`.
pub fn purity_all_pairs(points: &[Vec<f64>], labels: &[String], ids: &[u64], k: usize) -> (f64, Vec<f64>) {
    let n = points.len();
    let kk = k.min(n - 1);
    let mut per = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<(f64, u64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (euclidean(&points[i], &points[j]), ids[j], j))
            .collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let same = others[..kk].iter().filter(|o| labels[o.2] == labels[i]).count();
        per.push(if kk == 0 { 1.0 } else { same as f64 / kk as f64 });
    }
    (per.iter().sum::<f64>() / n as f64, per)
}

/// Largest number of reference texts that can be paired one-to-one with equal
/// predicted texts, by trying every assignment.
pub fn brute_force_text_matching(pred: &[String], reference: &[String]) -> usize {
    fn go(i: usize, pred: &[String], reference: &[String], used: &mut Vec<bool>) -> usize {
        if i == reference.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, reference, used);
        for j in 0..pred.len() {
            if !used[j] && pred[j] == reference[i] {
                used[j] = true;
                best = best.max(1 + go(i + 1, pred, reference, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, reference, &mut vec![false; pred.len()])
}

/// Overlap statistics by explicit pair enumeration: `(max, mean, count)`.
pub fn overlap_pairs(boxes: &[BBox]) -> (f64, f64, usize) {
    let mut values = Vec::new();
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            let v = iou(a, b);
            if v > 0.0 {
                values.push(v);
            }
        }
    }
    if values.is_empty() {
        return (0.0, 0.0, 0);
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    (max, values.iter().sum::<f64>() / values.len() as f64, values.len())
}
