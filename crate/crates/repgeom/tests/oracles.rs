use harmony_repgeom::{
    analyze, neighborhood_purity, project_2d, silhouette_per_class, EmbeddingRecord, EmbeddingSet, GeometryOptions,
};
use harmony_testkit::{euclidean, purity_all_pairs, silhouette_direct};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random set whose coordinates are small integers, so distance ties are common.
fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> EmbeddingSet {
    let records = (0..n)
        .map(|i| {
            let label = format!("c{}", if i < classes { i } else { rng.random_range(0..classes) });
            let v = (0..d).map(|_| rng.random_range(-4..=4) as f64).collect();
            EmbeddingRecord::new(1000 - i as u64, "p", label, v)
        })
        .collect();
    EmbeddingSet::new(records).unwrap()
}

fn parts(s: &EmbeddingSet) -> (Vec<Vec<f64>>, Vec<String>, Vec<u64>) {
    (
        s.records.iter().map(|r| r.vector.clone()).collect(),
        s.records.iter().map(|r| r.label.clone()).collect(),
        s.records.iter().map(|r| r.id).collect(),
    )
}

#[test]
fn silhouette_and_purity_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let n = rng.random_range(3..=60);
        let d = rng.random_range(2..=8);
        let c = rng.random_range(2..=4.min(n));
        let s = random_set(&mut rng, n, d, c);
        let (pts, labels, ids) = parts(&s);
        let got = silhouette_per_class(&s).unwrap();
        for (label, want) in silhouette_direct(&pts, &labels) {
            assert!((got[&label] - want).abs() < 1e-9, "{label}: {} vs {want}", got[&label]);
        }
        let k = rng.random_range(1..=70);
        let (mean, _) = purity_all_pairs(&pts, &labels, &ids, k);
        let p = neighborhood_purity(&s, k).unwrap();
        assert!((p.mean - mean).abs() < 1e-12);
        assert_eq!(p.k_effective, k.min(n - 1));
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

fn transform(s: &EmbeddingSet, q: &DMatrix<f64>, shift: &[f64]) -> EmbeddingSet {
    let mut out = s.clone();
    for r in &mut out.records {
        let v = q * DMatrix::from_column_slice(r.vector.len(), 1, &r.vector);
        r.vector = v.iter().zip(shift).map(|(a, b)| a + b).collect();
    }
    out
}

#[test]
fn rigid_transforms_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..30 {
        let d = rng.random_range(2..=6);
        // continuous coordinates: rotations must not reorder near-ties
        let records = (0..30)
            .map(|i| {
                EmbeddingRecord::new(
                    i,
                    "p",
                    ["a", "b", "c"][i as usize % 3],
                    (0..d).map(|_| rng.random_range(-5.0..5.0)).collect(),
                )
            })
            .collect();
        let s = EmbeddingSet::new(records).unwrap();
        let q = random_rotation(&mut rng, d);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-100.0..100.0)).collect();
        let t = transform(&s, &q, &shift);
        let (a, b) = (silhouette_per_class(&s).unwrap(), silhouette_per_class(&t).unwrap());
        for (k, v) in &a {
            assert!((v - b[k]).abs() < 1e-9);
        }
        let (pa, pb) = (neighborhood_purity(&s, 5).unwrap(), neighborhood_purity(&t, 5).unwrap());
        assert!((pa.mean - pb.mean).abs() < 1e-9);
    }
}

#[test]
fn purity_follows_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let s = random_set(&mut rng, 40, 3, 3);
    let mut r = s.clone();
    for rec in &mut r.records {
        rec.label = match rec.label.as_str() {
            "c0" => "c1",
            "c1" => "c2",
            _ => "c0",
        }
        .to_string();
    }
    let (a, b) = (neighborhood_purity(&s, 4).unwrap(), neighborhood_purity(&r, 4).unwrap());
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.per_class["c0"], b.per_class["c1"]);
    assert_eq!(a.per_class["c2"], b.per_class["c0"]);
}

#[test]
fn duplicating_a_class_matches_oracle() {
    let base = [(0.0, 0.0), (0.0, 1.0)];
    let mut records: Vec<EmbeddingRecord> = Vec::new();
    for (i, (x, y)) in base.iter().chain(base.iter()).enumerate() {
        records.push(EmbeddingRecord::new(i as u64, "p", "A", vec![*x, *y]));
    }
    records.push(EmbeddingRecord::new(10, "p", "B", vec![10.0, 0.0]));
    records.push(EmbeddingRecord::new(11, "p", "B", vec![10.0, 1.0]));
    let s = EmbeddingSet::new(records).unwrap();
    let (pts, labels, _) = parts(&s);
    let got = silhouette_per_class(&s).unwrap();
    for (label, want) in silhouette_direct(&pts, &labels) {
        assert!((got[&label] - want).abs() < 1e-12);
    }
    // the other class sees only mean distances, which duplication preserves
    let b = (10.0 + 101f64.sqrt()) / 2.0;
    assert!((got["B"] - (b - 1.0) / b).abs() < 1e-12);
}

#[test]
fn projection_is_best_rank_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..20 {
        let records = (0..10)
            .map(|i| EmbeddingRecord::new(i, "p", "a", (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()))
            .collect();
        let s = EmbeddingSet::new(records).unwrap();
        let proj = project_2d(&s).unwrap();

        let x = DMatrix::from_fn(10, 5, |i, j| s.records[i].vector[j]);
        let mean = x.row_mean();
        let xc = DMatrix::from_fn(10, 5, |i, j| x[(i, j)] - mean[j]);
        let sv = xc.clone().svd(false, false).singular_values;
        let mut sq: Vec<f64> = sv.iter().map(|v| v * v).collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        let best_residual: f64 = sq[2..].iter().sum();
        let total: f64 = xc.iter().map(|v| v * v).sum();
        let kept: f64 = proj.iter().map(|(a, b)| a * a + b * b).sum();
        assert!(((total - kept) - best_residual).abs() < 1e-6);
    }
}

#[test]
fn two_dimensional_projection_preserves_distances() {
    let pts = [(0.0, 0.0), (3.0, 1.0), (1.0, 4.0), (-2.0, 2.5)];
    let records = pts
        .iter()
        .enumerate()
        .map(|(i, (x, y))| EmbeddingRecord::new(i as u64, "p", "a", vec![*x, *y]))
        .collect();
    let s = EmbeddingSet::new(records).unwrap();
    let p = project_2d(&s).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let before = euclidean(&s.records[i].vector, &s.records[j].vector);
            let after = euclidean(&[p[i].0, p[i].1], &[p[j].0, p[j].1]);
            assert!((before - after).abs() < 1e-9);
        }
    }
}

#[test]
fn report_is_identical_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let s = random_set(&mut rng, 60, 6, 3);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                analyze(
                    &s,
                    GeometryOptions {
                        k: 7,
                        ..GeometryOptions::default()
                    },
                )
                .unwrap()
            })
    };
    let one = serde_json::to_string(&run(1)).unwrap();
    for t in [2, 4, 8] {
        assert_eq!(serde_json::to_string(&run(t)).unwrap(), one);
    }
}

#[test]
fn separable_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let records = (0..40)
        .map(|i| {
            let off = if i % 2 == 0 { 0.0 } else { 100.0 };
            let v = (0..4).map(|_| off + rng.random_range(0.0..1.0)).collect();
            EmbeddingRecord::new(i, "p", if i % 2 == 0 { "a" } else { "b" }, v)
        })
        .collect();
    let s = EmbeddingSet::new(records).unwrap();
    assert_eq!(neighborhood_purity(&s, 10).unwrap().mean, 1.0);
    assert!(silhouette_per_class(&s).unwrap().values().all(|v| *v > 0.9));
}
