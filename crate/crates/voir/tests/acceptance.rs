//! Acceptance suite. Every test writes one `criterion N ... PASS|FAIL` line
//! straight to stderr so it shows up even when libtest captures output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voir::index::{load_index, save_index};
use voir::Error as ServiceError;
use voir_core::eval::{compare_modes, generate_benchmark, simulate_session, BenchmarkSpec, CompareSettings, OracleUser};
use voir_core::feedback::{reweight_intra, rocchio_update, Judgment, Polarity, RocchioParams, SessionConfig, SessionState};
use voir_core::learning::{kmeans, ClusterCount, ClusteringConfig};
use voir_core::similarity::{rank, InterWeights, IntraWeights, Query, QueryPoint};
use voir_core::stats::{counterbalance_plan, fisher_sign_test, format_p_value, wilcoxon_signed_rank, Alternative};
use voir_core::{BlockSpec, BoundingBox, Catalog, FeatureSchema, FeatureVector, Mode, TermId};

fn report(n: u32, what: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2} {what} ... {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

#[test]
fn criterion_01_sign_test_table_values() {
    let t0 = Instant::now();
    let a = fisher_sign_test(8, 1, Alternative::Greater).unwrap();
    let b = fisher_sign_test(9, 0, Alternative::Greater).unwrap();
    let elapsed = t0.elapsed();
    let ok = a == 10.0 / 512.0
        && b == 1.0 / 512.0
        && format_p_value(a) == "0.0196"
        && format_p_value(b) == "0.00196"
        && elapsed < Duration::from_secs(1);
    report(1, "sign test (8,1) and (9,0)", ok, &format!("{} {} in {elapsed:?}", format_p_value(a), format_p_value(b)));
}

#[test]
fn criterion_02_counterbalance_plan() {
    let plan = counterbalance_plan(9, 3).unwrap();
    let mut want = Vec::new();
    for order in [[0, 1, 2], [1, 2, 0], [2, 0, 1]] {
        want.extend(std::iter::repeat_n(order.to_vec(), 3));
    }
    report(2, "counterbalancing plan for 9 subjects, 3 systems", plan == want, &format!("{plan:?}"));
}

/// Counts sign patterns whose positive-rank sum reaches the observed one,
/// ranking by direct comparison of every pair of magnitudes.
fn enumerate_wilcoxon(d: &[f64], alternative: Alternative) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let m = d.len();
    // doubled average rank = 2 * (#smaller) + (#equal including self) + 1
    let rank2: Vec<u64> = d
        .iter()
        .map(|x| {
            let smaller = d.iter().filter(|y| y.abs() < x.abs()).count() as u64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as u64;
            2 * smaller + equal + 1
        })
        .collect();
    let observed: u64 = (0..m).filter(|&i| d[i] > 0.0).map(|i| rank2[i]).sum();
    let mut hits = 0u64;
    for mask in 0u32..(1 << m) {
        let w: u64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| rank2[i]).sum();
        let hit = match alternative {
            Alternative::Greater => w >= observed,
            Alternative::Less => w <= observed,
        };
        hits += hit as u64;
    }
    hits as f64 / (1u64 << m) as f64
}

#[test]
fn criterion_03_wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 200 {
        let n = rng.random_range(1..=12);
        // small integer scores force ties and zero differences
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let m = d.iter().filter(|x| **x != 0.0).count();
        if m == 0 || m > 10 {
            continue;
        }
        let alt = if rng.random::<bool>() { Alternative::Greater } else { Alternative::Less };
        let got = wilcoxon_signed_rank(&a, &b, alt).unwrap();
        if !(got.exact && got.p_value == enumerate_wilcoxon(&d, alt)) {
            mismatches += 1;
        }
        checked += 1;
    }
    report(3, "exact Wilcoxon vs enumeration, 200 fixtures", mismatches == 0, &format!("{mismatches} mismatches"));
}

#[test]
fn criterion_04_rocchio_examples() {
    let close = |a: &FeatureVector, b: &[f64]| a.as_slice().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    let q = fv(&[0.3, 0.7]);
    let e1 = rocchio_update(&q, &[], &[], RocchioParams::default()).unwrap() == q;
    let e2 = close(&rocchio_update(&fv(&[0.0, 0.0]), &[fv(&[0.2, 0.4])], &[], RocchioParams::new(1.0, 0.5).unwrap()).unwrap(), &[0.2, 0.4]);
    let e3 = close(
        &rocchio_update(&fv(&[0.1, 0.0]), &[fv(&[0.3, 0.0]), fv(&[0.5, 0.0])], &[fv(&[0.0, 0.2])], RocchioParams::new(0.5, 0.25).unwrap()).unwrap(),
        &[0.3, 0.0],
    );
    let rel = [fv(&[0.25, 0.5, 0.125]), fv(&[0.75, 0.0, 0.375]), fv(&[0.5, 1.0, 0.5])];
    let centroid: Vec<f64> = (0..3).map(|j| rel.iter().map(|v| v.as_slice()[j]).sum::<f64>() / 3.0).collect();
    let e4 = rocchio_update(&FeatureVector::zeros(3), &rel, &[], RocchioParams::new(1.0, 0.0).unwrap()).unwrap().as_slice() == centroid.as_slice();
    report(4, "query point update examples", e1 && e2 && e3 && e4, &format!("{e1} {e2} {e3} centroid={e4}"));
}

#[test]
fn criterion_05_intra_weight_ordering() {
    let schema = FeatureSchema::new(vec![BlockSpec::new("color", 4), BlockSpec::new("shape", 3)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        // some components are constant, some share a spread
        let frozen: Vec<Option<f64>> = (0..7).map(|_| rng.random_bool(0.2).then(|| rng.random())).collect();
        let good: Vec<Vec<f64>> = (0..n).map(|_| frozen.iter().map(|f| f.unwrap_or_else(|| rng.random())).collect()).collect();
        let vs: Vec<FeatureVector> = good.iter().map(|v| fv(v)).collect();
        let w = reweight_intra(&schema, &vs).unwrap();
        let sigma: Vec<f64> = (0..7)
            .map(|j| {
                let m = good.iter().map(|v| v[j]).sum::<f64>() / n as f64;
                (good.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt()
            })
            .collect();
        for r in schema.block_ranges() {
            for a in r.clone() {
                for b in r.clone() {
                    if sigma[a] < sigma[b] && w.as_slice()[a] < w.as_slice()[b] {
                        violations += 1;
                    }
                }
            }
        }
    }
    let single = reweight_intra(&schema, &[fv(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])]).unwrap();
    let uniform = single.as_slice() == [0.25, 0.25, 0.25, 0.25, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    report(5, "intra weights ordered by spread, 1000 fixtures", violations == 0 && uniform, &format!("{violations} violations, single-example uniform={uniform}"));
}

fn oracle_rank(images: &[Vec<Vec<f64>>], blocks: &[usize], points: &[(Vec<f64>, Vec<f64>)], inter: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = images
        .iter()
        .enumerate()
        .map(|(i, regions)| {
            let mut best = f64::NEG_INFINITY;
            for x in regions {
                for (q, w) in points {
                    let (mut start, mut num) = (0, 0.0);
                    for (b, len) in blocks.iter().enumerate() {
                        let d2: f64 = (start..start + len).map(|j| w[j] * (q[j] - x[j]).powi(2)).sum();
                        num += inter[b] / (1.0 + d2.sqrt());
                        start += len;
                    }
                    best = best.max(num / inter.iter().sum::<f64>());
                }
            }
            (i, best)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

#[test]
fn criterion_06_rank_matches_linear_scan() {
    let blocks = [4usize, 3];
    let schema = FeatureSchema::new(vec![BlockSpec::new("color", 4), BlockSpec::new("shape", 3)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    let mut max_regions = 0;
    for corpus in 0..100 {
        // every tenth corpus is full size: 125 images of 4 regions
        let full = corpus % 10 == 0;
        let n_images = if full { 125 } else { rng.random_range(1..=125) };
        let images: Vec<Vec<Vec<f64>>> = (0..n_images)
            .map(|_| {
                let n = if full { 4 } else { rng.random_range(1..=4) };
                (0..n).map(|_| (0..7).map(|_| rng.random()).collect()).collect()
            })
            .collect();
        max_regions = max_regions.max(images.iter().map(Vec::len).sum::<usize>());
        let mut catalog = Catalog::new(schema.clone());
        for (i, regions) in images.iter().enumerate() {
            let img = catalog.add_image(&format!("c{corpus}i{i}"), "mem://", 0, 0, Vec::<String>::new()).unwrap();
            for (j, v) in regions.iter().enumerate() {
                catalog.add_region(img, &format!("c{corpus}i{i}r{j}"), BoundingBox::new(0, 0, 1, 1).unwrap(), None, fv(v)).unwrap();
            }
        }
        let points: Vec<(Vec<f64>, Vec<f64>)> = (0..rng.random_range(1..=3))
            .map(|_| {
                let q: Vec<f64> = (0..7).map(|_| rng.random()).collect();
                let raw: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..1.0)).collect();
                let (a, b): (f64, f64) = (raw[..4].iter().sum(), raw[4..].iter().sum());
                let w = raw.iter().enumerate().map(|(j, x)| if j < 4 { x / a } else { x / b }).collect();
                (q, w)
            })
            .collect();
        let w0: f64 = rng.random_range(0.05..0.95);
        let inter = vec![w0, 1.0 - w0];
        let term = TermId(0);
        let qps = points
            .iter()
            .map(|(q, w)| {
                let mut p = QueryPoint::new(&schema, fv(q), term, None).unwrap();
                p.intra = IntraWeights::new(&schema, w.clone()).unwrap();
                p
            })
            .collect();
        let query = Query { concepts: BTreeMap::from([(term, qps)]), inter: InterWeights::new(inter.clone()).unwrap() };
        let got = rank(&catalog, &query, n_images, Mode::Voir3).unwrap();
        let want = oracle_rank(&images, &blocks, &points, &inter);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, (i, s))| g.image_id.0 as usize == *i && (g.image_score - s).abs() < 1e-12);
        failures += !same as usize;
    }
    report(6, "ranking vs linear-scan oracle, 100 corpora", failures == 0, &format!("{failures} mismatching corpora, up to {max_regions} regions"));
}

#[test]
fn criterion_07_query_expansion() {
    let schema = FeatureSchema::new(vec![BlockSpec::new("color", 2)]).unwrap();
    let mut catalog = Catalog::new(schema);
    let near = [[0.0, 0.0], [0.05, 0.1], [0.1, 0.05], [0.08, 0.08]];
    let far = [[1.0, 1.0], [0.95, 0.9], [0.9, 0.95], [0.92, 0.92]];
    for (i, v) in near.iter().chain(&far).enumerate() {
        let img = catalog.add_image(&format!("i{i}"), "mem://", 0, 0, Vec::<String>::new()).unwrap();
        catalog.add_region(img, &format!("r{i}"), BoundingBox::new(0, 0, 1, 1).unwrap(), None, fv(v)).unwrap();
    }
    catalog.normalize_features().unwrap();
    catalog.cluster(&ClusteringConfig { k: ClusterCount::Fixed(2), ..ClusteringConfig::default() }).unwrap();
    let term = catalog.thesaurus_mut().add("thing", None).unwrap();
    let key = |k: &str| catalog.region_by_key(k).unwrap();
    let start = SessionState::new(&catalog, 1, Mode::Voir3, &[(term, key("r0"))], SessionConfig::default()).unwrap();

    let mut other = start.clone();
    other.apply_feedback(&catalog, &[Judgment::region(key("r5"), Polarity::Relevant)]).unwrap();
    let mut same = start.clone();
    same.apply_feedback(&catalog, &[Judgment::region(key("r2"), Polarity::Relevant)]).unwrap();
    let (o, s) = (other.query.point_count(term), same.query.point_count(term));
    report(7, "expansion on a two-cluster fixture", o == 2 && s == 1, &format!("other cluster 1 -> {o}, same cluster 1 -> {s}"));
}

fn benchmark() -> (Catalog, Vec<TermId>) {
    let catalog = generate_benchmark(&BenchmarkSpec::default()).unwrap();
    let terms = catalog.thesaurus().terms().map(|t| t.id).collect();
    (catalog, terms)
}

#[test]
fn criterion_08_mode_ordering_on_benchmark() {
    let t0 = Instant::now();
    let (catalog, terms) = benchmark();
    let seeds: Vec<u64> = (0..50).collect();
    let r = compare_modes(&catalog, &terms, &seeds, &CompareSettings::default()).unwrap();
    let elapsed = t0.elapsed();
    let [v1, v2, v3] = r.mean_precision;
    let p = r.pair(Mode::Voir3, Mode::Voir1).and_then(|row| row.sign_p);
    let ok = v3 >= v2 && v2 >= v1 && p.is_some_and(|p| p < 0.05) && elapsed < Duration::from_secs(120);
    report(
        8,
        "benchmark precision@10 ordering, 50 seeds",
        ok,
        &format!("VOIR-1={v1:.4} VOIR-2={v2:.4} VOIR-3={v3:.4}, sign p(3 vs 1)={}, {elapsed:?}", p.map_or("none".into(), format_p_value)),
    );
}

#[test]
fn criterion_09_learning_loop() {
    let (mut catalog, terms) = benchmark();
    let mut counts = Vec::new();
    for s in 0..10u64 {
        let term = terms[s as usize % terms.len()];
        let trace = simulate_session(&catalog, Mode::Voir3, &OracleUser::for_mode(term, Mode::Voir3, s), 5, 10, SessionConfig::default()).unwrap();
        catalog.periodic_update(&trace.recorded).unwrap();
        counts.push(catalog.confident_associations(50));
    }
    report(9, "confident associations grow over 10 sessions", counts[9] > counts[0], &format!("{counts:?}"));
}

#[test]
fn criterion_10_index_round_trip() {
    let catalog = generate_benchmark(&BenchmarkSpec { images: 300, ..BenchmarkSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.idx");
    save_index(&catalog, &path).unwrap();
    let loaded = load_index(&path).unwrap();
    let equal = loaded == catalog;
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.idx");
    std::fs::write(&cut, &bytes[..bytes.len() * 2 / 3]).unwrap();
    let truncated = matches!(load_index(&cut), Err(ServiceError::PartialFile(_)));
    report(10, "index round trip on 300 images, truncated load rejected", equal && truncated, &format!("deep-equal={equal}, truncation rejected={truncated}"));
}

#[test]
fn criterion_11_kmeans_determinism_and_optimality() {
    let (a, _) = benchmark();
    let (b, _) = benchmark();
    let cats = |c: &Catalog| c.categories().map(|v| (v.id, v.members.clone())).collect::<Vec<_>>();
    let deterministic = cats(&a) == cats(&b);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut suboptimal = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { 0.2 } else { 0.8 };
                (0..2).map(|_| c + rng.random_range(-0.1..0.1)).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let (assign, _) = kmeans(&refs, 2, &ClusteringConfig { rng_seed: rng.random(), ..ClusteringConfig::default() }).unwrap();
        let sse = |mask: u32| -> f64 {
            let mut total = 0.0;
            for side in 0..2 {
                let m: Vec<&Vec<f64>> = (0..n).filter(|i| (mask >> i & 1) == side).map(|i| &pts[i]).collect();
                if m.is_empty() {
                    return f64::INFINITY;
                }
                let c: Vec<f64> = (0..2).map(|j| m.iter().map(|p| p[j]).sum::<f64>() / m.len() as f64).collect();
                total += m.iter().map(|p| (0..2).map(|j| (p[j] - c[j]).powi(2)).sum::<f64>()).sum::<f64>();
            }
            total
        };
        let best = (1..(1u32 << n) - 1).map(sse).fold(f64::INFINITY, f64::min);
        let got = assign.iter().enumerate().fold(0u32, |m, (i, &c)| m | ((c as u32) << i));
        let sides: BTreeSet<usize> = assign.iter().copied().collect();
        if sides.len() != 2 || (sse(got) - best).abs() > 1e-12 {
            suboptimal += 1;
        }
    }
    report(11, "k-means determinism and optimal two-blob split", deterministic && suboptimal == 0, &format!("deterministic={deterministic}, {suboptimal}/50 suboptimal"));
}
