//! Simulated-user evaluation: an oracle standing in for a human judge,
//! single-session traces, cross-mode comparison with sign and signed-rank
//! tests, and a synthetic blob corpus to run it on.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::feedback::{Judgment, Polarity, RecordedJudgment, SessionConfig, SessionState};
use crate::ids::{ImageId, RegionId, TermId};
use crate::learning::{ClusterCount, ClusteringConfig};
use crate::model::{fold_label, BlockSpec, BoundingBox, FeatureSchema, FeatureVector, COLOR_BLOCK, SHAPE_BLOCK};
use crate::similarity::Mode;
use crate::stats::{fisher_sign_test, format_p_value, precision_at_k, wilcoxon_signed_rank, Alternative};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Granularity {
    Image,
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleUser {
    pub target_term_id: TermId,
    pub granularity: Granularity,
    pub judgments_per_iteration: usize,
    pub rng_seed: u64,
}

impl OracleUser {
    pub const DEFAULT_JUDGMENTS_PER_ITERATION: usize = 5;

    /// The granularity each mode accepts; VOIR-1 gets an oracle that is
    /// never asked for judgments.
    pub fn for_mode(target_term_id: TermId, mode: Mode, rng_seed: u64) -> Self {
        let granularity = if mode == Mode::Voir3 { Granularity::Region } else { Granularity::Image };
        OracleUser { target_term_id, granularity, judgments_per_iteration: Self::DEFAULT_JUDGMENTS_PER_ITERATION, rng_seed }
    }

    pub fn compatible_with(&self, mode: Mode) -> bool {
        match mode {
            Mode::Voir1 => true,
            Mode::Voir2 => self.granularity == Granularity::Image,
            Mode::Voir3 => self.granularity == Granularity::Region,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationTrace {
    /// Top-k image ids.
    pub ranked: Vec<ImageId>,
    /// Judgments issued after seeing this ranking (empty on the last one).
    pub judgments: Vec<Judgment>,
    pub precision: f64,
    /// Relevant images among the top k.
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionTrace {
    pub mode: Mode,
    pub example_region_id: RegionId,
    pub iterations: Vec<IterationTrace>,
    /// Resolved judgments, ready for the learning loop.
    pub recorded: Vec<RecordedJudgment>,
}

impl SessionTrace {
    pub fn final_precision(&self) -> f64 {
        self.iterations.last().map_or(0.0, |it| it.precision)
    }

    pub fn final_hits(&self) -> usize {
        self.iterations.last().map_or(0, |it| it.hits)
    }
}

/// The example region a session for `term` starts from: one of the
/// highest-confidence associations, ties broken by `rng_seed`.
pub fn choose_example(catalog: &Catalog, term: TermId, rng_seed: u64) -> Result<RegionId> {
    let examples = catalog.term_examples(term)?;
    let top = examples.first().ok_or_else(|| Error::CannotComposeQuery(format!("{term} has no example region")))?.d_conf;
    let tied: Vec<RegionId> = examples.iter().take_while(|a| a.d_conf == top).map(|a| a.region_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(*tied.choose(&mut rng).expect("non-empty"))
}

/// Images whose ground truth contains the term's label.
pub fn relevant_images(catalog: &Catalog, term: TermId) -> Result<BTreeSet<ImageId>> {
    let label = &catalog.thesaurus().get(term)?.label;
    Ok(catalog.images().filter(|img| img.has_keyword(label)).map(|img| img.id).collect())
}

/// Runs one oracle-driven session: rank, measure, judge, refine.
pub fn simulate_session(
    catalog: &Catalog,
    mode: Mode,
    oracle: &OracleUser,
    max_iterations: usize,
    k: usize,
    config: SessionConfig,
) -> Result<SessionTrace> {
    if max_iterations == 0 || k == 0 {
        return Err(Error::InvalidArgument("max_iterations and k must be at least 1".into()));
    }
    if !oracle.compatible_with(mode) {
        return Err(Error::ModeViolation { mode, what: "oracle judgment granularity" });
    }
    let term = oracle.target_term_id;
    let label = fold_label(&catalog.thesaurus().get(term)?.label);
    let relevant = relevant_images(catalog, term)?;
    let example = choose_example(catalog, term, oracle.rng_seed)?;
    let mut session = SessionState::new(catalog, oracle.rng_seed, mode, &[(term, example)], config)?;
    let iterations = if mode == Mode::Voir1 { 1 } else { max_iterations };
    let all = catalog.image_count().max(1);
    let mut judged: BTreeSet<ImageId> = BTreeSet::new();
    let mut trace = Vec::with_capacity(iterations);

    for it in 0..iterations {
        let results = session.results(catalog, all)?;
        let ranked: Vec<ImageId> = results.iter().map(|r| r.image_id).collect();
        let precision = precision_at_k(&ranked, &relevant, k)?;
        let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
        let mut judgments = Vec::new();
        if it + 1 < iterations {
            let pending: Vec<_> = results.iter().filter(|r| !judged.contains(&r.image_id)).take(oracle.judgments_per_iteration).collect();
            for r in pending {
                let is_rel = relevant.contains(&r.image_id);
                let polarity = if is_rel { Polarity::Relevant } else { Polarity::NonRelevant };
                let j = match oracle.granularity {
                    Granularity::Image => Judgment::image(r.image_id, polarity),
                    Granularity::Region => {
                        let best = r.concepts[0].best_region_id.ok_or_else(|| Error::Integrity("missing best region".into()))?;
                        let labelled = if is_rel {
                            catalog.image(r.image_id)?.region_ids.iter().copied().filter(|rid| {
                                catalog.region(*rid).is_ok_and(|reg| reg.labels.contains(&label))
                            }).min()
                        } else {
                            None
                        };
                        Judgment::region(labelled.unwrap_or(best), polarity)
                    }
                };
                judged.insert(r.image_id);
                judgments.push(j);
            }
            if !judgments.is_empty() {
                session.apply_feedback(catalog, &judgments)?;
            }
        }
        trace.push(IterationTrace { ranked: ranked.into_iter().take(k).collect(), judgments, precision, hits });
    }
    Ok(SessionTrace { mode, example_region_id: example, iterations: trace, recorded: session.recorded })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairRow {
    pub a: Mode,
    pub b: Mode,
    /// Pairs where `a` scored strictly higher.
    pub plus: u64,
    pub minus: u64,
    pub ties: u64,
    /// `None` when every pair is tied.
    pub sign_p: Option<f64>,
    pub wilcoxon_p: Option<f64>,
}

impl PairRow {
    pub fn label(&self) -> String {
        format!("{} vs {}", self.a, self.b)
    }

    pub fn sign_p_text(&self) -> String {
        self.sign_p.map_or_else(|| "no evidence".to_string(), format_p_value)
    }

    pub fn wilcoxon_p_text(&self) -> String {
        self.wilcoxon_p.map_or_else(|| "no evidence".to_string(), format_p_value)
    }
}

/// One-tailed tests of "`a` beats `b`" on paired scores.
pub fn summarize_pair(a: Mode, b: Mode, scores_a: &[f64], scores_b: &[f64]) -> Result<PairRow> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::InvalidArgument("unpaired score lists".into()));
    }
    let mut plus = 0;
    let mut minus = 0;
    for (x, y) in scores_a.iter().zip(scores_b) {
        if x > y {
            plus += 1;
        } else if x < y {
            minus += 1;
        }
    }
    let ties = scores_a.len() as u64 - plus - minus;
    let sign_p = if plus + minus == 0 { None } else { Some(fisher_sign_test(plus, minus, Alternative::Greater)?) };
    let wilcoxon_p = match wilcoxon_signed_rank(scores_a, scores_b, Alternative::Greater) {
        Ok(r) => Some(r.p_value),
        Err(Error::DegenerateSample(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(PairRow { a, b, plus, minus, ties, sign_p, wilcoxon_p })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonReport {
    pub k: usize,
    pub sessions_per_mode: usize,
    /// Mean final precision@k per mode, in [`Mode::ALL`] order.
    pub mean_precision: [f64; 3],
    pub pairs: Vec<PairRow>,
}

impl ComparisonReport {
    pub fn mean(&self, mode: Mode) -> f64 {
        self.mean_precision[Mode::ALL.iter().position(|m| *m == mode).expect("known mode")]
    }

    pub fn pair(&self, a: Mode, b: Mode) -> Option<&PairRow> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }

    /// Fixed-width table: pair, +, -, sign p, signed-rank p.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:>5} {:>5} {:>12} {:>12}\n", "pair", "+", "-", "sign p", "wilcoxon p");
        for p in &self.pairs {
            out += &format!("{:<18} {:>5} {:>5} {:>12} {:>12}\n", p.label(), p.plus, p.minus, p.sign_p_text(), p.wilcoxon_p_text());
        }
        out += &format!("mean precision@{}:", self.k);
        for (m, v) in Mode::ALL.iter().zip(self.mean_precision) {
            out += &format!(" {m}={v:.4}");
        }
        out.push('\n');
        out
    }

    /// CSV with header `pair,plus,minus,sign_p,wilcoxon_p`; missing p-values
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,plus,minus,sign_p,wilcoxon_p\n");
        let num = |p: Option<f64>| p.map_or_else(String::new, |v| format!("{v:e}"));
        for p in &self.pairs {
            out += &format!("{},{},{},{},{}\n", p.label(), p.plus, p.minus, num(p.sign_p), num(p.wilcoxon_p));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareSettings {
    pub k: usize,
    pub max_iterations: usize,
    pub judgments_per_iteration: usize,
    pub session: SessionConfig,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            k: 10,
            max_iterations: 5,
            judgments_per_iteration: OracleUser::DEFAULT_JUDGMENTS_PER_ITERATION,
            session: SessionConfig::default(),
        }
    }
}

pub const MIN_COMPARE_SEEDS: usize = 10;

/// Runs every (seed, term) under all three modes and tests the three mode
/// pairs on final precision@k. Signed ranks are computed on hit counts,
/// which keeps tied differences exactly equal.
pub fn compare_modes(catalog: &Catalog, terms: &[TermId], seeds: &[u64], settings: &CompareSettings) -> Result<ComparisonReport> {
    if seeds.len() < MIN_COMPARE_SEEDS {
        return Err(Error::InvalidConfig(format!("at least {MIN_COMPARE_SEEDS} seeds are required, got {}", seeds.len())));
    }
    if terms.is_empty() {
        return Err(Error::InvalidConfig("no terms to evaluate".into()));
    }
    let mut hits: [Vec<f64>; 3] = Default::default();
    for &seed in seeds {
        for &term in terms {
            for (i, mode) in Mode::ALL.into_iter().enumerate() {
                let mut oracle = OracleUser::for_mode(term, mode, seed);
                oracle.judgments_per_iteration = settings.judgments_per_iteration;
                let t = simulate_session(catalog, mode, &oracle, settings.max_iterations, settings.k, settings.session)?;
                hits[i].push(t.final_hits() as f64);
            }
        }
    }
    let n = hits[0].len();
    let mean_precision = core::array::from_fn(|i| hits[i].iter().sum::<f64>() / (n * settings.k) as f64);
    let [v1, v2, v3] = &hits;
    let pairs = alloc::vec![
        summarize_pair(Mode::Voir2, Mode::Voir1, v2, v1)?,
        summarize_pair(Mode::Voir3, Mode::Voir2, v3, v2)?,
        summarize_pair(Mode::Voir3, Mode::Voir1, v3, v1)?,
    ];
    Ok(ComparisonReport { k: settings.k, sessions_per_mode: n, mean_precision, pairs })
}

/// Synthetic corpus of Gaussian concept blobs.
///
/// Every concept owns a center over the `color_dims + shape_dims` informative
/// components, placed per [`CenterLayout`]. Region vectors deviate from their
/// concept center by `sigma` per component and are clipped to `[0, 1]`. Each
/// block also carries `clutter_dims` uniform, concept-independent components
/// that only re-weighting can discount. Every image holds
/// `regions_per_image` regions of distinct concepts and lists their labels
/// as ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CenterLayout {
    /// Uniform in the cube of side `spread` around 0.5.
    Interior { spread: f64 },
    /// Distinct random corners of the unit cube. Corners are fixed points of
    /// the clamped query-point update, so feedback cannot drift off them.
    Vertices,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub labels: Vec<String>,
    pub images: usize,
    pub regions_per_image: usize,
    pub color_dims: usize,
    pub shape_dims: usize,
    pub clutter_dims: usize,
    pub sigma: f64,
    pub centers: CenterLayout,
    /// Manual associations per concept.
    pub anchors_per_term: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            labels: ["sky", "sea", "grass", "sand", "snow", "rock", "foliage", "flower"].map(String::from).to_vec(),
            images: 100,
            regions_per_image: 4,
            color_dims: 2,
            shape_dims: 3,
            clutter_dims: 4,
            sigma: 0.05,
            centers: CenterLayout::Vertices,
            anchors_per_term: 3,
            seed: 7,
        }
    }
}

/// Builds, clusters (k = auto) and seeds manual associations for a synthetic
/// corpus.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Catalog> {
    let concepts = spec.labels.len();
    if concepts == 0 || spec.regions_per_image == 0 || spec.regions_per_image > concepts || spec.images == 0 {
        return Err(Error::InvalidConfig("benchmark needs images and at least regions_per_image concepts".into()));
    }
    if spec.color_dims == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one color dimension".into()));
    }
    let mut blocks = alloc::vec![BlockSpec::new(COLOR_BLOCK, spec.color_dims + spec.clutter_dims)];
    if spec.shape_dims > 0 {
        blocks.push(BlockSpec::new(SHAPE_BLOCK, spec.shape_dims + spec.clutter_dims));
    }
    let mut catalog = Catalog::new(FeatureSchema::new(blocks)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidConfig(format!("sigma: {e}")))?;
    let blob_dims = spec.color_dims + spec.shape_dims;
    let centers: Vec<Vec<f64>> = match spec.centers {
        CenterLayout::Interior { spread } => (0..concepts)
            .map(|_| (0..blob_dims).map(|_| 0.5 + spread * (rng.random::<f64>() - 0.5)).collect())
            .collect(),
        CenterLayout::Vertices => {
            if blob_dims < 64 && (1u64 << blob_dims) < concepts as u64 {
                return Err(Error::InvalidConfig("too few dimensions for distinct vertex centers".into()));
            }
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(concepts);
            while out.len() < concepts {
                let c: Vec<f64> = (0..blob_dims).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            out
        }
    };
    let terms: Vec<TermId> = spec.labels.iter().map(|l| catalog.thesaurus_mut().add(l, None)).collect::<Result<_>>()?;

    let side = 64u32;
    let mut by_concept: Vec<Vec<RegionId>> = alloc::vec![Vec::new(); concepts];
    let mut order: Vec<usize> = (0..concepts).collect();
    for i in 0..spec.images {
        order.shuffle(&mut rng);
        let chosen = &order[..spec.regions_per_image];
        let keywords: Vec<String> = chosen.iter().map(|&c| spec.labels[c].clone()).collect();
        let img = catalog.add_image(&format!("syn{i:04}"), &format!("synthetic://{i}"), side, side * spec.regions_per_image as u32, keywords)?;
        for (slot, &c) in chosen.iter().enumerate() {
            let blob: Vec<f64> = centers[c].iter().map(|m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect();
            let mut v = blob[..spec.color_dims].to_vec();
            v.extend((0..spec.clutter_dims).map(|_| rng.random::<f64>()));
            v.extend_from_slice(&blob[spec.color_dims..]);
            if spec.shape_dims > 0 {
                v.extend((0..spec.clutter_dims).map(|_| rng.random::<f64>()));
            }
            let y0 = side * slot as u32;
            let bbox = BoundingBox::new(0, y0, side, y0 + side)?;
            let rid = catalog.add_region(img, &format!("syn{i:04}r{slot}"), bbox, None, FeatureVector::new(v)?)?;
            catalog.set_region_labels(rid, [spec.labels[c].clone()])?;
            by_concept[c].push(rid);
        }
    }
    catalog.normalize_features()?;
    catalog.cluster(&ClusteringConfig { k: ClusterCount::Auto, rng_seed: spec.seed, ..ClusteringConfig::default() })?;
    for (c, term) in terms.iter().enumerate() {
        let mut pool = by_concept[c].clone();
        pool.shuffle(&mut rng);
        for &rid in pool.iter().take(spec.anchors_per_term) {
            catalog.set_manual_association(*term, rid)?;
        }
    }
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Catalog {
        generate_benchmark(&BenchmarkSpec { images: 40, ..BenchmarkSpec::default() }).unwrap()
    }

    #[test]
    fn benchmark_shape() {
        let c = small();
        assert_eq!(c.image_count(), 40);
        assert_eq!(c.region_count(), 160);
        assert_eq!(c.thesaurus().len(), 8);
        assert!(c.images().all(|i| i.ground_truth_keywords.len() == 4));
        c.validate().unwrap();
    }

    #[test]
    fn voir1_is_single_iteration() {
        let c = small();
        let t = c.thesaurus().find("sky").unwrap();
        let tr = simulate_session(&c, Mode::Voir1, &OracleUser::for_mode(t, Mode::Voir1, 1), 5, 10, SessionConfig::default()).unwrap();
        assert_eq!(tr.iterations.len(), 1);
        assert!(tr.recorded.is_empty());
    }

    #[test]
    fn voir3_trace_length_and_bounds() {
        let c = small();
        let t = c.thesaurus().find("sea").unwrap();
        let tr = simulate_session(&c, Mode::Voir3, &OracleUser::for_mode(t, Mode::Voir3, 1), 3, 10, SessionConfig::default()).unwrap();
        assert_eq!(tr.iterations.len(), 3);
        assert!(tr.iterations.iter().all(|i| (0.0..=1.0).contains(&i.precision)));
        assert!(tr.iterations.last().unwrap().judgments.is_empty());
        assert_eq!(tr.recorded.len(), 10);
    }

    #[test]
    fn silent_oracle_keeps_precision() {
        let c = small();
        let t = c.thesaurus().find("rock").unwrap();
        let mut o = OracleUser::for_mode(t, Mode::Voir2, 3);
        o.judgments_per_iteration = 0;
        let tr = simulate_session(&c, Mode::Voir2, &o, 4, 10, SessionConfig::default()).unwrap();
        assert!(tr.iterations.windows(2).all(|w| w[0].precision == w[1].precision));
    }

    #[test]
    fn oracle_granularity_must_fit_mode() {
        let c = small();
        let t = c.thesaurus().find("rock").unwrap();
        let o = OracleUser::for_mode(t, Mode::Voir2, 3);
        assert!(matches!(simulate_session(&c, Mode::Voir3, &o, 2, 10, SessionConfig::default()), Err(Error::ModeViolation { .. })));
    }

    #[test]
    fn term_without_examples_cannot_compose() {
        let mut c = small();
        let t = c.thesaurus_mut().add("unused", None).unwrap();
        let o = OracleUser::for_mode(t, Mode::Voir2, 3);
        assert!(matches!(simulate_session(&c, Mode::Voir2, &o, 2, 10, SessionConfig::default()), Err(Error::CannotComposeQuery(_))));
    }

    #[test]
    fn sessions_are_reproducible() {
        let c = small();
        let t = c.thesaurus().find("snow").unwrap();
        let o = OracleUser::for_mode(t, Mode::Voir3, 11);
        let a = simulate_session(&c, Mode::Voir3, &o, 4, 10, SessionConfig::default()).unwrap();
        let b = simulate_session(&c, Mode::Voir3, &o, 4, 10, SessionConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(small(), c);
    }

    #[test]
    fn hand_fixed_pair_reproduces_printed_cell() {
        let a = [1.0; 9];
        let mut b = [0.0; 9];
        b[0] = 2.0;
        let row = summarize_pair(Mode::Voir3, Mode::Voir1, &a, &b).unwrap();
        assert_eq!((row.plus, row.minus), (8, 1));
        assert_eq!(row.sign_p_text(), "0.0196");
    }

    #[test]
    fn no_feedback_means_no_evidence() {
        let c = small();
        let terms: Vec<TermId> = c.thesaurus().terms().map(|t| t.id).take(2).collect();
        let seeds: Vec<u64> = (0..10).collect();
        let settings = CompareSettings { judgments_per_iteration: 0, max_iterations: 2, ..CompareSettings::default() };
        let r = compare_modes(&c, &terms, &seeds, &settings).unwrap();
        assert!(r.pairs.iter().all(|p| p.sign_p.is_none() && p.plus + p.minus == 0));
        assert!(r.to_table().contains("no evidence"));
        assert!(r.to_csv().starts_with("pair,plus,minus,sign_p,wilcoxon_p\n"));
        assert!(compare_modes(&c, &terms, &seeds[..9], &settings).is_err());
    }
}
