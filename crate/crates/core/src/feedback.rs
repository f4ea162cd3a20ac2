//! Per-session relevance feedback: query-point movement, intra/inter
//! re-weighting and query expansion into further visual categories.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::ids::{CategoryId, ImageId, RegionId, TermId};
use crate::model::{FeatureSchema, FeatureVector};
use crate::similarity::{self, block_similarities, multipoint_score, IntraWeights, InterWeights, Mode, Query, QueryPoint, RankedResult};

/// Floor for standard deviations and inter weights.
pub const WEIGHT_EPSILON: f64 = 1e-4;
pub const DEFAULT_EXPANSION_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RocchioParams {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RocchioParams {
    fn default() -> Self {
        RocchioParams { beta: 0.75, gamma: 0.25 }
    }
}

impl RocchioParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta.is_finite() && gamma.is_finite() && beta > 0.0 && gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("rocchio parameters beta={beta} gamma={gamma}")));
        }
        Ok(RocchioParams { beta, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Polarity {
    Relevant,
    NonRelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Target {
    Region(RegionId),
    Image(ImageId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Judgment {
    pub target: Target,
    pub polarity: Polarity,
}

impl Judgment {
    pub fn region(id: RegionId, polarity: Polarity) -> Self {
        Judgment { target: Target::Region(id), polarity }
    }

    pub fn image(id: ImageId, polarity: Polarity) -> Self {
        Judgment { target: Target::Image(id), polarity }
    }
}

/// A judgment resolved to the concept and region it applied to; this is
/// what the learning loop consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecordedJudgment {
    pub term_id: TermId,
    pub region_id: RegionId,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionConfig {
    pub rocchio: RocchioParams,
    /// Expansion threshold on `D_ji / D_jk`.
    pub expansion_threshold: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { rocchio: RocchioParams::default(), expansion_threshold: DEFAULT_EXPANSION_THRESHOLD }
    }
}

/// `Q + beta * mean(relevant) - gamma * mean(nonrelevant)`, clamped to
/// `[0, 1]`. An empty set contributes nothing.
pub fn rocchio_update(
    q: &FeatureVector,
    relevant: &[FeatureVector],
    nonrelevant: &[FeatureVector],
    params: RocchioParams,
) -> Result<FeatureVector> {
    let dim = q.len();
    if let Some(v) = relevant.iter().chain(nonrelevant).find(|v| v.len() != dim) {
        return Err(Error::SchemaMismatch(format!("vector of {} components, query has {dim}", v.len())));
    }
    let mean = |set: &[FeatureVector]| -> Vec<f64> {
        let mut sum = alloc::vec![0.0; dim];
        for v in set {
            for (s, c) in sum.iter_mut().zip(v.as_slice()) {
                *s += c;
            }
        }
        if !set.is_empty() {
            let n = set.len() as f64;
            sum.iter_mut().for_each(|s| *s /= n);
        }
        sum
    };
    let (r, s) = (mean(relevant), mean(nonrelevant));
    let out = q
        .as_slice()
        .iter()
        .zip(r.iter().zip(&s))
        .map(|(&qj, (&rj, &sj))| (qj + params.beta * rj - params.gamma * sj).clamp(0.0, 1.0))
        .collect();
    FeatureVector::new(out)
}

/// Intra weights `1 / max(sigma_j, eps)` from the good examples' population
/// standard deviations, renormalized per block.
pub fn reweight_intra(schema: &FeatureSchema, good: &[FeatureVector]) -> Result<IntraWeights> {
    if good.is_empty() {
        return Err(Error::InvalidArgument("no good examples to reweight from".into()));
    }
    for v in good {
        schema.check(v)?;
    }
    let n = good.len() as f64;
    let raw: Vec<f64> = (0..schema.dim())
        .map(|j| {
            let mean = good.iter().map(|v| v[j]).sum::<f64>() / n;
            let var = good.iter().map(|v| (v[j] - mean) * (v[j] - mean)).sum::<f64>() / n;
            1.0 / libm::sqrt(var).max(WEIGHT_EPSILON)
        })
        .collect();
    let mut w = raw.clone();
    for r in schema.block_ranges() {
        let total: f64 = raw[r.clone()].iter().sum();
        for j in r {
            w[j] = raw[j] / total;
        }
    }
    IntraWeights::new(schema, w)
}

/// `W_i' = max(W_i * (1 + delta_i), eps)`, renormalized.
pub fn reweight_inter(current: &InterWeights, delta: &[f64]) -> Result<InterWeights> {
    if delta.len() != current.len() {
        return Err(Error::SchemaMismatch(format!("{} discrimination values for {} blocks", delta.len(), current.len())));
    }
    if delta.iter().any(|d| !(-1.0..=1.0).contains(d)) {
        return Err(Error::InvalidArgument("discrimination values must lie in [-1, 1]".into()));
    }
    let raw: Vec<f64> = current.as_slice().iter().zip(delta).map(|(w, d)| (w * (1.0 + d)).max(WEIGHT_EPSILON)).collect();
    let total: f64 = raw.iter().sum();
    InterWeights::new(raw.into_iter().map(|w| w / total).collect())
}

/// Whether a new relevant example `f_i` seeds another visual category rather
/// than reinforcing the evaluated item `f_j`.
///
/// `D_ji = |f_j - f_i|` and `D_jk` is the smallest distance from `f_j` to
/// the items of other categories. Expands iff `D_ji / D_jk > thr`. With no
/// other category the answer is `false`; with `D_jk = 0` it is `D_ji > 0`.
pub fn should_expand<'a, I>(f_j: &FeatureVector, f_i: &FeatureVector, other_category_items: I, thr: f64) -> Result<bool>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    if !(thr.is_finite() && thr > 0.0) {
        return Err(Error::InvalidArgument(format!("expansion threshold {thr} must be positive")));
    }
    if f_j.len() != f_i.len() {
        return Err(Error::SchemaMismatch("expansion vectors differ in length".into()));
    }
    let d_ji = f_j.euclidean(f_i);
    let d_jk = other_category_items.into_iter().map(|f_k| f_j.euclidean(f_k)).reduce(f64::min);
    Ok(match d_jk {
        None => false,
        Some(d_jk) if d_jk > 0.0 => d_ji / d_jk > thr,
        Some(_) => {
            if d_ji > 0.0 {
                log::debug!("expansion ratio undefined (D_jk = 0, D_ji = {d_ji}); expanding");
            }
            d_ji > 0.0
        }
    })
}

/// One interactive query session.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionState {
    pub session_id: u64,
    pub mode: Mode,
    pub query: Query,
    pub iteration: u64,
    pub config: SessionConfig,
    /// Raw judgments per applied iteration.
    pub history: Vec<Vec<Judgment>>,
    /// Judgments resolved to (concept, region), for the learning loop.
    pub recorded: Vec<RecordedJudgment>,
    /// Cumulative relevant vectors per query point, parallel to
    /// `query.concepts`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_pairs"))]
    evidence: BTreeMap<TermId, Vec<Vec<FeatureVector>>>,
}

impl SessionState {
    /// Starts a session from one example region per concept.
    pub fn new(catalog: &Catalog, session_id: u64, mode: Mode, concepts: &[(TermId, RegionId)], config: SessionConfig) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::InvalidQuery("a session needs at least one concept".into()));
        }
        if !(config.expansion_threshold.is_finite() && config.expansion_threshold > 0.0) {
            return Err(Error::InvalidConfig("expansion threshold must be positive".into()));
        }
        RocchioParams::new(config.rocchio.beta, config.rocchio.gamma)?;
        let schema = catalog.schema();
        let mut points: BTreeMap<TermId, Vec<QueryPoint>> = BTreeMap::new();
        let mut evidence: BTreeMap<TermId, Vec<Vec<FeatureVector>>> = BTreeMap::new();
        for &(term, region) in concepts {
            catalog.thesaurus().get(term)?;
            let r = catalog.region(region)?;
            points.entry(term).or_default().push(QueryPoint::new(schema, r.features.clone(), term, r.visual_category_id)?);
            evidence.entry(term).or_default().push(Vec::new());
        }
        Ok(SessionState {
            session_id,
            mode,
            query: Query { concepts: points, inter: InterWeights::uniform(schema.block_count()) },
            iteration: 0,
            config,
            history: Vec::new(),
            recorded: Vec::new(),
            evidence,
        })
    }

    pub fn results(&self, catalog: &Catalog, top_k: usize) -> Result<Vec<RankedResult>> {
        similarity::rank(catalog, &self.query, top_k, self.mode)
    }

    /// Rejects judgments the session's mode does not allow.
    pub fn check_mode(mode: Mode, judgments: &[Judgment]) -> Result<()> {
        if mode == Mode::Voir1 {
            return Err(Error::ModeViolation { mode, what: "relevance feedback" });
        }
        for j in judgments {
            match j.target {
                Target::Region(_) if !mode.accepts_region_judgments() => {
                    return Err(Error::ModeViolation { mode, what: "region-level feedback" })
                }
                Target::Image(_) if !mode.accepts_image_judgments() => {
                    return Err(Error::ModeViolation { mode, what: "image-level feedback" })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Applies one round of judgments and advances the iteration counter.
    pub fn apply_feedback(&mut self, catalog: &Catalog, judgments: &[Judgment]) -> Result<()> {
        Self::check_mode(self.mode, judgments)?;
        let schema = catalog.schema();
        let mut seen = BTreeSet::new();
        for j in judgments {
            if !seen.insert(j.target) {
                return Err(Error::InvalidArgument(format!("{:?} judged twice in one iteration", j.target)));
            }
            match j.target {
                Target::Region(r) => {
                    catalog.region(r)?;
                }
                Target::Image(i) => {
                    catalog.image(i)?;
                }
            }
        }

        // (1) resolve every judgment to (concept, region)
        let mut resolved: Vec<RecordedJudgment> = Vec::new();
        for j in judgments {
            match j.target {
                Target::Image(image) => {
                    for (term_id, region_id) in similarity::best_regions(catalog, &self.query, image)? {
                        resolved.push(RecordedJudgment { term_id, region_id, polarity: j.polarity });
                    }
                }
                Target::Region(region_id) => {
                    let features = &catalog.region(region_id)?.features;
                    let mut best: Option<(TermId, f64)> = None;
                    for (term, points) in &self.query.concepts {
                        let s = multipoint_score(schema, points, features, &self.query.inter)?;
                        if best.is_none_or(|(_, b)| s > b) {
                            best = Some((*term, s));
                        }
                    }
                    let (term_id, _) = best.expect("sessions have at least one concept");
                    resolved.push(RecordedJudgment { term_id, region_id, polarity: j.polarity });
                }
            }
        }

        // (2) assign to the nearest existing point, and (6) decide expansion
        // against that point before it moves
        #[derive(Default)]
        struct Batch {
            relevant: Vec<FeatureVector>,
            nonrelevant: Vec<FeatureVector>,
        }
        let mut batches: BTreeMap<(TermId, usize), Batch> = BTreeMap::new();
        let mut expansions: Vec<(TermId, RegionId)> = Vec::new();
        let mut rel_sims: Vec<Vec<f64>> = Vec::new();
        let mut non_sims: Vec<Vec<f64>> = Vec::new();
        for rj in &resolved {
            let region = catalog.region(rj.region_id)?;
            let v = &region.features;
            let points = &self.query.concepts[&rj.term_id];
            let idx = nearest_point(points, v);
            let point = &points[idx];
            let sims = block_similarities(schema, point, v)?;
            match rj.polarity {
                Polarity::Relevant => {
                    rel_sims.push(sims);
                    // F_K: clustered items outside the new example's own category
                    let others = catalog
                        .regions()
                        .filter(|r| r.visual_category_id.is_some() && r.visual_category_id != region.visual_category_id)
                        .map(|r| &r.features);
                    let covered = region.visual_category_id.is_some()
                        && points.iter().any(|p| p.source_category_id == region.visual_category_id);
                    if !covered && should_expand(&point.point, v, others, self.config.expansion_threshold)? {
                        expansions.push((rj.term_id, rj.region_id));
                    } else {
                        batches.entry((rj.term_id, idx)).or_default().relevant.push(v.clone());
                    }
                }
                Polarity::NonRelevant => {
                    non_sims.push(sims);
                    batches.entry((rj.term_id, idx)).or_default().nonrelevant.push(v.clone());
                }
            }
        }

        // (3) move points and (4) re-weight components
        for ((term, idx), batch) in batches {
            let point = &mut self.query.concepts.get_mut(&term).expect("resolved concept")[idx];
            point.point = rocchio_update(&point.point, &batch.relevant, &batch.nonrelevant, self.config.rocchio)?;
            let good = &mut self.evidence.get_mut(&term).expect("parallel evidence")[idx];
            good.extend(batch.relevant);
            if !good.is_empty() {
                point.intra = reweight_intra(schema, good)?;
            }
        }

        // (5) re-weight blocks from the pooled per-block discrimination
        if !resolved.is_empty() {
            let blocks = schema.block_count();
            let mean = |sims: &[Vec<f64>], i: usize| {
                if sims.is_empty() {
                    0.0
                } else {
                    sims.iter().map(|s| s[i]).sum::<f64>() / sims.len() as f64
                }
            };
            let delta: Vec<f64> = (0..blocks).map(|i| (mean(&rel_sims, i) - mean(&non_sims, i)).clamp(-1.0, 1.0)).collect();
            self.query.inter = reweight_inter(&self.query.inter, &delta)?;
        }

        // (6) expansion: new seeds, one point per (concept, category) per round
        let mut added: BTreeMap<(TermId, Option<CategoryId>), usize> = BTreeMap::new();
        for (term, region_id) in expansions {
            let region = catalog.region(region_id)?;
            let key = (term, region.visual_category_id);
            let points = self.query.concepts.get_mut(&term).expect("resolved concept");
            let good = self.evidence.get_mut(&term).expect("parallel evidence");
            match added.get(&key) {
                Some(&idx) => {
                    good[idx].push(region.features.clone());
                    points[idx].intra = reweight_intra(schema, &good[idx])?;
                }
                None => {
                    log::debug!("expanding {term} with a seed from {:?}", region.visual_category_id);
                    points.push(QueryPoint::new(schema, region.features.clone(), term, region.visual_category_id)?);
                    good.push(alloc::vec![region.features.clone()]);
                    added.insert(key, points.len() - 1);
                }
            }
        }

        // (7)
        self.iteration += 1;
        self.history.push(judgments.to_vec());
        self.recorded.extend(resolved);
        Ok(())
    }
}

fn nearest_point(points: &[QueryPoint], v: &FeatureVector) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = p.point.euclidean(v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockSpec;
    use alloc::vec;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rocchio_empty_sets_keep_query() {
        let q = fv(&[0.3, 0.7]);
        assert_eq!(rocchio_update(&q, &[], &[], RocchioParams::default()).unwrap(), q);
    }

    #[test]
    fn rocchio_hand_examples() {
        let p = RocchioParams::new(1.0, 0.3).unwrap();
        assert_eq!(rocchio_update(&fv(&[0.0, 0.0]), &[fv(&[0.2, 0.4])], &[], p).unwrap(), fv(&[0.2, 0.4]));
        let p = RocchioParams::new(0.5, 0.25).unwrap();
        let out = rocchio_update(&fv(&[0.1, 0.0]), &[fv(&[0.3, 0.0]), fv(&[0.5, 0.0])], &[fv(&[0.0, 0.2])], p).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn rocchio_schema_mismatch() {
        assert!(rocchio_update(&fv(&[0.0]), &[fv(&[0.0, 1.0])], &[], RocchioParams::default()).is_err());
        assert!(RocchioParams::new(0.0, 0.1).is_err());
        assert!(RocchioParams::new(1.0, -0.1).is_err());
    }

    #[test]
    fn intra_single_example_is_uniform() {
        let s = FeatureSchema::new(vec![BlockSpec::new("a", 3), BlockSpec::new("b", 2)]).unwrap();
        let w = reweight_intra(&s, &[fv(&[0.1, 0.2, 0.3, 0.4, 0.5])]).unwrap();
        assert_eq!(w, IntraWeights::uniform(&s));
    }

    #[test]
    fn intra_inverse_sigma() {
        let s = FeatureSchema::new(vec![BlockSpec::new("a", 2)]).unwrap();
        // sigma = (0.1, 0.2)
        let w = reweight_intra(&s, &[fv(&[0.4, 0.3]), fv(&[0.6, 0.7])]).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(reweight_intra(&s, &[]).is_err());
    }

    #[test]
    fn intra_constant_component_dominates() {
        let s = FeatureSchema::new(vec![BlockSpec::new("a", 3)]).unwrap();
        let w = reweight_intra(&s, &[fv(&[0.5, 0.1, 0.9]), fv(&[0.5, 0.4, 0.2])]).unwrap();
        let w = w.as_slice();
        assert!(w[0] > w[1] && w[0] > w[2]);
    }

    #[test]
    fn inter_examples() {
        let w = InterWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(reweight_inter(&w, &[0.0, 0.0]).unwrap(), w);
        let out = reweight_inter(&w, &[0.5, 0.0]).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((out.as_slice()[1] - 0.4).abs() < 1e-12);
        let collapsed = reweight_inter(&w, &[-1.0, 0.0]).unwrap();
        let expected = WEIGHT_EPSILON / (WEIGHT_EPSILON + 0.5);
        assert!((collapsed.as_slice()[0] - expected).abs() < 1e-15);
        assert!(collapsed.as_slice()[0] < collapsed.as_slice()[1]);
        assert!(reweight_inter(&w, &[0.1]).is_err());
        assert!(reweight_inter(&w, &[1.5, 0.0]).is_err());
    }

    #[test]
    fn expansion_rule() {
        let fj = fv(&[0.0, 0.0]);
        assert!(!should_expand(&fj, &fj, [&fv(&[1.0, 0.0])], 1.0).unwrap());
        assert!(should_expand(&fj, &fv(&[0.5, 0.0]), [&fv(&[0.1, 0.0]), &fv(&[0.3, 0.0])], 1.0).unwrap());
        assert!(!should_expand(&fj, &fv(&[0.5, 0.0]), [], 1.0).unwrap());
        // D_jk = 0
        assert!(should_expand(&fj, &fv(&[0.5, 0.0]), [&fj], 1.0).unwrap());
        assert!(!should_expand(&fj, &fj, [&fj], 1.0).unwrap());
        assert!(should_expand(&fj, &fj, [], 0.0).is_err());
    }
}
