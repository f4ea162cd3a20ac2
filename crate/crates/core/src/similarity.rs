//! Weighted block distances, the combined query-object score and ranking.
//!
//! A query holds one or more points per concept. A region's score for a
//! concept is its best score over that concept's points; an image's score
//! for a concept is its best region; the image score is the mean over
//! concepts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::ids::{CategoryId, ImageId, RegionId, TermId};
use crate::model::{FeatureSchema, FeatureVector};

/// Tolerance for weight vectors summing to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// The three system variants compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    /// No relevance feedback, no best-region display.
    #[cfg_attr(feature = "serde", serde(rename = "voir1"))]
    Voir1,
    /// Image-level feedback only.
    #[cfg_attr(feature = "serde", serde(rename = "voir2"))]
    Voir2,
    /// Region-level feedback and best-region display.
    #[cfg_attr(feature = "serde", serde(rename = "voir3"))]
    Voir3,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Voir1, Mode::Voir2, Mode::Voir3];

    pub fn accepts_image_judgments(self) -> bool {
        self == Mode::Voir2
    }

    pub fn accepts_region_judgments(self) -> bool {
        self == Mode::Voir3
    }

    pub fn shows_best_region(self) -> bool {
        self == Mode::Voir3
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "voir1" | "1" => Some(Mode::Voir1),
            "voir2" | "2" => Some(Mode::Voir2),
            "voir3" | "3" => Some(Mode::Voir3),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Voir1 => "VOIR-1",
            Mode::Voir2 => "VOIR-2",
            Mode::Voir3 => "VOIR-3",
        })
    }
}

fn sums_to_one(w: &[f64]) -> bool {
    (w.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE
}

/// Per-component weights; each block's weights sum to one.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct IntraWeights(Vec<f64>);

impl IntraWeights {
    pub fn uniform(schema: &FeatureSchema) -> Self {
        let mut w = alloc::vec![0.0; schema.dim()];
        for r in schema.block_ranges() {
            let share = 1.0 / r.len() as f64;
            w[r].fill(share);
        }
        IntraWeights(w)
    }

    pub fn new(schema: &FeatureSchema, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != schema.dim() {
            return Err(Error::SchemaMismatch(format!("{} intra weights for {} components", weights.len(), schema.dim())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("intra weights must be finite and non-negative".into()));
        }
        for (i, r) in schema.block_ranges().enumerate() {
            if !sums_to_one(&weights[r]) {
                return Err(Error::InvalidArgument(format!("intra weights of block {i} do not sum to 1")));
            }
        }
        Ok(IntraWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-block weights summing to one.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct InterWeights(Vec<f64>);

impl InterWeights {
    pub fn uniform(blocks: usize) -> Self {
        InterWeights(alloc::vec![1.0 / blocks as f64; blocks])
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !sums_to_one(&weights) {
            return Err(Error::InvalidArgument("inter weights must be non-negative and sum to 1".into()));
        }
        Ok(InterWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One query point of a concept.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryPoint {
    pub point: FeatureVector,
    pub intra: IntraWeights,
    pub concept_term_id: TermId,
    pub source_category_id: Option<CategoryId>,
}

impl QueryPoint {
    pub fn new(schema: &FeatureSchema, point: FeatureVector, concept: TermId, source_category: Option<CategoryId>) -> Result<Self> {
        schema.check(&point)?;
        Ok(QueryPoint { intra: IntraWeights::uniform(schema), point, concept_term_id: concept, source_category_id: source_category })
    }
}

/// Per-concept query point sets plus the shared inter weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Query {
    pub concepts: BTreeMap<TermId, Vec<QueryPoint>>,
    pub inter: InterWeights,
}

impl Query {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::InvalidQuery("no concepts".into()));
        }
        if self.inter.len() != schema.block_count() {
            return Err(Error::SchemaMismatch(format!("{} inter weights for {} blocks", self.inter.len(), schema.block_count())));
        }
        for (term, points) in &self.concepts {
            if points.is_empty() {
                return Err(Error::InvalidQuery(format!("concept {term} has no query points")));
            }
            for p in points {
                if p.concept_term_id != *term {
                    return Err(Error::InvalidQuery(format!("point of {} filed under {term}", p.concept_term_id)));
                }
                schema.check(&p.point)?;
                if p.intra.as_slice().len() != schema.dim() {
                    return Err(Error::SchemaMismatch("intra weights do not match schema".into()));
                }
            }
        }
        Ok(())
    }

    pub fn point_count(&self, term: TermId) -> usize {
        self.concepts.get(&term).map_or(0, Vec::len)
    }
}

fn check_pair(schema: &FeatureSchema, a: &FeatureVector, b: &FeatureVector, intra: &IntraWeights) -> Result<()> {
    schema.check(a)?;
    schema.check(b)?;
    if intra.as_slice().len() != schema.dim() {
        return Err(Error::SchemaMismatch("intra weights do not match schema".into()));
    }
    Ok(())
}

fn weighted_distance(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y) * (x - y)).sum::<f64>())
}

/// Weighted Euclidean distance restricted to block `block`.
pub fn block_distance(schema: &FeatureSchema, a: &FeatureVector, b: &FeatureVector, intra: &IntraWeights, block: usize) -> Result<f64> {
    check_pair(schema, a, b, intra)?;
    if block >= schema.block_count() {
        return Err(Error::SchemaMismatch(format!("block {block} out of range")));
    }
    let r = schema.block_range(block);
    Ok(weighted_distance(&a.as_slice()[r.clone()], &b.as_slice()[r.clone()], &intra.as_slice()[r]))
}

/// Per-block similarities `1 / (1 + d_i)` between a query point and a vector.
pub fn block_similarities(schema: &FeatureSchema, q: &QueryPoint, v: &FeatureVector) -> Result<Vec<f64>> {
    check_pair(schema, &q.point, v, &q.intra)?;
    let (a, b, w) = (q.point.as_slice(), v.as_slice(), q.intra.as_slice());
    Ok(schema
        .block_ranges()
        .map(|r| 1.0 / (1.0 + weighted_distance(&a[r.clone()], &b[r.clone()], &w[r])))
        .collect())
}

fn combine(sims: &[f64], inter: &InterWeights) -> f64 {
    let w = inter.as_slice();
    let total: f64 = w.iter().sum();
    // dividing by the weight total keeps identical vectors at exactly 1
    sims.iter().zip(w).map(|(s, w)| w * s).sum::<f64>() / total
}

/// Combined score `sum_i W_i * S_i(q, o)` in `(0, 1]`.
pub fn point_score(schema: &FeatureSchema, q: &QueryPoint, v: &FeatureVector, inter: &InterWeights) -> Result<f64> {
    if inter.len() != schema.block_count() {
        return Err(Error::SchemaMismatch(format!("{} inter weights for {} blocks", inter.len(), schema.block_count())));
    }
    Ok(combine(&block_similarities(schema, q, v)?, inter))
}

/// Best score over a concept's query points.
pub fn multipoint_score(schema: &FeatureSchema, points: &[QueryPoint], v: &FeatureVector, inter: &InterWeights) -> Result<f64> {
    let (first, rest) = points.split_first().ok_or_else(|| Error::InvalidQuery("empty query point set".into()))?;
    let concept = first.concept_term_id;
    let mut best = point_score(schema, first, v, inter)?;
    for p in rest {
        if p.concept_term_id != concept {
            return Err(Error::InvalidQuery("query points span several concepts".into()));
        }
        best = best.max(point_score(schema, p, v, inter)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptMatch {
    pub term_id: TermId,
    pub score: f64,
    /// Only populated in [`Mode::Voir3`].
    pub best_region_id: Option<RegionId>,
    /// Score of every region of the image for this concept, by region id.
    pub region_scores: Vec<(RegionId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankedResult {
    pub image_id: ImageId,
    pub image_score: f64,
    pub concepts: Vec<ConceptMatch>,
}

/// Per concept: term, best region, its score, and every region's score.
type ConceptScores = Vec<(TermId, RegionId, f64, Vec<(RegionId, f64)>)>;

/// Scores one image. Returns the image score and, per concept, the best
/// region with all region scores. Ties between regions go to the lowest id.
fn score_image(catalog: &Catalog, query: &Query, image: ImageId) -> Result<(f64, ConceptScores)> {
    let schema = catalog.schema();
    let img = catalog.image(image)?;
    let mut region_ids = img.region_ids.clone();
    region_ids.sort();
    let mut per_concept = Vec::with_capacity(query.concepts.len());
    let mut total = 0.0;
    for (term, points) in &query.concepts {
        let mut scores = Vec::with_capacity(region_ids.len());
        let mut best: Option<(RegionId, f64)> = None;
        for &rid in &region_ids {
            let s = multipoint_score(schema, points, &catalog.region(rid)?.features, &query.inter)?;
            scores.push((rid, s));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((rid, s));
            }
        }
        let (rid, s) = best.ok_or_else(|| Error::Integrity(format!("image {image} has no regions")))?;
        total += s;
        per_concept.push((*term, rid, s, scores));
    }
    Ok((total / query.concepts.len() as f64, per_concept))
}

/// Ranks every image of the catalog, best first, ties by ascending image id,
/// truncated to `top_k`.
pub fn rank(catalog: &Catalog, query: &Query, top_k: usize, mode: Mode) -> Result<Vec<RankedResult>> {
    if top_k == 0 {
        return Err(Error::InvalidQuery("top_k must be at least 1".into()));
    }
    query.validate(catalog.schema())?;
    let mut results = Vec::with_capacity(catalog.image_count());
    for img in catalog.images() {
        if img.region_ids.is_empty() {
            continue;
        }
        let (image_score, per_concept) = score_image(catalog, query, img.id)?;
        results.push(RankedResult {
            image_id: img.id,
            image_score,
            concepts: per_concept
                .into_iter()
                .map(|(term_id, rid, score, region_scores)| ConceptMatch {
                    term_id,
                    score,
                    best_region_id: mode.shows_best_region().then_some(rid),
                    region_scores,
                })
                .collect(),
        });
    }
    results.sort_by(|a, b| b.image_score.total_cmp(&a.image_score).then(a.image_id.cmp(&b.image_id)));
    results.truncate(top_k);
    Ok(results)
}

/// The engine's best-scored region of `image` for each concept, regardless of
/// what the mode displays.
pub fn best_regions(catalog: &Catalog, query: &Query, image: ImageId) -> Result<BTreeMap<TermId, RegionId>> {
    query.validate(catalog.schema())?;
    let (_, per_concept) = score_image(catalog, query, image)?;
    Ok(per_concept.into_iter().map(|(t, r, _, _)| (t, r)).collect())
}
