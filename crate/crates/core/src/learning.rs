//! Offline clustering of regions into visual categories, and the
//! cross-session term-region association learning loop.
//!
//! Evidence is counted per (term, visual category). Whenever a row changes,
//! every member region of the category without a manual association gets a
//! learned confidence `round(100 * P / (P + N + 1))` with
//! `P = 2 * manual + positive` and `N = negative`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Association, Catalog, Origin, MAX_CONF};
use crate::error::{Error, Result};
use crate::feedback::{Polarity, RecordedJudgment};
use crate::ids::{CategoryId, RegionId, TermId};
use crate::model::{FeatureVector, VisualCategory};

/// Weight of one manual association relative to one positive judgment.
pub const MANUAL_EVIDENCE_WEIGHT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum ClusterCount {
    Fixed(usize),
    /// `max(1, round(sqrt(n / 2)))`.
    Auto,
}

impl ClusterCount {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            ClusterCount::Fixed(k) => k,
            ClusterCount::Auto => (libm::round(libm::sqrt(n as f64 / 2.0)) as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusteringConfig {
    pub k: ClusterCount,
    pub max_iterations: usize,
    /// Breaks ties between equally distant seeding candidates.
    pub rng_seed: u64,
    pub convergence_epsilon: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { k: ClusterCount::Auto, max_iterations: 100, rng_seed: 0, convergence_epsilon: 1e-9 }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-point seeding from the lexicographically smallest vector.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let first = (0..points.len())
        .min_by(|&a, &b| {
            points[a]
                .iter()
                .zip(points[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("at least one point");
    let mut chosen = alloc::vec![first];
    let mut taken = alloc::vec![false; points.len()];
    taken[first] = true;
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, points[first])).collect();
    while chosen.len() < k {
        let best = (0..points.len()).filter(|&i| !taken[i]).map(|i| nearest[i]).fold(f64::NEG_INFINITY, f64::max);
        let candidates: Vec<usize> = (0..points.len()).filter(|&i| !taken[i] && nearest[i] == best).collect();
        let next = if candidates.len() == 1 { candidates[0] } else { candidates[rng.random_range(0..candidates.len())] };
        chosen.push(next);
        taken[next] = true;
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, points[next]));
        }
    }
    chosen
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd's k-means. Returns the assignment of each point and the centroids,
/// each centroid being the mean of its assigned points.
pub fn kmeans(points: &[&[f64]], k: usize, config: &ClusteringConfig) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidConfig("nothing to cluster".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} with {n} points")));
    }
    if config.max_iterations == 0 {
        return Err(Error::InvalidConfig("max_iterations must be positive".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::SchemaMismatch("points of different dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut centers: Vec<Vec<f64>> = seed_centers(points, k, &mut rng).into_iter().map(|i| points[i].to_vec()).collect();
    let mut assignment = alloc::vec![0usize; n];
    for _ in 0..config.max_iterations {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest_center(p, &centers);
        }
        let mut sizes = alloc::vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            // reseed with the point farthest from its own centroid
            let donor = (0..n)
                .filter(|&i| sizes[assignment[i]] > 1)
                .map(|i| (i, dist2(points[i], &centers[assignment[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                })
                .map(|(i, _)| i)
                .expect("k <= n leaves a cluster with two points");
            sizes[assignment[donor]] -= 1;
            assignment[donor] = c;
            sizes[c] = 1;
            centers[c] = points[donor].to_vec();
        }
        let mut sums = alloc::vec![alloc::vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            for (s, x) in sums[assignment[i]].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let size = sizes[c] as f64;
            sums[c].iter_mut().for_each(|s| *s /= size);
            shift = shift.max(libm::sqrt(dist2(&sums[c], &centers[c])));
        }
        centers = sums;
        if shift < config.convergence_epsilon {
            break;
        }
    }
    Ok((assignment, centers))
}

/// Clusters region vectors into visual categories with provisional ids
/// `0..k`, ordered by their smallest member id.
pub fn cluster_regions(vectors: &[(RegionId, FeatureVector)], config: &ClusteringConfig) -> Result<Vec<VisualCategory>> {
    if vectors.is_empty() {
        return Err(Error::InvalidConfig("no regions to cluster".into()));
    }
    let k = config.k.resolve(vectors.len());
    let points: Vec<&[f64]> = vectors.iter().map(|(_, v)| v.as_slice()).collect();
    let (assignment, centers) = kmeans(&points, k, config)?;
    let mut members = alloc::vec![BTreeSet::new(); k];
    for ((rid, _), &c) in vectors.iter().zip(&assignment) {
        members[c].insert(*rid);
    }
    let mut cats: Vec<(BTreeSet<RegionId>, Vec<f64>)> = members.into_iter().zip(centers).collect();
    cats.sort_by_key(|(m, _)| m.first().copied());
    Ok(cats
        .into_iter()
        .enumerate()
        .map(|(i, (members, centroid))| VisualCategory { id: CategoryId(i as u64), members, centroid: FeatureVector(centroid) })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvidenceRow {
    pub manual_count: u64,
    pub pos_events: u64,
    pub neg_events: u64,
}

impl EvidenceRow {
    /// Learned confidence, rounded half up with integer arithmetic.
    pub fn learned_confidence(&self) -> u8 {
        let p = MANUAL_EVIDENCE_WEIGHT * self.manual_count + self.pos_events;
        let d = p + self.neg_events + 1;
        ((200 * p as u128 + d as u128) / (2 * d as u128)) as u8
    }
}

/// Evidence counters per (term, visual category).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvidenceLedger {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_pairs"))]
    rows: BTreeMap<(TermId, CategoryId), EvidenceRow>,
}

impl EvidenceLedger {
    pub fn get(&self, term: TermId, category: CategoryId) -> Option<&EvidenceRow> {
        self.rows.get(&(term, category))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(TermId, CategoryId), &EvidenceRow)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn row_mut(&mut self, term: TermId, category: CategoryId) -> &mut EvidenceRow {
        self.rows.entry((term, category)).or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssociationChange {
    Upserted(Association),
    Removed { term_id: TermId, region_id: RegionId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateSummary {
    pub touched: BTreeSet<(TermId, CategoryId)>,
    pub changes: Vec<AssociationChange>,
    /// Judgments on regions without a category, which carry no evidence.
    pub skipped: usize,
}

impl Catalog {
    fn category_of(&self, region: RegionId) -> Result<Option<CategoryId>> {
        Ok(self.region(region)?.visual_category_id)
    }

    /// Rebuilds the visual categories from scratch. Ledger rows follow the
    /// new category overlapping most with their old one; manual counts are
    /// recounted and learned associations recomputed from the ledger.
    pub fn cluster(&mut self, config: &ClusteringConfig) -> Result<Vec<CategoryId>> {
        let vectors: Vec<(RegionId, FeatureVector)> = self.regions.values().map(|r| (r.id, r.features.clone())).collect();
        let clusters = cluster_regions(&vectors, config)?;

        let mut new_cats = BTreeMap::new();
        let mut new_of_region = BTreeMap::new();
        for c in clusters {
            let id = CategoryId(self.next_category);
            self.next_category += 1;
            for m in &c.members {
                new_of_region.insert(*m, id);
            }
            new_cats.insert(id, VisualCategory { id, ..c });
        }
        let mut remap: BTreeMap<CategoryId, CategoryId> = BTreeMap::new();
        for (old_id, old) in &self.categories {
            let mut overlap: BTreeMap<CategoryId, usize> = BTreeMap::new();
            for m in &old.members {
                if let Some(n) = new_of_region.get(m) {
                    *overlap.entry(*n).or_default() += 1;
                }
            }
            // highest overlap, lowest id on ties
            if let Some((n, _)) = overlap.into_iter().fold(None, |best: Option<(CategoryId, usize)>, (n, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((n, c)),
            }) {
                remap.insert(*old_id, n);
            }
        }
        let mut ledger = EvidenceLedger::default();
        for ((term, old), row) in &self.ledger.rows {
            if let Some(n) = remap.get(old) {
                let r = ledger.row_mut(*term, *n);
                r.pos_events += row.pos_events;
                r.neg_events += row.neg_events;
            }
        }
        for r in self.regions.values_mut() {
            r.visual_category_id = new_of_region.get(&r.id).copied();
        }
        for a in self.associations.values() {
            if a.origin == Origin::Manual {
                if let Some(c) = new_of_region.get(&a.region_id) {
                    ledger.row_mut(a.term_id, *c).manual_count += 1;
                }
            }
        }
        self.categories = new_cats;
        self.ledger = ledger;
        self.associations.retain(|_, a| a.origin == Origin::Manual);
        let rows: Vec<_> = self.ledger.rows.keys().copied().collect();
        for (term, cat) in rows {
            self.propagate_associations(term, cat)?;
        }
        Ok(self.categories.keys().copied().collect())
    }

    /// Creates (or upgrades to) a manual association with confidence 100 and
    /// propagates through the region's category.
    pub fn set_manual_association(&mut self, term: TermId, region: RegionId) -> Result<Association> {
        self.thesaurus.get(term)?;
        let category = self.category_of(region)?;
        if let Some(existing) = self.associations.get(&(term, region)) {
            if existing.origin == Origin::Manual {
                return Err(Error::Conflict(format!("{term} / {region} is already a manual association")));
            }
        }
        let assoc = Association::manual(term, region);
        self.associations.insert((term, region), assoc.clone());
        if let Some(c) = category {
            self.ledger.row_mut(term, c).manual_count += 1;
            self.propagate_associations(term, c)?;
        }
        Ok(assoc)
    }

    pub fn record_feedback_evidence(&mut self, term: TermId, region: RegionId, polarity: Polarity) -> Result<CategoryId> {
        self.thesaurus.get(term)?;
        let c = self.category_of(region)?.ok_or_else(|| Error::Precondition(format!("{region} is not clustered")))?;
        let row = self.ledger.row_mut(term, c);
        match polarity {
            Polarity::Relevant => row.pos_events += 1,
            Polarity::NonRelevant => row.neg_events += 1,
        }
        Ok(c)
    }

    /// Recomputes learned associations of `term` over every member of
    /// `category`. Manual associations are never touched.
    pub fn propagate_associations(&mut self, term: TermId, category: CategoryId) -> Result<Vec<AssociationChange>> {
        let row = *self
            .ledger
            .get(term, category)
            .ok_or_else(|| Error::Precondition(format!("no evidence for {term} in {category}")))?;
        let members: Vec<RegionId> = self.category(category)?.members.iter().copied().collect();
        let d_conf = row.learned_confidence();
        debug_assert!(d_conf <= MAX_CONF);
        let mut changes = Vec::new();
        for region_id in members {
            let key = (term, region_id);
            match self.associations.get(&key) {
                Some(a) if a.origin == Origin::Manual => continue,
                _ => {}
            }
            if d_conf == 0 {
                if self.associations.remove(&key).is_some() {
                    changes.push(AssociationChange::Removed { term_id: term, region_id });
                }
            } else {
                let a = Association {
                    term_id: term,
                    region_id,
                    d_conf,
                    origin: Origin::Learned,
                    pos_events: row.pos_events,
                    neg_events: row.neg_events,
                };
                if self.associations.get(&key) != Some(&a) {
                    self.associations.insert(key, a.clone());
                    changes.push(AssociationChange::Upserted(a));
                }
            }
        }
        Ok(changes)
    }

    /// Replays session judgments into the ledger and re-propagates every
    /// touched (term, category).
    pub fn periodic_update(&mut self, judgments: &[RecordedJudgment]) -> Result<UpdateSummary> {
        let mut summary = UpdateSummary::default();
        for j in judgments {
            match self.category_of(j.region_id)? {
                Some(_) => {
                    let c = self.record_feedback_evidence(j.term_id, j.region_id, j.polarity)?;
                    summary.touched.insert((j.term_id, c));
                }
                None => {
                    log::warn!("skipping judgment on unclustered {}", j.region_id);
                    summary.skipped += 1;
                }
            }
        }
        for &(term, cat) in &summary.touched {
            summary.changes.extend(self.propagate_associations(term, cat)?);
        }
        Ok(summary)
    }

    /// Number of associations with `d_conf >= min_conf`.
    pub fn confident_associations(&self, min_conf: u8) -> usize {
        self.associations.values().filter(|a| a.d_conf >= min_conf).count()
    }
}
