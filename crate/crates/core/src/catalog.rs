//! The catalog: the single store that every other module reads from.
//!
//! Mutations (import, clustering, association updates) take `&mut self`;
//! ranking and feedback only need `&Catalog`, so any number of sessions can
//! share one snapshot.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{CategoryId, ImageId, RegionId, TermId};
use crate::learning::EvidenceLedger;
use crate::model::{fold_label, BoundingBox, FeatureSchema, FeatureVector, ImageRecord, Region, RunMask, VisualCategory};
use crate::thesaurus::Thesaurus;

/// Default confidence threshold for concept to visual-category lookups.
pub const DEFAULT_MIN_CONF: u8 = 50;
pub const MAX_CONF: u8 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Origin {
    Manual,
    Learned,
}

/// A weighted term-region link.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Association {
    pub term_id: TermId,
    pub region_id: RegionId,
    pub d_conf: u8,
    pub origin: Origin,
    pub pos_events: u64,
    pub neg_events: u64,
}

impl Association {
    pub fn manual(term_id: TermId, region_id: RegionId) -> Self {
        Association { term_id, region_id, d_conf: MAX_CONF, origin: Origin::Manual, pos_events: 0, neg_events: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(from = "CatalogRepr"))]
pub struct Catalog {
    pub(crate) schema: FeatureSchema,
    pub(crate) normalized: bool,
    pub(crate) images: BTreeMap<ImageId, ImageRecord>,
    pub(crate) regions: BTreeMap<RegionId, Region>,
    pub(crate) thesaurus: Thesaurus,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_pairs"))]
    pub(crate) associations: BTreeMap<(TermId, RegionId), Association>,
    pub(crate) categories: BTreeMap<CategoryId, VisualCategory>,
    pub(crate) ledger: EvidenceLedger,
    pub(crate) next_image: u64,
    pub(crate) next_region: u64,
    pub(crate) next_category: u64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub(crate) image_keys: BTreeMap<String, ImageId>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub(crate) region_keys: BTreeMap<String, RegionId>,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct CatalogRepr {
    schema: FeatureSchema,
    normalized: bool,
    images: BTreeMap<ImageId, ImageRecord>,
    regions: BTreeMap<RegionId, Region>,
    thesaurus: Thesaurus,
    #[serde(with = "crate::serde_pairs")]
    associations: BTreeMap<(TermId, RegionId), Association>,
    categories: BTreeMap<CategoryId, VisualCategory>,
    ledger: EvidenceLedger,
    next_image: u64,
    next_region: u64,
    next_category: u64,
}

#[cfg(feature = "serde")]
impl From<CatalogRepr> for Catalog {
    fn from(r: CatalogRepr) -> Self {
        let mut c = Catalog {
            schema: r.schema,
            normalized: r.normalized,
            images: r.images,
            regions: r.regions,
            thesaurus: r.thesaurus,
            associations: r.associations,
            categories: r.categories,
            ledger: r.ledger,
            next_image: r.next_image,
            next_region: r.next_region,
            next_category: r.next_category,
            image_keys: BTreeMap::new(),
            region_keys: BTreeMap::new(),
        };
        c.reindex();
        c
    }
}

impl Catalog {
    pub fn new(schema: FeatureSchema) -> Self {
        Catalog {
            schema,
            normalized: false,
            images: BTreeMap::new(),
            regions: BTreeMap::new(),
            thesaurus: Thesaurus::new(),
            associations: BTreeMap::new(),
            categories: BTreeMap::new(),
            ledger: EvidenceLedger::default(),
            next_image: 0,
            next_region: 0,
            next_category: 0,
            image_keys: BTreeMap::new(),
            region_keys: BTreeMap::new(),
        }
    }

    #[cfg_attr(not(feature = "serde"), allow(dead_code))]
    fn reindex(&mut self) {
        self.thesaurus.reindex();
        self.image_keys = self.images.values().map(|i| (i.key.clone(), i.id)).collect();
        self.region_keys = self.regions.values().map(|r| (r.key.clone(), r.id)).collect();
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// True once [`normalize_features`](Self::normalize_features) has run.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn thesaurus(&self) -> &Thesaurus {
        &self.thesaurus
    }

    pub fn set_thesaurus(&mut self, thesaurus: Thesaurus) -> Result<()> {
        if !self.associations.is_empty() {
            return Err(Error::Precondition("cannot replace a thesaurus with live associations".into()));
        }
        self.thesaurus = thesaurus;
        Ok(())
    }

    pub fn thesaurus_mut(&mut self) -> &mut Thesaurus {
        &mut self.thesaurus
    }

    pub fn image(&self, id: ImageId) -> Result<&ImageRecord> {
        self.images.get(&id).ok_or(Error::UnknownImage(id))
    }

    pub fn region(&self, id: RegionId) -> Result<&Region> {
        self.regions.get(&id).ok_or(Error::UnknownRegion(id))
    }

    pub fn category(&self, id: CategoryId) -> Result<&VisualCategory> {
        self.categories.get(&id).ok_or(Error::UnknownCategory(id))
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.values()
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn categories(&self) -> impl Iterator<Item = &VisualCategory> {
        self.categories.values()
    }

    pub fn associations(&self) -> impl Iterator<Item = &Association> {
        self.associations.values()
    }

    pub fn association(&self, term: TermId, region: RegionId) -> Option<&Association> {
        self.associations.get(&(term, region))
    }

    pub fn ledger(&self) -> &EvidenceLedger {
        &self.ledger
    }

    pub fn image_by_key(&self, key: &str) -> Option<ImageId> {
        self.image_keys.get(key).copied()
    }

    pub fn region_by_key(&self, key: &str) -> Option<RegionId> {
        self.region_keys.get(key).copied()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn association_count(&self) -> usize {
        self.associations.len()
    }

    pub fn add_image(
        &mut self,
        key: &str,
        source_uri: &str,
        width: u32,
        height: u32,
        keywords: impl IntoIterator<Item = String>,
    ) -> Result<ImageId> {
        if key.is_empty() {
            return Err(Error::InvalidArgument("empty image key".into()));
        }
        if self.image_keys.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        let id = ImageId(self.next_image);
        self.next_image += 1;
        self.images.insert(
            id,
            ImageRecord {
                id,
                key: key.to_string(),
                source_uri: source_uri.to_string(),
                width,
                height,
                region_ids: Vec::new(),
                ground_truth_keywords: keywords.into_iter().map(|k| fold_label(&k)).filter(|k| !k.is_empty()).collect(),
            },
        );
        self.image_keys.insert(key.to_string(), id);
        Ok(id)
    }

    /// Adds a region to an existing image. Image dimensions of 0 mean
    /// "unknown" and skip the bounds check.
    pub fn add_region(
        &mut self,
        image_id: ImageId,
        key: &str,
        bbox: BoundingBox,
        mask: Option<RunMask>,
        features: FeatureVector,
    ) -> Result<RegionId> {
        self.check_region(image_id, key, &bbox, mask.as_ref(), &features)?;
        let id = RegionId(self.next_region);
        self.next_region += 1;
        let image = self.images.get_mut(&image_id).expect("checked");
        image.region_ids.push(id);
        self.regions.insert(
            id,
            Region {
                id,
                image_id,
                key: key.to_string(),
                bbox,
                mask,
                features,
                visual_category_id: None,
                labels: BTreeSet::new(),
            },
        );
        self.region_keys.insert(key.to_string(), id);
        Ok(id)
    }

    pub(crate) fn check_region(
        &self,
        image_id: ImageId,
        key: &str,
        bbox: &BoundingBox,
        mask: Option<&RunMask>,
        features: &FeatureVector,
    ) -> Result<()> {
        let image = self.image(image_id)?;
        if key.is_empty() {
            return Err(Error::InvalidArgument("empty region key".into()));
        }
        if self.region_keys.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        if image.width > 0 && image.height > 0 && (bbox.x1 > image.width || bbox.y1 > image.height) {
            return Err(Error::InvalidRegion(format!("region {key:?} exceeds image {:?}", image.key)));
        }
        if let Some(m) = mask {
            if m.is_empty() || !m.within(bbox) {
                return Err(Error::InvalidRegion(format!("mask of region {key:?} is empty or outside its box")));
            }
        }
        self.schema.check(features)
    }

    /// Sets evaluation-only region labels.
    pub fn set_region_labels(&mut self, id: RegionId, labels: impl IntoIterator<Item = String>) -> Result<()> {
        let r = self.regions.get_mut(&id).ok_or(Error::UnknownRegion(id))?;
        r.labels = labels.into_iter().map(|l| fold_label(&l)).collect();
        Ok(())
    }

    pub fn set_image_keywords(&mut self, id: ImageId, keywords: impl IntoIterator<Item = String>) -> Result<()> {
        let img = self.images.get_mut(&id).ok_or(Error::UnknownImage(id))?;
        img.ground_truth_keywords = keywords.into_iter().map(|l| fold_label(&l)).filter(|k| !k.is_empty()).collect();
        Ok(())
    }

    /// Replaces every region vector with its corpus min-max normalized form and
    /// records the bounds in the schema. Runs once per catalog.
    pub fn normalize_features(&mut self) -> Result<()> {
        if self.normalized {
            return Err(Error::Precondition("features are already normalized".into()));
        }
        if self.regions.is_empty() {
            self.normalized = true;
            return Ok(());
        }
        let raw: Vec<FeatureVector> = self.regions.values().map(|r| r.features.clone()).collect();
        let (schema, normalized) = crate::features::normalize_corpus(&self.schema, &raw)?;
        for (r, v) in self.regions.values_mut().zip(normalized) {
            r.features = v;
        }
        self.schema = schema;
        self.normalized = true;
        Ok(())
    }

    pub fn thesaurus_descendants(&self, term: TermId) -> Result<BTreeSet<TermId>> {
        self.thesaurus.descendants(term)
    }

    /// Visual categories holding at least one region associated with `term`
    /// at confidence `>= min_conf`.
    pub fn conceptual_to_visual(&self, term: TermId, min_conf: u8) -> Result<BTreeSet<CategoryId>> {
        self.thesaurus.get(term)?;
        if min_conf > MAX_CONF {
            return Err(Error::InvalidArgument(format!("min_conf {min_conf} exceeds {MAX_CONF}")));
        }
        Ok(self
            .associations_for_term(term)
            .filter(|a| a.d_conf >= min_conf)
            .filter_map(|a| self.regions.get(&a.region_id).and_then(|r| r.visual_category_id))
            .collect())
    }

    pub fn associations_for_term(&self, term: TermId) -> impl Iterator<Item = &Association> {
        self.associations
            .range((term, RegionId(0))..=(term, RegionId(u64::MAX)))
            .map(|(_, a)| a)
    }

    /// Associated regions of `term`, strongest first (ties by region id).
    pub fn term_examples(&self, term: TermId) -> Result<Vec<&Association>> {
        self.thesaurus.get(term)?;
        let mut v: Vec<_> = self.associations_for_term(term).collect();
        v.sort_by(|a, b| b.d_conf.cmp(&a.d_conf).then(a.region_id.cmp(&b.region_id)));
        Ok(v)
    }

    /// Inserts a new association; an existing pair is a conflict.
    pub fn insert_association(&mut self, assoc: Association) -> Result<()> {
        self.thesaurus.get(assoc.term_id)?;
        self.region(assoc.region_id)?;
        if assoc.d_conf > MAX_CONF {
            return Err(Error::InvalidArgument(format!("d_conf {} exceeds {MAX_CONF}", assoc.d_conf)));
        }
        if assoc.origin == Origin::Manual && assoc.d_conf != MAX_CONF {
            return Err(Error::InvalidArgument("manual associations have d_conf 100".into()));
        }
        let key = (assoc.term_id, assoc.region_id);
        if self.associations.contains_key(&key) {
            return Err(Error::Conflict(format!("association {} / {} already exists", key.0, key.1)));
        }
        self.associations.insert(key, assoc);
        Ok(())
    }

    /// Full referential-integrity scan.
    pub fn validate(&self) -> Result<()> {
        self.thesaurus.validate()?;
        for img in self.images.values() {
            if img.region_ids.is_empty() {
                return Err(Error::Integrity(format!("image {:?} has no regions", img.key)));
            }
            for rid in &img.region_ids {
                let r = self.regions.get(rid).ok_or_else(|| Error::Integrity(format!("image {:?} lists missing {rid}", img.key)))?;
                if r.image_id != img.id {
                    return Err(Error::Integrity(format!("{rid} does not point back to {}", img.id)));
                }
            }
        }
        let mut clustered = BTreeSet::new();
        for r in self.regions.values() {
            let img = self.images.get(&r.image_id).ok_or_else(|| Error::Integrity(format!("{} references missing {}", r.id, r.image_id)))?;
            if !img.region_ids.contains(&r.id) {
                return Err(Error::Integrity(format!("{} missing from its image", r.id)));
            }
            self.schema.check(&r.features)?;
            if let Some(m) = &r.mask {
                if !m.within(&r.bbox) {
                    return Err(Error::Integrity(format!("{} mask outside its box", r.id)));
                }
            }
            if let Some(c) = r.visual_category_id {
                let cat = self.categories.get(&c).ok_or_else(|| Error::Integrity(format!("{} references missing {c}", r.id)))?;
                if !cat.members.contains(&r.id) {
                    return Err(Error::Integrity(format!("{} not a member of {c}", r.id)));
                }
                clustered.insert(r.id);
            }
        }
        let mut covered = BTreeSet::new();
        for cat in self.categories.values() {
            if cat.members.is_empty() {
                return Err(Error::Integrity(format!("{} is empty", cat.id)));
            }
            for m in &cat.members {
                if !covered.insert(*m) {
                    return Err(Error::Integrity(format!("{m} belongs to two categories")));
                }
            }
        }
        if covered != clustered {
            return Err(Error::Integrity("category membership disagrees with region labels".into()));
        }
        for (key, a) in &self.associations {
            if *key != (a.term_id, a.region_id) {
                return Err(Error::Integrity("association keyed under wrong pair".into()));
            }
            self.thesaurus.get(a.term_id).map_err(|_| Error::Integrity(format!("association references missing {}", a.term_id)))?;
            if !self.regions.contains_key(&a.region_id) {
                return Err(Error::Integrity(format!("association references missing {}", a.region_id)));
            }
            if a.d_conf > MAX_CONF || (a.origin == Origin::Manual && a.d_conf != MAX_CONF) {
                return Err(Error::Integrity(format!("association {} / {} has bad d_conf", a.term_id, a.region_id)));
            }
        }
        Ok(())
    }
}
