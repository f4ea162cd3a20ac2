//! Feature schemas, feature vectors, regions, images and visual categories.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::ids::{CategoryId, ImageId, RegionId};

/// Name of the built-in colour histogram block.
pub const COLOR_BLOCK: &str = "color";
/// Name of the built-in shape block.
pub const SHAPE_BLOCK: &str = "shape";
/// 3 levels per RGB channel.
pub const COLOR_BINS: usize = 27;
/// Relative area, compactness, eccentricity, centroid x, centroid y.
pub const SHAPE_DIMS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockSpec {
    pub name: String,
    pub dim: usize,
}

impl BlockSpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        BlockSpec { name: name.into(), dim }
    }
}

/// Min-max normalization bounds of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds { min: 0.0, max: 1.0 };

    pub fn is_constant(&self) -> bool {
        self.min == self.max
    }

    /// Maps `v` into `[0, 1]`; constant components map to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

/// Ordered feature blocks plus per-component normalization bounds.
///
/// Block `i` owns the contiguous component range returned by
/// [`FeatureSchema::block_range`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSchema {
    blocks: Vec<BlockSpec>,
    bounds: Vec<Bounds>,
}

impl FeatureSchema {
    /// Schema with unit bounds on every component.
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self> {
        let dim = blocks.iter().map(|b| b.dim).sum();
        Self::with_bounds(blocks, alloc::vec![Bounds::UNIT; dim])
    }

    pub fn with_bounds(blocks: Vec<BlockSpec>, bounds: Vec<Bounds>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidSchema("no feature blocks".into()));
        }
        let mut seen = BTreeSet::new();
        for b in &blocks {
            if b.name.is_empty() {
                return Err(Error::InvalidSchema("empty block name".into()));
            }
            if b.dim == 0 {
                return Err(Error::InvalidSchema(format!("block {:?} has dimension 0", b.name)));
            }
            if !seen.insert(b.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate block {:?}", b.name)));
            }
        }
        let dim: usize = blocks.iter().map(|b| b.dim).sum();
        if bounds.len() != dim {
            return Err(Error::InvalidSchema(format!(
                "{} bounds for {} components",
                bounds.len(),
                dim
            )));
        }
        if let Some(j) = bounds
            .iter()
            .position(|b| !(b.min.is_finite() && b.max.is_finite() && b.min <= b.max))
        {
            return Err(Error::InvalidSchema(format!("component {j} has invalid bounds")));
        }
        Ok(FeatureSchema { blocks, bounds })
    }

    /// The extraction schema: `color` (27) followed by `shape` (5).
    pub fn builtin() -> Self {
        Self::new(alloc::vec![
            BlockSpec::new(COLOR_BLOCK, COLOR_BINS),
            BlockSpec::new(SHAPE_BLOCK, SHAPE_DIMS),
        ])
        .expect("built-in schema is valid")
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Component range of block `i`. Panics when `i` is out of range.
    pub fn block_range(&self, i: usize) -> Range<usize> {
        let start: usize = self.blocks[..i].iter().map(|b| b.dim).sum();
        start..start + self.blocks[i].dim
    }

    pub fn block_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let mut start = 0;
        self.blocks.iter().map(move |b| {
            let r = start..start + b.dim;
            start += b.dim;
            r
        })
    }

    /// Components whose corpus bounds collapsed to a single value.
    pub fn constant_components(&self) -> Vec<bool> {
        self.bounds.iter().map(Bounds::is_constant).collect()
    }

    /// Same block names and dimensions, regardless of bounds.
    pub fn same_layout(&self, other: &FeatureSchema) -> bool {
        self.blocks == other.blocks
    }

    pub fn check(&self, v: &FeatureVector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::SchemaMismatch(format!(
                "vector has {} components, schema has {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// A region descriptor conforming to some [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct FeatureVector(pub(crate) Vec<f64>);

impl FeatureVector {
    /// Rejects non-finite components.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if let Some(j) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::SchemaMismatch(format!("component {j} is not finite")));
        }
        Ok(FeatureVector(components))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(alloc::vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Plain Euclidean distance over every component.
    pub fn euclidean(&self, other: &FeatureVector) -> f64 {
        libm::sqrt(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>(),
        )
    }
}

impl core::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidRegion(format!(
                "degenerate bounding box {x0},{y0},{x1},{y1}"
            )));
        }
        Ok(BoundingBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One horizontal run of mask pixels, in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Run {
    pub y: u32,
    pub x: u32,
    pub len: u32,
}

/// Run-length encoded pixel mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunMask {
    runs: Vec<Run>,
}

impl RunMask {
    /// Sorts runs and merges overlapping or touching runs on the same row.
    pub fn from_runs(mut runs: Vec<Run>) -> Self {
        runs.retain(|r| r.len > 0);
        runs.sort();
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(last) if last.y == r.y && r.x <= last.x + last.len => {
                    let end = (last.x + last.len).max(r.x + r.len);
                    last.len = end - last.x;
                }
                _ => merged.push(r),
            }
        }
        RunMask { runs: merged }
    }

    /// Builds a mask from a row-major boolean grid placed at `(x0, y0)`.
    pub fn from_grid(x0: u32, y0: u32, width: u32, grid: &[bool]) -> Self {
        let mut runs = Vec::new();
        for (row, line) in grid.chunks(width as usize).enumerate() {
            let mut x = 0usize;
            while x < line.len() {
                if line[x] {
                    let start = x;
                    while x < line.len() && line[x] {
                        x += 1;
                    }
                    runs.push(Run { y: y0 + row as u32, x: x0 + start as u32, len: (x - start) as u32 });
                } else {
                    x += 1;
                }
            }
        }
        RunMask::from_runs(runs)
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|r| r.len as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn within(&self, bbox: &BoundingBox) -> bool {
        self.runs
            .iter()
            .all(|r| r.y >= bbox.y0 && r.y < bbox.y1 && r.x >= bbox.x0 && r.x + r.len <= bbox.x1)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        // runs are sorted by (y, x)
        let idx = self.runs.partition_point(|r| (r.y, r.x) <= (y, x));
        idx > 0 && {
            let r = self.runs[idx - 1];
            r.y == y && x < r.x + r.len
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.runs.iter().flat_map(|r| (r.x..r.x + r.len).map(move |x| (x, r.y)))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Region {
    pub id: RegionId,
    pub image_id: ImageId,
    /// External key from the source files.
    pub key: String,
    pub bbox: BoundingBox,
    pub mask: Option<RunMask>,
    pub features: FeatureVector,
    pub visual_category_id: Option<CategoryId>,
    /// Optional region-level labels, used only by simulated users.
    #[cfg_attr(feature = "serde", serde(default))]
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageRecord {
    pub id: ImageId,
    pub key: String,
    pub source_uri: String,
    pub width: u32,
    pub height: u32,
    pub region_ids: Vec<RegionId>,
    /// Evaluation-only annotations, stored lowercase.
    pub ground_truth_keywords: BTreeSet<String>,
}

impl ImageRecord {
    pub fn has_keyword(&self, label: &str) -> bool {
        self.ground_truth_keywords.contains(&label.to_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VisualCategory {
    pub id: CategoryId,
    pub members: BTreeSet<RegionId>,
    pub centroid: FeatureVector,
}

/// Lowercases and trims a label for case-insensitive comparison.
pub fn fold_label(label: &str) -> String {
    label.trim().to_lowercase().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn schema_rejects_duplicate_blocks() {
        let err = FeatureSchema::new(vec![BlockSpec::new("a", 1), BlockSpec::new("a", 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidSchema(_)));
        assert!(FeatureSchema::new(vec![]).is_err());
        assert!(FeatureSchema::new(vec![BlockSpec::new("a", 0)]).is_err());
    }

    #[test]
    fn block_ranges_are_contiguous() {
        let s = FeatureSchema::new(vec![BlockSpec::new("a", 2), BlockSpec::new("b", 3)]).unwrap();
        assert_eq!(s.dim(), 5);
        assert_eq!(s.block_range(0), 0..2);
        assert_eq!(s.block_range(1), 2..5);
        assert_eq!(s.block_ranges().collect::<Vec<_>>(), vec![0..2, 2..5]);
        assert_eq!(FeatureSchema::builtin().dim(), 32);
    }

    #[test]
    fn bounds_must_be_ordered() {
        let err = FeatureSchema::with_bounds(vec![BlockSpec::new("a", 1)], vec![Bounds { min: 2.0, max: 1.0 }]);
        assert!(err.is_err());
    }

    #[test]
    fn feature_vector_rejects_nan() {
        assert!(FeatureVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn bbox_must_be_nonempty() {
        assert!(BoundingBox::new(1, 1, 1, 2).is_err());
        assert!(BoundingBox::new(0, 0, 1, 1).is_ok());
    }

    #[test]
    fn run_mask_merges_and_queries() {
        let m = RunMask::from_runs(vec![
            Run { y: 1, x: 3, len: 2 },
            Run { y: 0, x: 0, len: 2 },
            Run { y: 1, x: 4, len: 3 },
        ]);
        assert_eq!(m.runs().len(), 2);
        assert_eq!(m.pixel_count(), 6);
        assert!(m.contains(6, 1));
        assert!(!m.contains(7, 1));
        assert!(!m.contains(2, 0));
        let bbox = BoundingBox::new(0, 0, 7, 2).unwrap();
        assert!(m.within(&bbox));
        assert!(!m.within(&BoundingBox::new(0, 0, 6, 2).unwrap()));
    }

    #[test]
    fn run_mask_from_grid() {
        let grid = [true, false, true, true, true, false];
        let m = RunMask::from_grid(10, 20, 3, &grid);
        let px: Vec<_> = m.pixels().collect();
        assert_eq!(px, vec![(10, 20), (12, 20), (10, 21), (11, 21)]);
    }
}
