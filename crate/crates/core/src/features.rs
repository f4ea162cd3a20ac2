//! Region feature extraction, corpus normalization and precomputed imports.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::model::{BlockSpec, Bounds, BoundingBox, FeatureSchema, FeatureVector, RunMask, COLOR_BINS};

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("{width}x{height} raster")));
        }
        let expected = 3 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidRaster(format!("{} bytes for {width}x{height} RGB", pixels.len())));
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.iter().copied().cycle().take(3 * n).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Colour cell of one pixel under 3 uniform levels per channel.
fn color_bin(rgb: [u8; 3]) -> usize {
    let level = |v: u8| v as usize * 3 / 256;
    level(rgb[0]) * 9 + level(rgb[1]) * 3 + level(rgb[2])
}

/// Raw (unnormalized) built-in descriptor of one region: a 27-bin RGB
/// histogram followed by relative area, compactness, eccentricity and the
/// normalized centroid.
///
/// Without a mask the whole bounding box is the region.
pub fn extract_features(image: &RasterImage, bbox: &BoundingBox, mask: Option<&RunMask>) -> Result<FeatureVector> {
    if bbox.x1 > image.width || bbox.y1 > image.height {
        return Err(Error::InvalidRegion(format!(
            "box {},{},{},{} exceeds {}x{} image",
            bbox.x0, bbox.y0, bbox.x1, bbox.y1, image.width, image.height
        )));
    }
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);
    let mut inside = vec![false; bw * bh];
    match mask {
        Some(m) => {
            if !m.within(bbox) {
                return Err(Error::InvalidRegion("mask lies outside the bounding box".into()));
            }
            for (x, y) in m.pixels() {
                inside[(y - bbox.y0) as usize * bw + (x - bbox.x0) as usize] = true;
            }
        }
        None => inside.fill(true),
    }
    let at = |lx: i64, ly: i64| -> bool {
        lx >= 0 && ly >= 0 && (lx as usize) < bw && (ly as usize) < bh && inside[ly as usize * bw + lx as usize]
    };

    let mut hist = [0u64; COLOR_BINS];
    let mut count = 0u64;
    let mut perimeter = 0u64;
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for ly in 0..bh {
        for lx in 0..bw {
            if !inside[ly * bw + lx] {
                continue;
            }
            let (x, y) = (bbox.x0 + lx as u32, bbox.y0 + ly as u32);
            hist[color_bin(image.pixel(x, y))] += 1;
            count += 1;
            sx += x as f64;
            sy += y as f64;
            let (ix, iy) = (lx as i64, ly as i64);
            if !(at(ix - 1, iy) && at(ix + 1, iy) && at(ix, iy - 1) && at(ix, iy + 1)) {
                perimeter += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidRegion("region has no pixels".into()));
    }
    let n = count as f64;
    let (mx, my) = (sx / n, sy / n);
    // central moments of the union of unit pixel squares; the 1/12 term keeps
    // the minor axis positive so eccentricity stays below 1
    let (mut m20, mut m02, mut m11) = (0.0f64, 0.0f64, 0.0f64);
    for ly in 0..bh {
        for lx in 0..bw {
            if inside[ly * bw + lx] {
                let dx = (bbox.x0 as usize + lx) as f64 - mx;
                let dy = (bbox.y0 as usize + ly) as f64 - my;
                m20 += dx * dx;
                m02 += dy * dy;
                m11 += dx * dy;
            }
        }
    }
    m20 = m20 / n + 1.0 / 12.0;
    m02 = m02 / n + 1.0 / 12.0;
    m11 /= n;
    let half_trace = (m20 + m02) / 2.0;
    let spread = libm::sqrt(((m20 - m02) / 2.0) * ((m20 - m02) / 2.0) + m11 * m11);
    let (major, minor) = (half_trace + spread, half_trace - spread);
    let eccentricity = libm::sqrt((1.0 - minor / major).max(0.0));

    let mut out = Vec::with_capacity(COLOR_BINS + 5);
    out.extend(hist.iter().map(|&c| c as f64 / n));
    out.push(n / (image.width as f64 * image.height as f64));
    out.push(4.0 * PI * n / (perimeter as f64 * perimeter as f64));
    out.push(eccentricity);
    out.push((mx + 0.5) / image.width as f64);
    out.push((my + 0.5) / image.height as f64);
    FeatureVector::new(out)
}

/// Min-max normalizes a corpus of raw vectors sharing `layout`'s blocks.
///
/// Returns the schema carrying the per-component bounds; constant components
/// map to 0.0 and show up in [`FeatureSchema::constant_components`].
pub fn normalize_corpus(layout: &FeatureSchema, raw: &[FeatureVector]) -> Result<(FeatureSchema, Vec<FeatureVector>)> {
    let first = raw.first().ok_or_else(|| Error::InvalidArgument("cannot normalize an empty corpus".into()))?;
    let dim = layout.dim();
    if let Some(v) = raw.iter().find(|v| v.len() != dim) {
        return Err(Error::SchemaMismatch(format!("vector of {} components in a {dim}-component corpus", v.len())));
    }
    let mut bounds: Vec<Bounds> = first.as_slice().iter().map(|&v| Bounds { min: v, max: v }).collect();
    for v in &raw[1..] {
        for (b, &c) in bounds.iter_mut().zip(v.as_slice()) {
            b.min = b.min.min(c);
            b.max = b.max.max(c);
        }
    }
    let normalized = raw
        .iter()
        .map(|v| FeatureVector(v.as_slice().iter().zip(&bounds).map(|(&c, b)| b.normalize(c)).collect()))
        .collect();
    let schema = FeatureSchema::with_bounds(layout.blocks().to_vec(), bounds)?;
    Ok((schema, normalized))
}

/// One line of a precomputed features file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_key: String,
    pub region_key: String,
    pub bbox: BoundingBox,
    pub mask: Option<RunMask>,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl FeatureRecord {
    pub fn layout(&self) -> Vec<BlockSpec> {
        self.blocks.iter().map(|(n, v)| BlockSpec::new(n.clone(), v.len())).collect()
    }
}

/// Inserts precomputed raw vectors. The batch is checked as a whole before
/// anything is inserted, so a failing batch leaves the catalog untouched.
/// Returns the number of regions added.
pub fn import_precomputed(catalog: &mut Catalog, records: &[FeatureRecord]) -> Result<usize> {
    if catalog.is_normalized() && !records.is_empty() {
        return Err(Error::Precondition("cannot import into a normalized catalog".into()));
    }
    let mut batch_keys = BTreeSet::new();
    let mut prepared = Vec::with_capacity(records.len());
    for rec in records {
        if rec.layout() != catalog.schema().blocks() {
            return Err(Error::SchemaMismatch(format!(
                "region {:?} has blocks {:?}, expected {:?}",
                rec.region_key,
                rec.layout(),
                catalog.schema().blocks()
            )));
        }
        let image = catalog.image_by_key(&rec.image_key).ok_or_else(|| Error::UnknownKey(rec.image_key.clone()))?;
        if !batch_keys.insert(rec.region_key.as_str()) {
            return Err(Error::DuplicateKey(rec.region_key.clone()));
        }
        let features = FeatureVector::new(rec.blocks.iter().flat_map(|(_, v)| v.iter().copied()).collect())?;
        catalog.check_region(image, &rec.region_key, &rec.bbox, rec.mask.as_ref(), &features)?;
        prepared.push((image, features));
    }
    for (rec, (image, features)) in records.iter().zip(prepared) {
        catalog.add_region(image, &rec.region_key, rec.bbox, rec.mask.clone(), features)?;
    }
    Ok(records.len())
}
