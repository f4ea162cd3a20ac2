//! Builds a catalog from the on-disk inputs of `index build`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use voir_core::features::{extract_features, import_precomputed, FeatureRecord};
use voir_core::{BoundingBox, Catalog, FeatureSchema, Thesaurus};

use crate::error::{Error, Result};
use crate::formats;
use crate::raster;

/// Name of the optional region geometry file inside an image directory.
pub const REGIONS_FILE: &str = "regions.tsv";

#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// Raster images `<key>.png|.ppm|.pnm`, segmented by `regions.tsv` or
    /// taken whole.
    Images(PathBuf),
    Features(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BuildInputs {
    pub source: FeatureSource,
    pub thesaurus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub associations: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn build_catalog(inputs: &BuildInputs) -> Result<Catalog> {
    let keywords: BTreeMap<String, Vec<String>> = match &inputs.annotations {
        Some(p) => formats::parse_annotations(&display(p), &read(p)?)?.into_iter().collect(),
        None => BTreeMap::new(),
    };
    let mut catalog = match &inputs.source {
        FeatureSource::Images(dir) => from_images(dir, &keywords)?,
        FeatureSource::Features(path) => from_features(&formats::parse_features(&display(path), &read(path)?)?, &keywords)?,
    };
    for key in keywords.keys() {
        if catalog.image_by_key(key).is_none() {
            return Err(voir_core::Error::UnknownKey(key.clone()).into());
        }
    }
    if let Some(p) = &inputs.thesaurus {
        let pairs = formats::parse_thesaurus(&display(p), &read(p)?)?;
        let th = Thesaurus::from_pairs(pairs.iter().map(|(l, p)| (l.as_str(), p.as_deref())))?;
        catalog.set_thesaurus(th)?;
    }
    catalog.normalize_features()?;
    if let Some(p) = &inputs.associations {
        for (label, region_key) in formats::parse_associations(&display(p), &read(p)?)? {
            let term = catalog.thesaurus().find(&label).ok_or_else(|| voir_core::Error::UnknownKey(label.clone()))?;
            let region = catalog.region_by_key(&region_key).ok_or_else(|| voir_core::Error::UnknownKey(region_key.clone()))?;
            catalog.set_manual_association(term, region)?;
        }
    }
    catalog.validate()?;
    Ok(catalog)
}

/// Images are registered with unknown dimensions (0 x 0) because the
/// features file carries none.
pub fn from_features(records: &[FeatureRecord], keywords: &BTreeMap<String, Vec<String>>) -> Result<Catalog> {
    let first = records.first().ok_or_else(|| Error::Malformed("features file has no records".into()))?;
    let mut catalog = Catalog::new(FeatureSchema::new(first.layout())?);
    for rec in records {
        if catalog.image_by_key(&rec.image_key).is_none() {
            let kws = keywords.get(&rec.image_key).cloned().unwrap_or_default();
            catalog.add_image(&rec.image_key, "", 0, 0, kws)?;
        }
    }
    import_precomputed(&mut catalog, records)?;
    Ok(catalog)
}

pub fn from_images(dir: &Path, keywords: &BTreeMap<String, Vec<String>>) -> Result<Catalog> {
    let mut geometry: BTreeMap<String, Vec<(String, BoundingBox)>> = BTreeMap::new();
    let regions_path = dir.join(REGIONS_FILE);
    if regions_path.exists() {
        for (img, region, bbox) in formats::parse_regions(&display(&regions_path), &read(&regions_path)?)? {
            geometry.entry(img).or_default().push((region, bbox));
        }
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<_>>()?;
    files.retain(|p| p.is_file() && raster::is_supported(p));
    files.sort();
    if files.is_empty() {
        return Err(Error::Malformed(format!("no PNG or PPM images in {}", dir.display())));
    }
    let mut catalog = Catalog::new(FeatureSchema::builtin());
    for path in files {
        let key = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| Error::Malformed(format!("bad file name {}", path.display())))?;
        let raster = raster::load_raster(&path)?;
        let kws = keywords.get(key).cloned().unwrap_or_default();
        let image = catalog.add_image(key, &path.display().to_string(), raster.width(), raster.height(), kws)?;
        let regions = geometry
            .remove(key)
            .unwrap_or_else(|| vec![(format!("{key}#0"), BoundingBox::new(0, 0, raster.width(), raster.height()).expect("non-empty raster"))]);
        for (rkey, bbox) in regions {
            if bbox.x1 > raster.width() || bbox.y1 > raster.height() {
                return Err(voir_core::Error::InvalidRegion(format!("region {rkey:?} exceeds image {key:?}")).into());
            }
            let features = extract_features(&raster, &bbox, None)?;
            catalog.add_region(image, &rkey, bbox, None, features)?;
        }
    }
    if let Some(key) = geometry.keys().next() {
        return Err(voir_core::Error::UnknownKey(key.clone()).into());
    }
    Ok(catalog)
}
