//! Versioned, checksummed index container.
//!
//! Layout: a `VOIRIDX <version>` line, one JSON manifest line, then the JSON
//! body. The manifest carries the body length and its SHA-256, so a
//! truncated or altered body is detected before anything is deserialized.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voir_core::{Catalog, FeatureSchema};

use crate::error::{Error, Result};

pub const MAGIC: &str = "VOIRIDX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub regions: usize,
    pub terms: usize,
    pub associations: usize,
    pub categories: usize,
}

impl Counts {
    pub fn of(catalog: &Catalog) -> Self {
        Counts {
            images: catalog.image_count(),
            regions: catalog.region_count(),
            terms: catalog.thesaurus().len(),
            associations: catalog.association_count(),
            categories: catalog.category_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub counts: Counts,
    /// Lowercase hex SHA-256 of the body.
    pub checksum: String,
    pub body_len: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode(catalog: &Catalog) -> Result<(IndexManifest, Vec<u8>)> {
    catalog.validate()?;
    let body = serde_json::to_vec(catalog).map_err(|e| Error::Malformed(e.to_string()))?;
    let manifest = IndexManifest {
        format_version: FORMAT_VERSION,
        schema: catalog.schema().clone(),
        counts: Counts::of(catalog),
        checksum: sha256_hex(&body),
        body_len: body.len() as u64,
    };
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n").into_bytes();
    serde_json::to_writer(&mut out, &manifest).map_err(|e| Error::Malformed(e.to_string()))?;
    out.push(b'\n');
    out.extend_from_slice(&body);
    Ok((manifest, out))
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|b| *b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn decode(bytes: &[u8]) -> Result<(IndexManifest, Catalog)> {
    let (header, rest) = split_line(bytes).ok_or_else(|| {
        if bytes.starts_with(MAGIC.as_bytes()) || MAGIC.as_bytes().starts_with(bytes) {
            Error::PartialFile("header line is incomplete".into())
        } else {
            Error::Malformed("not an index file".into())
        }
    })?;
    let header = std::str::from_utf8(header).map_err(|_| Error::Malformed("header is not UTF-8".into()))?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Malformed(format!("bad header {header:?}")))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (manifest_line, body) = split_line(rest).ok_or_else(|| Error::PartialFile("manifest is incomplete".into()))?;
    let manifest: IndexManifest = serde_json::from_slice(manifest_line).map_err(|e| Error::Malformed(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    if (body.len() as u64) < manifest.body_len {
        return Err(Error::PartialFile(format!("body has {} of {} bytes", body.len(), manifest.body_len)));
    }
    if body.len() as u64 > manifest.body_len {
        return Err(Error::Malformed("trailing bytes after body".into()));
    }
    let actual = sha256_hex(body);
    if actual != manifest.checksum {
        return Err(Error::ChecksumMismatch { expected: manifest.checksum, actual });
    }
    let catalog: Catalog = serde_json::from_slice(body).map_err(|e| Error::Malformed(format!("body: {e}")))?;
    catalog.validate()?;
    if Counts::of(&catalog) != manifest.counts || catalog.schema() != &manifest.schema {
        return Err(Error::Malformed("manifest does not describe the body".into()));
    }
    Ok((manifest, catalog))
}

/// Writes through a sibling temporary file and renames, so readers never
/// observe a half-written index.
pub fn save_index(catalog: &Catalog, path: &Path) -> Result<IndexManifest> {
    let (manifest, bytes) = encode(catalog)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
        f.write_all(&bytes).map_err(Error::io(&tmp))?;
        f.sync_all().map_err(Error::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(manifest)
}

pub fn load_index(path: &Path) -> Result<Catalog> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(decode(&bytes)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use voir_core::eval::{generate_benchmark, BenchmarkSpec};

    fn catalog() -> Catalog {
        generate_benchmark(&BenchmarkSpec { images: 20, ..BenchmarkSpec::default() }).unwrap()
    }

    #[test]
    fn round_trip_in_memory() {
        let c = catalog();
        let (m, bytes) = encode(&c).unwrap();
        assert_eq!(m.counts.images, 20);
        let (m2, back) = decode(&bytes).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, c);
    }

    #[test]
    fn empty_catalog_round_trip() {
        let c = Catalog::new(FeatureSchema::builtin());
        let (_, bytes) = encode(&c).unwrap();
        assert_eq!(decode(&bytes).unwrap().1, c);
    }

    #[test]
    fn every_truncation_fails_cleanly() {
        let (_, bytes) = encode(&catalog()).unwrap();
        for cut in [0, 3, 8, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            let e = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, Error::PartialFile(_) | Error::Malformed(_)), "cut {cut}: {e}");
        }
        assert!(matches!(decode(&bytes[..bytes.len() - 1]).unwrap_err(), Error::PartialFile(_)));
    }

    #[test]
    fn corruption_and_version() {
        let (_, mut bytes) = encode(&catalog()).unwrap();
        let last = bytes.len() - 2;
        bytes[last] ^= 1;
        assert!(matches!(decode(&bytes).unwrap_err(), Error::ChecksumMismatch { .. }));
        let (_, bytes) = encode(&catalog()).unwrap();
        let mut v2 = b"VOIRIDX 2".to_vec();
        v2.extend_from_slice(&bytes[9..]);
        assert!(matches!(decode(&v2).unwrap_err(), Error::VersionMismatch { found: 2, expected: 1 }));
    }
}
