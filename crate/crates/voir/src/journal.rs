//! Append-only JSON-lines log of what sessions taught the service: resolved
//! judgments and manual associations. The learning update replays it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voir_core::feedback::RecordedJudgment;
use voir_core::{Catalog, Mode, RegionId, TermId};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Judgments { session_id: u64, mode: Mode, iteration: u64, judgments: Vec<RecordedJudgment> },
    ManualAssociation { term_id: TermId, region_id: RegionId },
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
        Ok(Journal { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| Error::Malformed(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(Error::io(&self.path))?;
        self.file.flush().map_err(Error::io(&self.path))
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>> {
    let f = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub manual_added: usize,
    pub manual_existing: usize,
    pub judgments: usize,
    pub touched: usize,
    pub changes: usize,
    pub skipped: usize,
}

/// Applies journal entries in order: manual associations directly,
/// judgments through the periodic learning update.
pub fn replay(catalog: &mut Catalog, entries: &[JournalEntry]) -> Result<ReplaySummary> {
    let mut s = ReplaySummary::default();
    let mut batch: Vec<RecordedJudgment> = Vec::new();
    let flush = |catalog: &mut Catalog, batch: &mut Vec<RecordedJudgment>, s: &mut ReplaySummary| -> Result<()> {
        if !batch.is_empty() {
            let u = catalog.periodic_update(batch)?;
            s.judgments += batch.len() - u.skipped;
            s.touched += u.touched.len();
            s.changes += u.changes.len();
            s.skipped += u.skipped;
            batch.clear();
        }
        Ok(())
    };
    for e in entries {
        match e {
            JournalEntry::Judgments { judgments, .. } => batch.extend_from_slice(judgments),
            JournalEntry::ManualAssociation { term_id, region_id } => {
                flush(catalog, &mut batch, &mut s)?;
                match catalog.association(*term_id, *region_id) {
                    Some(a) if a.origin == voir_core::Origin::Manual => s.manual_existing += 1,
                    _ => {
                        catalog.set_manual_association(*term_id, *region_id)?;
                        s.manual_added += 1;
                    }
                }
            }
        }
    }
    flush(catalog, &mut batch, &mut s)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use voir_core::feedback::Polarity;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let entries = vec![
            JournalEntry::ManualAssociation { term_id: TermId(1), region_id: RegionId(2) },
            JournalEntry::Judgments {
                session_id: 3,
                mode: Mode::Voir3,
                iteration: 1,
                judgments: vec![RecordedJudgment { term_id: TermId(1), region_id: RegionId(4), polarity: Polarity::NonRelevant }],
            },
        ];
        {
            let mut j = Journal::open(&path).unwrap();
            for e in &entries {
                j.append(e).unwrap();
            }
        }
        assert_eq!(read_journal(&path).unwrap(), entries);
        std::fs::write(&path, "{\"kind\":\"nope\"}\n").unwrap();
        assert!(matches!(read_journal(&path), Err(Error::Format { line: 1, .. })));
    }
}
