use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// One radiology-style report: `findings` is the source note and
/// `impression` the gold summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub findings: String,
    #[serde(default)]
    pub impression: String,
}

impl CorpusRecord {
    pub fn has_impression(&self) -> bool {
        !self.impression.trim().is_empty()
    }
}

/// Parses JSON-lines; blank lines are skipped.
pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.findings.trim().is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("record {} has empty findings", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_jsonl(&fsutil::read_to_string(path)?, path)
}

pub fn to_jsonl(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records always serialize"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    fsutil::write_atomic(path, to_jsonl(records).as_bytes())
}
