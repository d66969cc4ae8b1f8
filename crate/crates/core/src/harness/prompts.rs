use std::collections::HashSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil;

/// The ten instruction prompts shipped in `prompts/llm_generated.txt`.
pub const BUNDLED_PROMPTS: &str = include_str!("../../../../prompts/llm_generated.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptEnsemble {
    pub prompts: Vec<String>,
    pub source_label: String,
}

impl PromptEnsemble {
    pub fn new(prompts: Vec<String>, source_label: impl Into<String>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::contract("prompt ensemble is empty"));
        }
        let mut seen = HashSet::new();
        for p in &prompts {
            if !seen.insert(p.as_str()) {
                return Err(Error::contract(format!("duplicate prompt {p:?}")));
            }
        }
        Ok(Self {
            prompts,
            source_label: source_label.into(),
        })
    }

    /// One prompt per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, source_label: impl Into<String>) -> Result<Self> {
        let prompts = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Self::new(prompts, source_label)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?, path.display().to_string())
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PROMPTS, "llm_generated.txt").expect("bundled prompts are valid")
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Hex SHA-256 over the ordered prompt texts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.prompts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
