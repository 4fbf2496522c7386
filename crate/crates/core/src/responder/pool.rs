use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceTag {
    Question,
    Statement,
}

impl UtteranceTag {
    pub fn of(text: &str) -> Self {
        if text.trim_end().ends_with('?') {
            UtteranceTag::Question
        } else {
            UtteranceTag::Statement
        }
    }
}

/// The bot's finite set of candidate utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    utterances: Vec<String>,
}

impl CandidatePool {
    /// Builds a pool, dropping repeated strings (first occurrence wins).
    /// Returns the pool and the number of duplicates removed.
    pub fn with_duplicate_count<I, S>(utterances: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for u in utterances {
            let u = u.into();
            if u.trim().is_empty() {
                return Err(Error::config("candidate utterances must be non-empty"));
            }
            if seen.insert(u.clone()) {
                kept.push(u);
            } else {
                duplicates += 1;
            }
        }
        if kept.is_empty() {
            return Err(Error::invalid("candidate pool is empty"));
        }
        if duplicates > 0 {
            log::warn!("removed {duplicates} duplicate candidate utterance(s)");
        }
        Ok((Self { utterances: kept }, duplicates))
    }

    pub fn new<I, S>(utterances: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_duplicate_count(utterances).map(|(pool, _)| pool)
    }

    /// Parses either a JSON string array or one utterance per line.
    pub fn parse(content: &str, origin: &Path) -> Result<(Self, usize)> {
        if content.trim_start().starts_with('[') {
            let items: Vec<String> = serde_json::from_str(content).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                message: e.to_string(),
            })?;
            Self::with_duplicate_count(items)
        } else {
            Self::with_duplicate_count(
                content
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned),
            )
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, usize)> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, path)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.utterances.get(i).map(String::as_str)
    }

    pub fn utterances(&self) -> &[String] {
        &self.utterances
    }

    pub fn tag(&self, i: usize) -> UtteranceTag {
        UtteranceTag::of(&self.utterances[i])
    }
}
