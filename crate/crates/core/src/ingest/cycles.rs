use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One labelled cycle, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleEntry {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Ordered, gap-free partition of the study window into cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTable {
    #[serde(rename = "cycle")]
    entries: Vec<CycleEntry>,
}

const REFERENCE: &str = include_str!("../../config/cycles_reference.toml");

impl CycleTable {
    pub fn new(entries: Vec<CycleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("cycle table is empty".into()));
        }
        for e in &entries {
            if e.start >= e.end {
                return Err(Error::Config(format!(
                    "cycle {} has start {} not before end {}",
                    e.name, e.start, e.end
                )));
            }
        }
        for w in entries.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::Config(format!(
                    "cycles {} and {} are not contiguous ({} vs {})",
                    w[0].name, w[1].name, w[0].end, w[1].start
                )));
            }
        }
        Ok(Self { entries })
    }

    /// The shipped ten-cycle table covering 2021-01-01 to 2025-04-01.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE).expect("reference cycle table is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            cycle: Vec<CycleEntry>,
        }
        let raw: Raw = toml::from_str(s).map_err(|e| Error::Config(format!("cycles: {e}")))?;
        Self::new(raw.cycle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cycle table serializes")
    }

    pub fn entries(&self) -> &[CycleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Study window `[start, end)`.
    pub fn window(&self) -> (NaiveDate, NaiveDate) {
        (self.entries[0].start, self.entries[self.entries.len() - 1].end)
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        let (a, b) = self.window();
        date >= a && date < b
    }

    /// 1-based cycle index of `date`, or `None` outside the window.
    pub fn cycle_of(&self, date: NaiveDate) -> Option<usize> {
        // entries are sorted and contiguous
        let idx = self.entries.partition_point(|e| e.end <= date);
        match self.entries.get(idx) {
            Some(e) if e.start <= date => Some(idx + 1),
            _ => None,
        }
    }
}
