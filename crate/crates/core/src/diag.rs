//! Structured warning records.
//!
//! Operations that drop or repair input keep going and leave a record here
//! instead of failing. The CLI prints these as JSON lines on stderr.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub source: &'static str,
    pub code: &'static str,
    pub detail: String,
}

#[derive(Debug, Default, Clone)]
pub struct Diagnostics {
    records: Vec<Diagnostic>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn warn(&mut self, source: &'static str, code: &'static str, detail: impl Into<String>) {
        self.records.push(Diagnostic {
            source,
            code,
            detail: detail.into(),
        });
    }

    /// Number of records carrying `code`.
    pub fn count(&self, code: &str) -> usize {
        self.records.iter().filter(|d| d.code == code).count()
    }

    pub fn records(&self) -> &[Diagnostic] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: Diagnostics) {
        self.records.extend(other.records);
    }
}
