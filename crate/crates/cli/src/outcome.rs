use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fit::SlopeFit;

/// One pass/fail decision with the number it was based on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition, e.g. "<= 1e-6" or "in [1.7, 2.3]".
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, condition: format!("<= {bound:e}"), pass: value <= bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, condition: format!(">= {bound:e}"), pass: value >= bound }
    }

    pub fn within(name: &str, value: f64, (lo, hi): (f64, f64)) -> Self {
        Self { name: name.into(), value, condition: format!("in [{lo}, {hi}]"), pass: (lo..=hi).contains(&value) }
    }

    pub fn flag(name: &str, ok: bool, condition: &str) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, condition: condition.into(), pass: ok }
    }
}

/// Plot-ready numeric table; written as `<name>.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: SlopeFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub experiment: String,
    pub criterion: u8,
    pub manifest_hash: String,
    pub checks: Vec<Check>,
    pub fits: Vec<NamedFit>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn new(experiment: &str, criterion: u8, manifest_hash: String) -> Self {
        Self {
            experiment: experiment.into(),
            criterion,
            manifest_hash,
            checks: Vec::new(),
            fits: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    /// Records a slope fit and the check of its window.
    pub fn fit(&mut self, name: &str, fit: SlopeFit) {
        let w = fit.window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        self.checks.push(Check::within(&format!("{name} slope"), fit.slope, w));
        self.fits.push(NamedFit { name: name.into(), fit });
    }

    /// SHA-256 over the bit patterns of every number the run produced.
    pub fn digest(&self) -> String {
        let mut s = Sha256::new();
        let mut feed = |v: f64| s.update(v.to_bits().to_le_bytes());
        for c in &self.checks {
            feed(c.value);
        }
        for f in &self.fits {
            for (h, e) in &f.fit.pairs {
                feed(*h);
                feed(*e);
            }
            feed(f.fit.slope);
        }
        for t in &self.tables {
            for r in &t.rows {
                r.iter().for_each(|v| feed(*v));
            }
        }
        s.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One-line verdict.
    pub fn summary_line(&self) -> String {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        let status = if self.pass() { "PASS" } else { "FAIL" };
        if failed.is_empty() {
            format!("{status} {} ({} checks)", self.experiment, self.checks.len())
        } else {
            format!("{status} {} (failed: {})", self.experiment, failed.join(", "))
        }
    }
}
