//! Structured results of check runs and their JSON form.
//!
//! Records carry everything needed to reproduce a check: identity, model,
//! tuple size, indices, step sizes, seed. Field order is fixed and nothing
//! time- or host-dependent is stored, so identical runs serialize to
//! identical bytes.

use serde::{Deserialize, Serialize};

/// Outcome of a single check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "SKIP")]
    Skip,
    /// Residuals sat below the measurable floor, so no convergence slope
    /// can be attributed; treated as passing.
    #[serde(rename = "NOISE_FLOOR")]
    NoiseFloor,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One check result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: String,
    pub identity_id: String,
    pub manifold: String,
    pub k: usize,
    pub indices: Vec<usize>,
    pub fd_step: f64,
    /// Residual magnitude; for `.order` records this holds the fitted
    /// convergence slope instead.
    pub residual: f64,
    pub scale: f64,
    pub n_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub verdict: Verdict,
    pub seed: u64,
    /// Marks checks that are supposed to fail; their FAIL does not gate the
    /// run, the paired control record does.
    #[serde(default, skip_serializing_if = "is_false")]
    pub negative_control: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Configuration echo stored alongside the records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub seed: u64,
    pub fd_step: f64,
    pub ode_step: f64,
    pub samples: u64,
    pub tolerance: f64,
}

/// A full run: the configuration it used and every record it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config: ReportConfig,
    pub records: Vec<CheckRecord>,
}

impl Report {
    pub fn new(config: ReportConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, records: Vec<CheckRecord>) {
        self.records.extend(records);
    }

    /// True when no gating check failed. Failures marked as negative
    /// controls are expected and do not count.
    pub fn passed(&self) -> bool {
        !self
            .records
            .iter()
            .any(|r| r.verdict == Verdict::Fail && !r.negative_control)
    }

    /// (pass, fail, skip, noise-floor) counts over gating records; negative
    /// controls are excluded.
    pub fn tally(&self) -> (usize, usize, usize, usize) {
        let mut t = (0, 0, 0, 0);
        for r in self.records.iter().filter(|r| !r.negative_control) {
            match r.verdict {
                Verdict::Pass => t.0 += 1,
                Verdict::Fail => t.1 += 1,
                Verdict::Skip => t.2 += 1,
                Verdict::NoiseFloor => t.3 += 1,
            }
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}
