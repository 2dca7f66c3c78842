//! Score reports as a text table and as JSON.

use std::fmt::Write as _;

use eend_core::scoring::DerCounts;
use serde::Serialize;

use crate::commands::ScoreResult;

#[derive(Debug, Clone, Serialize)]
pub struct Rates {
    pub der: f64,
    pub miss: f64,
    pub fa: f64,
    pub confusion: f64,
    pub sad_miss: f64,
    pub sad_fa: f64,
    pub scored_time: f64,
}

impl Rates {
    fn from_counts(c: &DerCounts, resolution: f64) -> Self {
        let r = c.report(resolution);
        Self {
            der: r.der,
            miss: r.miss,
            fa: r.fa,
            confusion: r.confusion,
            sad_miss: r.sad_miss,
            sad_fa: r.sad_fa,
            scored_time: r.scored_time,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRates {
    pub id: String,
    #[serde(flatten)]
    pub rates: Rates,
}

#[derive(Debug, Clone, Serialize)]
pub struct JsonReport {
    pub collar: f64,
    pub resolution: f64,
    pub files: Vec<FileRates>,
    /// Rates from frame counts pooled over all files.
    pub total: Rates,
}

pub fn json_report(s: &ScoreResult) -> JsonReport {
    let res = s.config.resolution;
    JsonReport {
        collar: s.config.collar,
        resolution: res,
        files: s
            .per_file
            .iter()
            .map(|(id, c)| FileRates {
                id: id.clone(),
                rates: Rates::from_counts(c, res),
            })
            .collect(),
        total: Rates::from_counts(&s.total, res),
    }
}

/// Percentages per recording plus a pooled TOTAL row.
pub fn table(s: &ScoreResult) -> String {
    let report = json_report(s);
    let width = report.files.iter().map(|f| f.id.len()).max().unwrap_or(0).max(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "recording", "scored(s)", "MI", "FA", "CF", "DER", "SAD-MI", "SAD-FA"
    );
    let mut row = |name: &str, r: &Rates| {
        let _ = writeln!(
            out,
            "{:<width$} {:>10.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            name,
            r.scored_time,
            100.0 * r.miss,
            100.0 * r.fa,
            100.0 * r.confusion,
            100.0 * r.der,
            100.0 * r.sad_miss,
            100.0 * r.sad_fa
        );
    };
    for f in &report.files {
        row(&f.id, &f.rates);
    }
    row("TOTAL", &report.total);
    out
}
