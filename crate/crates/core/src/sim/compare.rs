use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsReport, Scheme};
use super::SimError;

const FIXTURE_CSV: &str = include_str!("../../data/tables2-6.csv");

/// Label printed next to reference rows.
pub const REFERENCE_LABEL: &str = "paper-reported";

/// One row of the reference tables shipped in `data/tables2-6.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub table: u8,
    pub metric: String,
    pub unit: String,
    pub row: String,
    pub proposed: f64,
    pub existing: f64,
    pub source: String,
}

pub fn reference_fixtures() -> &'static [FixtureRow] {
    static ROWS: OnceLock<Vec<FixtureRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        csv::Reader::from_reader(FIXTURE_CSV.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .expect("bundled fixture file parses")
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: &'static str,
    pub unit: &'static str,
    pub a: f64,
    pub b: f64,
    /// `(a - b) / b * 100`; absent when `b` is zero and `a` is not.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub config_digest: String,
    pub seed: u64,
    pub a: Scheme,
    pub b: Scheme,
    pub rows: Vec<MetricRow>,
    pub reference_label: &'static str,
    pub reference: Vec<FixtureRow>,
}

fn delta(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        (a == 0.0).then_some(0.0)
    } else {
        Some((a - b) / b * 100.0)
    }
}

/// Side-by-side metrics of two runs of the same scenario.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison, SimError> {
    if a.config_digest != b.config_digest {
        return Err(SimError::ConfigMismatch);
    }
    let pairs: [(&'static str, &'static str, f64, f64); 8] = [
        ("power", "J", a.t_pow, b.t_pow),
        ("time", "ms", a.t_time, b.t_time),
        ("messages", "count", a.messages_sent as f64, b.messages_sent as f64),
        ("bytes", "bytes", a.bytes_sent as f64, b.bytes_sent as f64),
        ("rekeys", "count", a.rekey_count as f64, b.rekey_count as f64),
        ("rekey_bytes", "bytes", a.rekey_bytes as f64, b.rekey_bytes as f64),
        ("memory", "bytes", a.peak_key_bytes as f64, b.peak_key_bytes as f64),
        ("blacklisted", "count", a.blacklist_count as f64, b.blacklist_count as f64),
    ];
    Ok(Comparison {
        config_digest: a.config_digest.clone(),
        seed: a.seed,
        a: a.scheme,
        b: b.scheme,
        rows: pairs
            .into_iter()
            .map(|(metric, unit, x, y)| MetricRow {
                metric,
                unit,
                a: x,
                b: y,
                delta_pct: delta(x, y),
            })
            .collect(),
        reference_label: REFERENCE_LABEL,
        reference: reference_fixtures().to_vec(),
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed {}  config {}",
            self.seed,
            &self.config_digest[..12.min(self.config_digest.len())]
        )?;
        writeln!(
            f,
            "{:<12} {:>6} {:>16} {:>16} {:>9}",
            "metric",
            "unit",
            self.a.label(),
            self.b.label(),
            "delta"
        )?;
        for r in &self.rows {
            let d = r.delta_pct.map_or_else(|| "n/a".to_string(), |d| format!("{d:+.1}%"));
            writeln!(f, "{:<12} {:>6} {:>16.3} {:>16.3} {:>9}", r.metric, r.unit, r.a, r.b, d)?;
        }
        writeln!(f)?;
        writeln!(f, "reference tables ({}), proposed vs existing:", self.reference_label)?;
        for r in &self.reference {
            writeln!(
                f,
                "  table {} {:<9} {:<8} {:>6} {:>6} {:<5} [{}]",
                r.table, r.metric, r.row, r.proposed, r.existing, r.unit, self.reference_label
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::metrics::Tally;

    fn report(scheme: Scheme, digest: &str) -> MetricsReport {
        MetricsReport::from_tally(scheme, digest.into(), 1, &Tally::default(), 1, 1, 0)
    }

    #[test]
    fn fixtures_load_verbatim() {
        let rows = reference_fixtures();
        assert_eq!(rows.len(), 29);
        assert!(rows.iter().all(|r| r.source == "paper"));
        let g1 = rows.iter().find(|r| r.table == 2 && r.row == "Group 1").unwrap();
        assert_eq!((g1.proposed, g1.existing, g1.unit.as_str()), (8.0, 11.0, "J"));
        let r1 = rows.iter().find(|r| r.table == 6 && r.row == "Round 1").unwrap();
        assert_eq!((r1.proposed, r1.existing, r1.unit.as_str()), (32.0, 48.0, "ms"));
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let mut a = report(Scheme::HtRcf, "x");
        a.t_pow = 3.5;
        a.messages_sent = 9;
        let c = compare(&a, &a).unwrap();
        assert!(c.rows.iter().all(|r| r.delta_pct == Some(0.0)));
    }

    #[test]
    fn deltas_and_mismatch() {
        let mut a = report(Scheme::HtRcf, "x");
        let mut b = report(Scheme::Baseline, "x");
        a.t_pow = 5.0;
        b.t_pow = 10.0;
        a.rekey_count = 2;
        let c = compare(&a, &b).unwrap();
        assert_eq!(c.rows[0].delta_pct, Some(-50.0));
        assert_eq!(c.rows[4].delta_pct, None);
        let text = c.to_string();
        assert!(text.contains("paper-reported"));
        assert!(text.contains("Group 1"));
        assert!(matches!(compare(&a, &report(Scheme::Baseline, "y")), Err(SimError::ConfigMismatch)));
    }
}
