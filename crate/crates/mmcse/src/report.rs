//! JSON metrics reports and tab-separated ablation tables.

use std::path::Path;

use mmcse_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::{write_file, CliError, Result};

pub const REPORT_VERSION: u32 = 1;

/// A metrics report plus the run it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl ReportFile {
    pub fn new(metrics: MetricsReport, seed: u64, step: u64, config_hash: String) -> Self {
        ReportFile {
            format_version: REPORT_VERSION,
            seed,
            step,
            config_hash,
            metrics,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let r: ReportFile = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
        if r.format_version != REPORT_VERSION {
            return Err(CliError::format(path, format!("report version {}", r.format_version)));
        }
        Ok(r)
    }
}

/// One grid point of an ablation: summary statistics over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub sweep: String,
    pub level: String,
    /// Numeric position on the plot's x axis.
    pub x: f64,
    pub spearman: Vec<f64>,
    pub alignment: Vec<f64>,
    pub uniformity: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean, sample standard deviation (NaN for one value) and median.
pub fn summary(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        f64::NAN
    } else {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std, median(v))
}

impl AblationRow {
    pub fn spearman_median(&self) -> f64 {
        median(&self.spearman)
    }

    pub fn alignment_median(&self) -> f64 {
        median(&self.alignment)
    }
}

pub const TABLE_HEADER: &str = "# mmcse-table\t1\nsweep\tlevel\tx\tn\tspearman_mean\tspearman_std\tspearman_median\talignment_mean\talignment_std\talignment_median\tuniformity_mean\tuniformity_std\tuniformity_median";

pub fn table_row(r: &AblationRow) -> String {
    let (sm, ss, sd) = summary(&r.spearman);
    let (am, as_, ad) = summary(&r.alignment);
    let (um, us, ud) = summary(&r.uniformity);
    format!(
        "{}\t{}\t{}\t{}\t{sm}\t{ss}\t{sd}\t{am}\t{as_}\t{ad}\t{um}\t{us}\t{ud}",
        r.sweep,
        r.level,
        r.x,
        r.spearman.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> MetricsReport {
        MetricsReport {
            spearman: 0.5,
            alignment: 1.25,
            uniformity_log: -3.0,
            uniformity_raw: 0.049787068367863944,
            retrieval: None,
            aggregate: None,
        }
    }

    #[test]
    fn json_has_exactly_the_report_fields_and_metadata() {
        let r = ReportFile::new(metrics(), 42, 10, "abc".into());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "aggregate", "alignment", "config_hash", "format_version", "retrieval", "seed", "spearman", "step",
                "uniformity_log", "uniformity_raw"
            ]
        );
        let back: ReportFile = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn summaries() {
        assert_eq!(summary(&[1.0, 3.0, 2.0]), (2.0, 1.0, 2.0));
        let (_, s, m) = summary(&[4.0]);
        assert!(s.is_nan());
        assert_eq!(m, 4.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), 2.5);
    }
}
