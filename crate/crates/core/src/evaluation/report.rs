use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "method,sweep_axis,sweep_value,domain,split,mean_perf,std_perf,n_queries,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub sweep_axis: String,
    pub sweep_value: String,
    pub domain: String,
    pub split: String,
    pub mean_perf: f64,
    pub std_perf: Option<f64>,
    pub n_queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    /// Rows for one method, optionally restricted to a split.
    pub fn method_rows<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Mean of the first row for `method`; convenient for single-split reports.
    pub fn mean(&self, method: &str) -> Option<f64> {
        self.method_rows(method).next().map(|r| r.mean_perf)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let std = r.std_perf.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.method, r.sweep_axis, r.sweep_value, r.domain, r.split, r.mean_perf, std, r.n_queries, r.seed
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
