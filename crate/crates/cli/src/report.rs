//! Machine-readable run output: the JSON report and the sweep table.

use std::collections::BTreeMap;
use std::path::Path;

use gsurf_core::ibp_verifier::{IbpReport, OracleRef};
use gsurf_core::rng::SCHEME_ID;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiments::SweepRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub identity_tag: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub z_score: f64,
    pub pass: bool,
    pub flags: Vec<String>,
    pub params: BTreeMap<String, f64>,
    pub oracle_refs: Vec<OracleRef>,
}

impl From<&IbpReport> for ResultRecord {
    fn from(r: &IbpReport) -> Self {
        Self {
            identity_tag: r.identity_tag.clone(),
            lhs: r.lhs.mean,
            lhs_se: r.lhs.se,
            rhs: r.rhs.mean,
            rhs_se: r.rhs.se,
            z_score: r.z_score,
            pass: r.pass,
            flags: r.flags.clone(),
            params: r.params.clone(),
            oracle_refs: r.oracle_refs.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub n_checks: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub scheme: String,
    pub results: Vec<ResultRecord>,
    pub summary: Summary,
    pub runtime_sec: f64,
    pub version: String,
}

impl RunReport {
    pub fn new(config: &ExperimentConfig, reports: &[IbpReport], runtime_sec: f64) -> Self {
        let results: Vec<ResultRecord> = reports.iter().map(ResultRecord::from).collect();
        let summary = Summary { n_checks: results.len(), n_fail: results.iter().filter(|r| !r.pass).count() };
        Self {
            experiment: config.experiment.as_str().into(),
            config: config.clone(),
            seed: config.seed,
            scheme: SCHEME_ID.into(),
            results,
            summary,
            runtime_sec,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.summary.n_fail == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report without its wall time, which is the only field allowed to
    /// differ between identical runs.
    pub fn body_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("runtime_sec");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    Ok(())
}

pub fn write_sweep(rows: &[SweepRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
