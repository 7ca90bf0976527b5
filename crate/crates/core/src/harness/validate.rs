//! Forecast check of archived solutions on the holdout window.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case::CaseFile;
use crate::error::{Error, Result};
use crate::orchestrator::{ArchiveEntry, SolutionFile};
use crate::sim::ForwardModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    Over,
    Under,
    Exact,
}

impl Bias {
    pub fn as_str(self) -> &'static str {
        match self {
            Bias::Over => "over",
            Bias::Under => "under",
            Bias::Exact => "exact",
        }
    }
}

/// Holdout forecast of one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// unweighted squared mismatch over the training window
    pub history_mismatch: f64,
    /// unweighted squared mismatch over the holdout window
    pub holdout_mismatch: f64,
    /// Σ forecast − Σ observed over the holdout window
    pub cumulative_error: f64,
    pub bias: Bias,
    /// simulated holdout series, step-major
    pub series: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRow {
    pub index: usize,
    pub objective: f64,
    pub forecast: Forecast,
    pub start_holdout_mismatch: f64,
}

impl ValidationRow {
    pub fn beats_start(&self) -> bool {
        self.forecast.holdout_mismatch < self.start_holdout_mismatch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub start: Forecast,
    pub rows: Vec<ValidationRow>,
}

pub const VALIDATE_HEADER: &str =
    "solution,objective,history_mismatch,holdout_mismatch,start_holdout_mismatch,cumulative_error,bias,beats_start";

impl ValidationReport {
    pub fn all_beat_start(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(ValidationRow::beats_start)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(VALIDATE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let f = &r.forecast;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.index,
                r.objective,
                f.history_mismatch,
                f.holdout_mismatch,
                r.start_holdout_mismatch,
                f.cumulative_error,
                f.bias.as_str(),
                r.beats_start()
            );
        }
        out
    }
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Simulates `u` over training + holdout and scores both windows.
pub fn forecast(case: &CaseFile, model: &dyn ForwardModel, u: &[f64]) -> Result<Forecast> {
    let holdout = case
        .holdout
        .as_ref()
        .ok_or_else(|| Error::Config(format!("case {:?} has no holdout window", case.name)))?;
    let series = model.simulate(u, &case.extended_schedule())?;
    let split = case.objective.observations.len();
    if series.observations.len() != split + holdout.observations.len() {
        return Err(Error::shape(
            "forecast observations",
            split + holdout.observations.len(),
            series.observations.len(),
        ));
    }
    let (hist, fut) = series.observations.split_at(split);
    let cumulative_error = fut.iter().sum::<f64>() - holdout.observations.iter().sum::<f64>();
    let bias = if cumulative_error > 0.0 {
        Bias::Over
    } else if cumulative_error < 0.0 {
        Bias::Under
    } else {
        Bias::Exact
    };
    Ok(Forecast {
        history_mismatch: squared(hist, &case.objective.observations),
        holdout_mismatch: squared(fut, &holdout.observations),
        cumulative_error,
        bias,
        series: fut.to_vec(),
    })
}

/// Scores solution files against the start vector. An empty set is an error.
pub fn validate_solutions(case: &CaseFile, model: &dyn ForwardModel, solutions: &[SolutionFile]) -> Result<ValidationReport> {
    let pairs: Vec<(usize, &ArchiveEntry)> = solutions.iter().map(|s| (s.index, &s.entry)).collect();
    validate_entries(case, model, &pairs)
}

/// `(index, entry)` pairs scored against the start vector.
pub fn validate_entries(case: &CaseFile, model: &dyn ForwardModel, solutions: &[(usize, &ArchiveEntry)]) -> Result<ValidationReport> {
    if solutions.is_empty() {
        return Err(Error::Config("no archived solutions to validate".into()));
    }
    let start = forecast(case, model, case.start.as_slice())?;
    let rows = solutions
        .iter()
        .map(|&(index, e)| {
            Ok(ValidationRow {
                index,
                objective: e.objective,
                forecast: forecast(case, model, &e.params)?,
                start_holdout_mismatch: start.holdout_mismatch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport { start, rows })
}

pub fn write_report(report: &ValidationReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}
