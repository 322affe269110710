use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::report::{RunReport, RunStatus};
use super::{run_scenario, ScenarioTemplate};

/// One swept key path and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParameter {
    pub path: String,
    pub values: Vec<toml::Value>,
}

/// Cartesian grid over template parameters. The first parameter varies
/// slowest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, rename = "parameter")]
    pub parameters: Vec<GridParameter>,
}

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config("(syntax)", e.to_string()))?;
        let grid: SweepGrid = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        for (i, p) in grid.parameters.iter().enumerate() {
            if p.values.is_empty() {
                return Err(Error::config(format!("grid.parameter[{i}].values"), "no values"));
            }
        }
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn cell_count(&self) -> usize {
        self.parameters.iter().map(|p| p.values.len()).product()
    }

    /// Parameter assignments of cell `index`.
    pub fn cell(&self, index: usize) -> Vec<(&str, &toml::Value)> {
        let mut rem = index;
        let mut out = Vec::with_capacity(self.parameters.len());
        for p in self.parameters.iter().rev() {
            let n = p.values.len();
            out.push((p.path.as_str(), &p.values[rem % n]));
            rem /= n;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    /// (key path, value) as written in the grid.
    pub assignments: Vec<(String, String)>,
    pub config_hash: Option<String>,
    /// Absent when the cell's configuration was invalid.
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

/// Runs every grid cell in parallel. Failures are recorded per row; rows
/// come back in cell order. An empty grid runs the template once.
pub fn sweep(template: &ScenarioTemplate, grid: &SweepGrid) -> Vec<SweepRow> {
    (0..grid.cell_count())
        .into_par_iter()
        .map(|cell| {
            let assignments = grid.cell(cell);
            let labels = assignments
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            let mut row = SweepRow {
                cell,
                assignments: labels,
                config_hash: None,
                report: None,
                error: None,
            };
            let mut t = template.clone();
            for (k, v) in assignments {
                if let Err(e) = t.set(k, v.clone()) {
                    row.error = Some(e.to_string());
                    return row;
                }
            }
            row.config_hash = Some(t.hash());
            match t.build().and_then(|s| run_scenario(&s)) {
                Ok(out) => {
                    if out.report.status == RunStatus::Failed {
                        row.error = out
                            .report
                            .failure
                            .as_ref()
                            .map(|f| format!("{} failure: {}", f.stage, f.message));
                    }
                    row.report = Some(out.report);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Medians over the cells that produced each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub failed: usize,
    pub rtm_alarms: usize,
    pub median_rtm_latency: Option<f64>,
    pub median_rtm_size_error: Option<f64>,
    pub median_rtm_location_error: Option<f64>,
}

impl SweepSummary {
    pub fn of(rows: &[SweepRow]) -> Self {
        let metric = |f: fn(&super::Metrics) -> Option<f64>| {
            median(
                rows.iter()
                    .filter_map(|r| r.report.as_ref().and_then(|rep| f(&rep.metrics)))
                    .collect(),
            )
        };
        SweepSummary {
            cells: rows.len(),
            failed: rows.iter().filter(|r| r.error.is_some()).count(),
            rtm_alarms: rows
                .iter()
                .filter(|r| {
                    r.report
                        .as_ref()
                        .and_then(|rep| rep.rtm.as_ref())
                        .is_some_and(|rtm| rtm.verdict.declared)
                })
                .count(),
            median_rtm_latency: metric(|m| m.rtm_latency),
            median_rtm_size_error: metric(|m| m.rtm_size_error),
            median_rtm_location_error: metric(|m| m.rtm_location_error),
        }
    }
}
