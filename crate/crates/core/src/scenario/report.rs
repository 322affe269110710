use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticFix, Arrival};
use crate::availability::RankedChain;
use crate::balance::{BalanceTotals, InventoryMode};
use crate::hydraulics::{GridState, LeakEvent, LineModel, MassLedger};
use crate::rtm::{LeakVerdict, PollRecord, VotingPolicy};
use crate::telemetry::TelemetryFrame;

use super::sweep::SweepRow;
use super::{RunOutput, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub name: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub horizon: f64,
    pub poll_interval: f64,
    pub polls: usize,
    pub nodes: usize,
    pub dx: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A solver failed; the report covers the run up to that point.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// `plant` or `rtm`.
    pub stage: String,
    pub time: f64,
    pub message: String,
    /// Newton residual history when the failure was a non-convergence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtmReport {
    pub policy: VotingPolicy,
    pub boundary_instruments: (String, String),
    pub indicators: Vec<String>,
    pub verdict: LeakVerdict,
    pub trace: Vec<PollRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub start: f64,
    pub end: f64,
    pub polls: usize,
    pub missing_fraction: f64,
    /// Absent when the window was voided for missing data.
    pub totals: Option<BalanceTotals>,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub window: f64,
    pub threshold: f64,
    pub inventory: InventoryMode,
    pub windows: Vec<BalanceRow>,
    pub first_alarm: Option<f64>,
    /// Imbalance slope across windows (kg/s).
    pub trend: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticEvent {
    /// Index into the ground-truth leak list.
    pub leak: usize,
    pub arrivals: Vec<Arrival>,
    pub fix: Option<AcousticFix>,
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticReport {
    pub speed: f64,
    pub events: Vec<AcousticEvent>,
}

/// Detector performance against the first leak to start. Empty for a
/// no-leak run without alarms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtm_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtm_size_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtm_location_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic_location_error: Option<f64>,
    /// Detectors that alarmed while no leak was flowing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub false_alarms: Vec<String>,
}

impl Metrics {
    pub fn is_empty(&self) -> bool {
        *self == Metrics::default()
    }
}

/// The model detector backed up by the line balance: a leak is called
/// when either alarms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CombinedVerdict {
    pub leak: bool,
    pub first_alarm: Option<f64>,
    /// Detectors that alarmed, earliest first.
    pub alarmed_by: Vec<String>,
}

impl CombinedVerdict {
    pub fn join(rtm: Option<&RtmReport>, balance: Option<&BalanceReport>) -> Self {
        let mut alarms: Vec<(f64, &str)> = Vec::new();
        if let Some(t) = rtm.and_then(|r| r.verdict.declared_time) {
            alarms.push((t, "rtm"));
        }
        if let Some(t) = balance.and_then(|b| b.first_alarm) {
            alarms.push((t, "balance"));
        }
        alarms.sort_by(|a, b| a.0.total_cmp(&b.0));
        CombinedVerdict {
            leak: !alarms.is_empty(),
            first_alarm: alarms.first().map(|a| a.0),
            alarmed_by: alarms.iter().map(|a| a.1.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: RunMetadata,
    pub status: RunStatus,
    pub failure: Option<Failure>,
    /// The scenario's leak events, as configured.
    pub ground_truth: Vec<LeakEvent>,
    pub rtm: Option<RtmReport>,
    pub balance: Option<BalanceReport>,
    pub acoustic: Option<AcousticReport>,
    pub combined: CombinedVerdict,
    pub mass_ledger: MassLedger,
    pub availability: Vec<RankedChain>,
    pub metrics: Metrics,
}

fn provenance<W: Write>(out: &mut W, hash: &str) -> std::io::Result<()> {
    writeln!(out, "# config_sha256={hash}")
}

pub fn write_report_json<W: Write>(out: &mut W, report: &RunReport) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, report)?;
    writeln!(out)
}

pub fn write_telemetry_csv<W: Write>(out: &mut W, hash: &str, frames: &[TelemetryFrame]) -> std::io::Result<()> {
    provenance(out, hash)?;
    crate::telemetry::write_csv(out, frames)
}

/// Snapshots as `t x P V T rho` rows, one blank line between snapshots.
pub fn write_state_dumps<W: Write>(
    out: &mut W,
    hash: &str,
    model: &LineModel,
    states: &[GridState],
) -> std::io::Result<()> {
    provenance(out, hash)?;
    writeln!(out, "# t x P V T rho")?;
    for (i, s) in states.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        model.write_state_dump(out, s)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

/// Per-poll detector trace: vote, imbalance and the window-averaged
/// discrepancy of every indicator.
pub fn write_trace_csv<W: Write>(out: &mut W, hash: &str, rtm: &RtmReport) -> std::io::Result<()> {
    provenance(out, hash)?;
    write!(out, "t,available,vote,imbalance")?;
    for id in &rtm.indicators {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for r in &rtm.trace {
        write!(out, "{},{},{},{}", r.t, r.available, r.vote, opt(r.imbalance))?;
        for a in &r.averaged {
            write!(out, ",{}", opt(*a))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_balance_csv<W: Write>(out: &mut W, hash: &str, balance: &BalanceReport) -> std::io::Result<()> {
    provenance(out, hash)?;
    writeln!(out, "start,end,v_in,v_out,delta_linepack,imbalance,alarm")?;
    for w in &balance.windows {
        let t = w.totals;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            w.start,
            w.end,
            opt(t.map(|t| t.v_in)),
            opt(t.map(|t| t.v_out)),
            opt(t.map(|t| t.delta_linepack)),
            opt(t.map(|t| t.imbalance)),
            if t.is_some() {
                w.alarm.to_string()
            } else {
                "indeterminate".into()
            }
        )?;
    }
    Ok(())
}

/// Sensor arrivals of every acoustic event, one row per sensor.
pub fn write_acoustic_csv<W: Write>(out: &mut W, hash: &str, acoustic: &AcousticReport) -> std::io::Result<()> {
    provenance(out, hash)?;
    writeln!(out, "leak,sensor_id,position,arrival_time,amplitude,triggered")?;
    for e in &acoustic.events {
        for a in &e.arrivals {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6e},{}",
                e.leak, a.sensor_id, a.position, a.arrival_time, a.amplitude, a.triggered
            )?;
        }
    }
    Ok(())
}

pub fn write_availability_csv<W: Write>(out: &mut W, hash: &str, ranking: &[RankedChain]) -> std::io::Result<()> {
    provenance(out, hash)?;
    crate::availability::write_csv(out, ranking)
}

/// One row per sweep cell, in cell order.
pub fn write_sweep_csv<W: Write>(out: &mut W, template_hash: &str, rows: &[SweepRow]) -> std::io::Result<()> {
    provenance(out, template_hash)?;
    let params: Vec<&str> = rows
        .first()
        .map(|r| r.assignments.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    write!(out, "cell")?;
    for p in &params {
        write!(out, ",{p}")?;
    }
    writeln!(
        out,
        ",config_sha256,status,rtm_alarm,rtm_latency,rtm_size_error,rtm_location_error,balance_latency,acoustic_latency,acoustic_location_error,error"
    )?;
    for r in rows {
        write!(out, "{}", r.cell)?;
        for (_, v) in &r.assignments {
            write!(out, ",{}", v.replace(',', ";"))?;
        }
        let m = r.report.as_ref().map(|rep| &rep.metrics);
        let alarm = r
            .report
            .as_ref()
            .and_then(|rep| rep.rtm.as_ref())
            .map(|rtm| rtm.verdict.declared.to_string())
            .unwrap_or_default();
        let status = match (&r.report, &r.error) {
            (Some(rep), _) => match rep.status {
                super::RunStatus::Completed => "completed",
                super::RunStatus::Failed => "failed",
            },
            (None, _) => "invalid",
        };
        writeln!(
            out,
            ",{},{},{},{},{},{},{},{},{},{}",
            r.config_hash.as_deref().unwrap_or_default(),
            status,
            alarm,
            opt(m.and_then(|m| m.rtm_latency)),
            opt(m.and_then(|m| m.rtm_size_error)),
            opt(m.and_then(|m| m.rtm_location_error)),
            opt(m.and_then(|m| m.balance_latency)),
            opt(m.and_then(|m| m.acoustic_latency)),
            opt(m.and_then(|m| m.acoustic_location_error)),
            r.error.as_deref().unwrap_or_default().replace([',', '\n'], ";")
        )?;
    }
    Ok(())
}

fn write_file(
    dir: &Path,
    name: &str,
    written: &mut Vec<PathBuf>,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> std::io::Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    f(&mut w)?;
    w.flush()?;
    written.push(path);
    Ok(())
}

/// Writes the report and every data file of a run into `dir`, creating it
/// if needed. Files for absent detectors are skipped. Returns the paths
/// written.
pub fn write_run_outputs(dir: &Path, scenario: &Scenario, output: &RunOutput) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (r, hash) = (&output.report, scenario.config_hash.as_str());
    let mut written = Vec::new();
    write_file(dir, "report.json", &mut written, |w| write_report_json(w, r))?;
    write_file(dir, "telemetry.csv", &mut written, |w| {
        write_telemetry_csv(w, hash, &output.telemetry)
    })?;
    if !output.snapshots.is_empty() {
        write_file(dir, "states.txt", &mut written, |w| {
            write_state_dumps(w, hash, &scenario.model, &output.snapshots)
        })?;
    }
    if let Some(rtm) = &r.rtm {
        write_file(dir, "trace.csv", &mut written, |w| write_trace_csv(w, hash, rtm))?;
    }
    if let Some(b) = &r.balance {
        write_file(dir, "balance.csv", &mut written, |w| write_balance_csv(w, hash, b))?;
    }
    if let Some(a) = &r.acoustic {
        write_file(dir, "acoustic.csv", &mut written, |w| write_acoustic_csv(w, hash, a))?;
    }
    if !r.availability.is_empty() {
        write_file(dir, "availability.csv", &mut written, |w| {
            write_availability_csv(w, hash, &r.availability)
        })?;
    }
    Ok(written)
}
