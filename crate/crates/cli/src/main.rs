use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use linewatch::scenario::{sweep, write_run_outputs, write_sweep_csv, RunStatus, SweepGrid, SweepSummary};
use linewatch::{run_scenario, ScenarioTemplate};
use log::{info, warn};

/// Pipeline leak-detection desk simulator.
#[derive(Parser)]
#[command(name = "linewatch", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Override a key, e.g. --set leaks.0.rate=1.4 or --set 'run.horizon="2 h"'.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the report and data files.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(short, long, default_value = "linewatch-out")]
        out: PathBuf,
    },
    /// Run a parameter grid over a scenario template.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Grid file with [[parameter]] tables of `path` and `values`.
        grid: PathBuf,
        #[arg(short, long, default_value = "linewatch-out")]
        out: PathBuf,
    },
    /// Check a scenario and print what would run.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

/// `KEY=VALUE`, where VALUE is read as a TOML value and falls back to a
/// bare string.
fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let Some((key, raw)) = s.split_once('=') else {
        bail!("override `{s}` is not KEY=VALUE");
    };
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.trim().to_string(), value))
}

fn template(args: &ScenarioArgs) -> Result<ScenarioTemplate> {
    let mut t =
        ScenarioTemplate::load(&args.scenario).with_context(|| format!("loading {}", args.scenario.display()))?;
    for o in &args.overrides {
        let (k, v) = parse_override(o)?;
        t.set(&k, v)?;
    }
    Ok(t)
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {name}"))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn run(args: &ScenarioArgs, out: &Path) -> Result<ExitCode> {
    let s = template(args)?.build()?;
    info!(
        "{}: {} nodes, {} polls",
        s.name,
        s.model.node_count(),
        (s.horizon / s.poll_interval) as usize
    );
    let o = run_scenario(&s)?;
    let r = &o.report;
    for p in write_run_outputs(out, &s, &o).with_context(|| format!("writing to {}", out.display()))? {
        info!("wrote {}", p.display());
    }

    println!("{} [{}]", s.name, s.config_hash);
    if let Some(rtm) = &r.rtm {
        let v = &rtm.verdict;
        match v.declared_time {
            Some(t) => println!(
                "  model: leak declared at {t} s, size {} kg/s, location {} m",
                fmt(v.size_estimate.or(v.size_at_alarm)),
                fmt(v.location_estimate)
            ),
            None => println!("  model: no leak declared"),
        }
    }
    if let Some(b) = &r.balance {
        match b.first_alarm {
            Some(t) => println!("  balance: alarm at {t} s (threshold {:.1} kg)", b.threshold),
            None => println!("  balance: no alarm (threshold {:.1} kg)", b.threshold),
        }
    }
    if !r.metrics.is_empty() {
        println!("  metrics: {}", serde_json::to_string(&r.metrics)?);
    }
    println!("  output in {}", out.display());
    Ok(match r.status {
        RunStatus::Completed => ExitCode::SUCCESS,
        RunStatus::Failed => {
            let f = r.failure.as_ref().expect("failed runs carry a failure");
            eprintln!("run failed in {} at t = {} s: {}", f.stage, f.time, f.message);
            ExitCode::from(2)
        }
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

fn run_sweep(args: &ScenarioArgs, grid: &Path, out: &Path) -> Result<ExitCode> {
    let t = template(args)?;
    let g = SweepGrid::load(grid).with_context(|| format!("loading {}", grid.display()))?;
    info!("sweeping {} cells", g.cell_count());
    let rows = sweep(&t, &g);
    for r in rows.iter().filter(|r| r.error.is_some()) {
        warn!("cell {}: {}", r.cell, r.error.as_deref().unwrap_or_default());
    }
    let summary = SweepSummary::of(&rows);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_with(out, "sweep.csv", |w| write_sweep_csv(w, &t.hash(), &rows))?;
    write_with(out, "sweep_summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    println!(
        "{} cells, {} failed, {} model alarms; median latency {} s, size error {} kg/s, location error {} m",
        summary.cells,
        summary.failed,
        summary.rtm_alarms,
        fmt(summary.median_rtm_latency),
        fmt(summary.median_rtm_size_error),
        fmt(summary.median_rtm_location_error)
    );
    Ok(if summary.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn validate(args: &ScenarioArgs) -> Result<ExitCode> {
    let t = template(args)?;
    let s = t.build()?;
    println!("{} [{}]", s.name, s.config_hash);
    println!(
        "  grid: {} nodes, dx {:.1} m, dt {} s; horizon {} s, poll {} s",
        s.model.node_count(),
        s.model.grid.dx,
        s.solver.dt,
        s.horizon,
        s.poll_interval
    );
    println!(
        "  instruments: {}",
        s.instruments()
            .iter()
            .map(|i| i.id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("  leaks: {}", s.leaks.len());
    if let Some(r) = &s.rtm {
        let p = &r.policy;
        println!(
            "  model detector: flow {:.3} kg/s, pressure {:.0} Pa, M={}, K={}",
            p.flow_threshold, p.pressure_threshold, p.consecutive_required, p.min_indicators
        );
    }
    if let Some(b) = &s.balance {
        println!("  balance: window {} s, threshold {:.1} kg", b.window, b.threshold);
    }
    if let Some(a) = &s.acoustic {
        println!("  acoustic: {} sensors at {} m/s", a.sensors.len(), a.wave.speed);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Run { scenario, out } => run(scenario, out),
        Command::Sweep { scenario, grid, out } => run_sweep(scenario, grid, out),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_as_toml() {
        let (k, v) = parse_override("leaks.0.rate=1.4").unwrap();
        assert_eq!(k, "leaks.0.rate");
        assert_eq!(v.as_float(), Some(1.4));
        assert_eq!(parse_override("run.horizon=\"2 h\"").unwrap().1.as_str(), Some("2 h"));
        assert_eq!(parse_override("run.horizon=2 h").unwrap().1.as_str(), Some("2 h"));
        assert_eq!(parse_override("rtm.enabled=false").unwrap().1.as_bool(), Some(false));
        assert!(parse_override("nokey").is_err());
    }
}
