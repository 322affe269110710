use crate::acoustic::{detection_latency, localize_event, propagate};
use crate::availability::compare_configurations;
use crate::balance::{endpoint_inventory, BalanceMonitor, BalanceSample, InventoryMode};
use crate::error::{Error, Result};
use crate::hydraulics::{GridState, MassLedger};
use crate::network::InstrumentKind;
use crate::rtm::{RtmDetector, ShadowModel};
use crate::telemetry::{plausibility_filter, FilterHistory, NoiseSpec, Sampler, TelemetryFrame};

use super::report::{
    AcousticEvent, AcousticReport, BalanceReport, BalanceRow, CombinedVerdict, Failure, Metrics, RtmReport,
    RunMetadata, RunReport, RunStatus,
};
use super::Scenario;

/// Everything a run produces: the report plus the bulk data written
/// beside it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Filtered telemetry, one frame per poll.
    pub telemetry: Vec<TelemetryFrame>,
    /// Plant snapshots at the configured dump interval.
    pub snapshots: Vec<GridState>,
}

fn failure(stage: &str, time: f64, e: &Error) -> Failure {
    Failure {
        stage: stage.into(),
        time,
        message: e.to_string(),
        residual_history: match e {
            Error::NonConvergence { history, .. } => history.clone(),
            _ => Vec::new(),
        },
    }
}

/// Runs the plant, telemetry and every configured detector over the
/// horizon. Solver failures end the run early and are reported, not
/// returned as errors; only setup problems produce `Err`.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput> {
    let model = &s.model;
    let last = model.node_count() - 1;
    let instruments = s.instruments().to_vec();
    let mut sampler = Sampler::new(model, &instruments, NoiseSpec { rng_seed: s.seed })?;
    let mut history = FilterHistory::default();
    let supply0 = s.boundary.supply_temperature.value_at(0.0);

    let mut rtm = match &s.rtm {
        Some(c) => {
            let shadow = ShadowModel::new(model.clone(), c.settings, &c.policy, s.solver, supply0)?;
            Some(RtmDetector::new(shadow, c.policy)?)
        }
        None => None,
    };
    let mut balance = match &s.balance {
        Some(b) => Some(BalanceMonitor::new(b.window, b.threshold)?),
        None => None,
    };
    let id = |kind, node| s.instrument_at(kind, node).map(str::to_string);
    let (q_in_id, q_out_id) = (id(InstrumentKind::Flow, 0), id(InstrumentKind::Flow, last));
    let (p_in_id, p_out_id) = (id(InstrumentKind::Pressure, 0), id(InstrumentKind::Pressure, last));
    let (t_in_id, t_out_id) = (
        id(InstrumentKind::Temperature, 0),
        id(InstrumentKind::Temperature, last),
    );

    let steps = (s.poll_interval / s.solver.dt).round() as usize;
    let polls = (s.horizon / s.poll_interval + 1e-9).floor() as usize;
    let mut ledger = MassLedger::default();
    let mut frames = Vec::with_capacity(polls + 1);
    let mut snapshots = Vec::new();
    let mut next_dump = 0.0;
    let mut fail: Option<Failure> = None;
    let mut rtm_live = true;

    let mut state = match model.steady_state(&s.boundary, 0.0, &s.leaks, &s.solver) {
        Ok(st) => Some(st),
        Err(e) => {
            fail = Some(failure("plant", 0.0, &e));
            None
        }
    };

    'polls: for k in 0..=polls {
        let Some(mut st) = state.take() else { break };
        let t = k as f64 * s.poll_interval;
        if k > 0 {
            for _ in 0..steps {
                match model.advance(&st, &s.boundary, &s.leaks, &s.solver) {
                    Ok((next, step)) => {
                        ledger.record(&step);
                        st = next;
                    }
                    Err(e) => {
                        fail = Some(failure("plant", st.t, &e));
                        break 'polls;
                    }
                }
            }
            st.t = t;
        }
        if let Some(every) = s.state_dump_interval {
            if t >= next_dump - 1e-9 {
                snapshots.push(st.clone());
                next_dump += every;
            }
        }
        let raw = sampler.sample(model, &st, t);
        let frame = plausibility_filter(&raw, &mut history, &s.limits);

        if let Some(det) = rtm.as_mut().filter(|_| rtm_live) {
            if let Err(e) = det.process(&frame) {
                // keep the partial verdict, stop feeding the detector
                fail.get_or_insert_with(|| failure("rtm", t, &e));
                rtm_live = false;
            }
        }
        if let (Some(mon), Some(cfg)) = (balance.as_mut(), &s.balance) {
            let good = |id: &Option<String>| id.as_deref().and_then(|i| frame.good(i));
            let inventory = match cfg.inventory {
                InventoryMode::Model => rtm
                    .as_ref()
                    .and_then(|d| d.shadow().state().map(|st| d.shadow().model().linepack(st))),
                InventoryMode::EndpointAverage => match (good(&p_in_id), good(&p_out_id)) {
                    (Some(pi), Some(po)) => Some(endpoint_inventory(
                        model,
                        pi,
                        po,
                        good(&t_in_id).unwrap_or(supply0),
                        good(&t_out_id).or(good(&t_in_id)).unwrap_or(supply0),
                    )),
                    _ => None,
                },
            };
            mon.push(BalanceSample {
                t,
                q_in: good(&q_in_id),
                q_out: good(&q_out_id),
                inventory,
            })?;
        }
        frames.push(frame);
        state = Some(st);
    }

    let rtm_report = match rtm.as_mut() {
        Some(det) => {
            let verdict = match det.finalize() {
                Ok(v) => v,
                Err(e) => {
                    let t = det.trace().last().map(|r| r.t).unwrap_or_default();
                    fail.get_or_insert_with(|| failure("rtm", t, &e));
                    det.verdict().clone()
                }
            };
            let (a, b) = det.shadow().boundary_ids();
            Some(RtmReport {
                policy: *det.policy(),
                boundary_instruments: (a.to_string(), b.to_string()),
                indicators: det.indicator_ids().to_vec(),
                verdict,
                trace: det.trace().to_vec(),
            })
        }
        None => None,
    };

    let balance_report = match (balance, &s.balance) {
        (Some(mon), Some(cfg)) => Some(BalanceReport {
            window: cfg.window,
            threshold: cfg.threshold,
            inventory: cfg.inventory,
            windows: mon
                .windows()
                .iter()
                .map(|w| BalanceRow {
                    start: w.start,
                    end: w.end,
                    polls: w.polls,
                    missing_fraction: w.missing_fraction,
                    totals: w.totals,
                    alarm: crate::balance::balance_alarm(w, cfg.threshold),
                })
                .collect(),
            first_alarm: mon.first_alarm(),
            trend: mon.trend(),
        }),
        _ => None,
    };

    let acoustic_report = match &s.acoustic {
        Some(a) => {
            let mut events = Vec::new();
            // only onsets inside the run emit a front
            for (i, leak) in s.leaks.iter().enumerate() {
                if !(leak.start_time > 0.0 && leak.mass_rate > 0.0) {
                    continue;
                }
                let arrivals = propagate(leak, a.amplitude, &a.sensors, &a.wave)?;
                events.push(AcousticEvent {
                    leak: i,
                    fix: localize_event(&arrivals, a.wave.speed)?,
                    latency: detection_latency(leak, &arrivals),
                    arrivals,
                });
            }
            Some(AcousticReport {
                speed: a.wave.speed,
                events,
            })
        }
        None => None,
    };

    let availability = if s.availability.is_empty() {
        Vec::new()
    } else {
        compare_configurations(&s.availability)?
    };

    let metrics = metrics(
        s,
        rtm_report.as_ref(),
        balance_report.as_ref(),
        acoustic_report.as_ref(),
    );
    let report = RunReport {
        metadata: RunMetadata {
            name: s.name.clone(),
            config_hash: s.config_hash.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: s.seed,
            horizon: s.horizon,
            poll_interval: s.poll_interval,
            polls: frames.len(),
            nodes: model.node_count(),
            dx: model.grid.dx,
            dt: s.solver.dt,
        },
        status: if fail.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Completed
        },
        failure: fail,
        ground_truth: s.leaks.clone(),
        combined: CombinedVerdict::join(rtm_report.as_ref(), balance_report.as_ref()),
        rtm: rtm_report,
        balance: balance_report,
        acoustic: acoustic_report,
        mass_ledger: ledger,
        availability,
        metrics,
    };
    Ok(RunOutput {
        report,
        telemetry: frames,
        snapshots,
    })
}

fn metrics(
    s: &Scenario,
    rtm: Option<&RtmReport>,
    balance: Option<&BalanceReport>,
    acoustic: Option<&AcousticReport>,
) -> Metrics {
    let mut m = Metrics::default();
    let first = s
        .leaks
        .iter()
        .enumerate()
        .filter(|(_, l)| l.mass_rate > 0.0)
        .min_by(|a, b| a.1.start_time.total_cmp(&b.1.start_time));
    let onset = first.map(|(_, l)| l.start_time).unwrap_or(f64::INFINITY);

    if let Some(r) = rtm {
        if let Some(t) = r.verdict.declared_time {
            if t < onset {
                m.false_alarms.push("rtm".into());
            } else if let Some((_, leak)) = first {
                m.rtm_latency = Some(t - leak.start_time);
                m.rtm_size_error = r
                    .verdict
                    .size_estimate
                    .or(r.verdict.size_at_alarm)
                    .map(|q| (q - leak.mass_rate).abs());
                m.rtm_location_error = r.verdict.location_estimate.map(|x| (x - leak.position).abs());
            }
        }
    }
    if let Some(b) = balance {
        if let Some(t) = b.first_alarm {
            // a window alarms at its end, so latency runs to that end
            if t <= onset {
                m.false_alarms.push("balance".into());
            } else if first.is_some() {
                m.balance_latency = Some(t - onset);
            }
        }
    }
    if let (Some(a), Some((i, leak))) = (acoustic, first) {
        if let Some(e) = a.events.iter().find(|e| e.leak == i) {
            m.acoustic_latency = e.latency;
            m.acoustic_location_error = e.fix.as_ref().map(|f| (f.localization.position - leak.position).abs());
        }
    }
    m
}
