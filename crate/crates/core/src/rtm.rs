//! Real-time transient model leak detection.
//!
//! A shadow copy of the line is driven by measured boundary conditions.
//! Every other flow or pressure instrument becomes a leak indicator:
//! measured minus modeled, averaged over a short window and compared with
//! a per-kind threshold. A voting rule turns indicator streaks into an
//! alarm; the leak is then sized from the compensated flow imbalance and
//! located by a steady-state scan over candidate nodes.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{BoundaryConditions, EndCondition, GridState, LeakEvent, LineModel, Schedule, SolverSettings};
use crate::network::{InstrumentKind, InstrumentPlacement};
use crate::telemetry::{instrument_nodes, TelemetryFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingPolicy {
    /// kg/s
    pub flow_threshold: f64,
    /// Pa
    pub pressure_threshold: f64,
    /// M: polls an indicator must stay above threshold.
    pub consecutive_required: usize,
    /// K: indicators that must be in alarm together.
    pub min_indicators: usize,
}

impl VotingPolicy {
    pub const DEFAULT_CONSECUTIVE: usize = 3;
    pub const DEFAULT_MIN_INDICATORS: usize = 2;

    /// Thresholds of `sigmas` times the noisiest indicator instrument of
    /// each kind, never below `floor_fraction` of its span.
    pub fn from_instruments<'a>(
        indicators: impl IntoIterator<Item = &'a InstrumentPlacement>,
        sigmas: f64,
        floor_fraction: f64,
    ) -> Self {
        let mut flow: f64 = 0.0;
        let mut pressure: f64 = 0.0;
        for ins in indicators {
            let t = (sigmas * ins.noise_sigma).max(floor_fraction * ins.span_width());
            match ins.kind {
                InstrumentKind::Flow => flow = flow.max(t),
                InstrumentKind::Pressure => pressure = pressure.max(t),
                _ => {}
            }
        }
        VotingPolicy {
            flow_threshold: if flow > 0.0 { flow } else { f64::INFINITY },
            pressure_threshold: if pressure > 0.0 { pressure } else { f64::INFINITY },
            consecutive_required: Self::DEFAULT_CONSECUTIVE,
            min_indicators: Self::DEFAULT_MIN_INDICATORS,
        }
    }

    pub fn threshold(&self, kind: InstrumentKind) -> f64 {
        match kind {
            InstrumentKind::Flow => self.flow_threshold,
            _ => self.pressure_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flow_threshold > 0.0) {
            return Err(Error::config("rtm.flow_threshold", "must be > 0"));
        }
        if !(self.pressure_threshold > 0.0) {
            return Err(Error::config("rtm.pressure_threshold", "must be > 0"));
        }
        if self.consecutive_required == 0 {
            return Err(Error::config("rtm.consecutive", "must be >= 1"));
        }
        if self.min_indicators == 0 {
            return Err(Error::config("rtm.min_indicators", "must be >= 1"));
        }
        Ok(())
    }
}

/// Alarm iff at least K indicators have each exceeded their threshold on
/// the last M polls. `history[k][i]` is indicator `i` at poll `k`, oldest
/// first.
pub fn vote(history: &[Vec<bool>], policy: &VotingPolicy) -> bool {
    let Some(last) = history.last() else {
        return false;
    };
    let m = policy.consecutive_required;
    if history.len() < m {
        return false;
    }
    let in_alarm = (0..last.len())
        .filter(|&i| {
            history[history.len() - m..]
                .iter()
                .all(|poll| poll.get(i).copied().unwrap_or(false))
        })
        .count();
    in_alarm >= policy.min_indicators
}

/// Leak size from per-poll compensated imbalances
/// `Q_in - Q_out - dLinepack/dt` over the voting polls. Unavailable if any
/// poll lacked an end flow.
pub fn size_leak(imbalances: &[Option<f64>]) -> Option<f64> {
    if imbalances.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for v in imbalances {
        sum += (*v)?;
    }
    Some(sum / imbalances.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowEnd {
    Pressure,
    Flow,
}

impl ShadowEnd {
    fn kind(self) -> InstrumentKind {
        match self {
            ShadowEnd::Pressure => InstrumentKind::Pressure,
            ShadowEnd::Flow => InstrumentKind::Flow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtmSettings {
    /// Measured quantity imposed at the inlet of the shadow model.
    pub shadow_inlet: ShadowEnd,
    pub shadow_outlet: ShadowEnd,
    /// W: polls in the indicator moving average.
    pub averaging_polls: usize,
    /// S: polls a boundary value may be held before detection is suspended.
    pub stale_polls: usize,
    /// Polls after the alarm before the leak is located, letting the line settle.
    pub locate_delay_polls: usize,
    /// Relative spread below which the location objective counts as flat.
    pub ambiguity: f64,
}

impl Default for RtmSettings {
    fn default() -> Self {
        RtmSettings {
            shadow_inlet: ShadowEnd::Pressure,
            shadow_outlet: ShadowEnd::Flow,
            averaging_polls: 12,
            stale_polls: 3,
            locate_delay_polls: 24,
            ambiguity: 0.01,
        }
    }
}

impl RtmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.shadow_inlet == ShadowEnd::Flow && self.shadow_outlet == ShadowEnd::Flow {
            return Err(Error::config(
                "rtm.shadow_inlet",
                "flow at both ends leaves the shadow model without a pressure anchor",
            ));
        }
        if self.averaging_polls == 0 {
            return Err(Error::config("rtm.averaging_polls", "must be >= 1"));
        }
        if !(self.ambiguity >= 0.0 && self.ambiguity < 1.0) {
            return Err(Error::config("rtm.ambiguity", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One indicator channel at one poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEntry {
    pub id: String,
    pub kind: InstrumentKind,
    pub measured: Option<f64>,
    pub modeled: f64,
    /// measured - modeled; absent when the reading is not good.
    pub delta: Option<f64>,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub poll_time: f64,
    pub entries: Vec<DiscrepancyEntry>,
    /// Shadow-model linepack at the poll (kg).
    pub linepack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShadowOutcome {
    Available(Discrepancy),
    /// Boundary data too stale to drive the model.
    Unavailable {
        poll_time: f64,
        reason: String,
    },
}

#[derive(Debug, Clone)]
struct Channel {
    id: String,
    kind: InstrumentKind,
    node: usize,
    threshold: f64,
}

#[derive(Debug, Clone)]
struct HeldValue {
    id: Option<String>,
    value: Option<f64>,
    stale: usize,
}

impl HeldValue {
    fn new(id: Option<String>) -> Self {
        HeldValue {
            id,
            value: None,
            stale: 0,
        }
    }

    fn update(&mut self, frame: &TelemetryFrame) {
        match self.id.as_deref().and_then(|id| frame.good(id)) {
            Some(v) => {
                self.value = Some(v);
                self.stale = 0;
            }
            None => self.stale += 1,
        }
    }
}

/// The line model run in parallel with the plant on measured boundaries.
#[derive(Debug, Clone)]
pub struct ShadowModel {
    model: LineModel,
    settings: RtmSettings,
    solver: SolverSettings,
    inlet: HeldValue,
    outlet: HeldValue,
    supply: HeldValue,
    default_supply_temperature: f64,
    channels: Vec<Channel>,
    state: Option<GridState>,
    /// Boundary values applied at the last step: (t, inlet, outlet, T).
    last_bc: Option<(f64, f64, f64, f64)>,
}

impl ShadowModel {
    pub fn new(
        model: LineModel,
        settings: RtmSettings,
        policy: &VotingPolicy,
        solver: SolverSettings,
        default_supply_temperature: f64,
    ) -> Result<Self> {
        settings.validate()?;
        policy.validate()?;
        solver.validate()?;
        let instruments = model.pipeline.instruments.clone();
        let nodes = instrument_nodes(&model, &instruments)?;
        let last = model.node_count() - 1;
        let find = |kind: InstrumentKind, node: usize| {
            instruments
                .iter()
                .zip(&nodes)
                .find(|(i, &n)| i.kind == kind && n == node)
                .map(|(i, _)| i.id.clone())
        };
        let inlet_id = find(settings.shadow_inlet.kind(), 0).ok_or_else(|| {
            Error::config(
                "rtm.shadow_inlet",
                format!("no {} instrument at the inlet", settings.shadow_inlet.kind().as_str()),
            )
        })?;
        let outlet_id = find(settings.shadow_outlet.kind(), last).ok_or_else(|| {
            Error::config(
                "rtm.shadow_outlet",
                format!("no {} instrument at the outlet", settings.shadow_outlet.kind().as_str()),
            )
        })?;
        let supply_id = find(InstrumentKind::Temperature, 0);
        let channels = instruments
            .iter()
            .zip(&nodes)
            .filter(|(i, _)| {
                matches!(i.kind, InstrumentKind::Flow | InstrumentKind::Pressure)
                    && i.id != inlet_id
                    && i.id != outlet_id
            })
            .map(|(i, &node)| Channel {
                id: i.id.clone(),
                kind: i.kind,
                node,
                threshold: policy.threshold(i.kind),
            })
            .collect();
        Ok(ShadowModel {
            model,
            settings,
            solver,
            inlet: HeldValue::new(Some(inlet_id)),
            outlet: HeldValue::new(Some(outlet_id)),
            supply: HeldValue::new(supply_id),
            default_supply_temperature,
            channels,
            state: None,
            last_bc: None,
        })
    }

    pub fn model(&self) -> &LineModel {
        &self.model
    }

    pub fn state(&self) -> Option<&GridState> {
        self.state.as_ref()
    }

    pub fn indicator_ids(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.id.clone()).collect()
    }

    /// Instrument ids imposed at the inlet and outlet.
    pub fn boundary_ids(&self) -> (&str, &str) {
        (
            self.inlet.id.as_deref().unwrap_or_default(),
            self.outlet.id.as_deref().unwrap_or_default(),
        )
    }

    fn end(kind: ShadowEnd, schedule: Schedule) -> EndCondition {
        match kind {
            ShadowEnd::Pressure => EndCondition::pressure(schedule),
            ShadowEnd::Flow => EndCondition::mass_flow(schedule),
        }
    }

    /// Boundary conditions holding the given values constant.
    pub fn boundary_conditions(&self, inlet: f64, outlet: f64, supply: f64) -> BoundaryConditions {
        BoundaryConditions {
            inlet: Self::end(self.settings.shadow_inlet, Schedule::constant(inlet)),
            outlet: Self::end(self.settings.shadow_outlet, Schedule::constant(outlet)),
            supply_temperature: Schedule::constant(supply),
        }
    }

    /// Boundary values applied at the most recent poll.
    pub fn current_boundary(&self) -> Option<(f64, f64, f64)> {
        self.last_bc.map(|(_, a, b, t)| (a, b, t))
    }

    /// Advances the shadow model to the frame's poll time and computes the
    /// indicator discrepancies.
    pub fn step(&mut self, frame: &TelemetryFrame) -> Result<ShadowOutcome> {
        let t = frame.poll_time;
        self.inlet.update(frame);
        self.outlet.update(frame);
        self.supply.update(frame);
        let s = self.settings.stale_polls;
        let (Some(vin), Some(vout)) = (self.inlet.value, self.outlet.value) else {
            return Ok(ShadowOutcome::Unavailable {
                poll_time: t,
                reason: "no good boundary reading yet".into(),
            });
        };
        let temp = self.supply.value.unwrap_or(self.default_supply_temperature);

        match (self.state.take(), self.last_bc) {
            (Some(mut state), Some((t0, in0, out0, temp0))) => {
                let dt_poll = t - t0;
                if !(dt_poll > 0.0) {
                    return Err(Error::Domain(format!("poll time {t} does not advance past {t0}")));
                }
                let n_sub = (dt_poll / self.solver.dt).round().max(1.0) as usize;
                let settings = SolverSettings {
                    dt: dt_poll / n_sub as f64,
                    ..self.solver
                };
                let ramp = |a: f64, b: f64| Schedule::new(vec![(t0, a), (t, b)]).expect("increasing poll times");
                let bc = BoundaryConditions {
                    inlet: Self::end(self.settings.shadow_inlet, ramp(in0, vin)),
                    outlet: Self::end(self.settings.shadow_outlet, ramp(out0, vout)),
                    supply_temperature: ramp(temp0, temp),
                };
                for k in 0..n_sub {
                    state = self.model.advance(&state, &bc, &[], &settings)?.0;
                    if k + 1 == n_sub {
                        state.t = t;
                    }
                }
                self.state = Some(state);
            }
            _ => {
                let bc = self.boundary_conditions(vin, vout, temp);
                self.state = Some(self.model.steady_state(&bc, t, &[], &self.solver)?);
            }
        }
        self.last_bc = Some((t, vin, vout, temp));

        if self.inlet.stale > s || self.outlet.stale > s {
            return Ok(ShadowOutcome::Unavailable {
                poll_time: t,
                reason: format!("boundary readings stale for more than {s} polls"),
            });
        }
        let state = self.state.as_ref().expect("initialized above");
        let entries = self
            .channels
            .iter()
            .map(|c| {
                let modeled = crate::telemetry::true_value(&self.model, state, c.node, c.kind);
                let measured = frame.good(&c.id);
                let delta = measured.map(|m| m - modeled);
                DiscrepancyEntry {
                    id: c.id.clone(),
                    kind: c.kind,
                    measured,
                    modeled,
                    delta,
                    normalized: delta.map(|d| d / c.threshold),
                }
            })
            .collect();
        Ok(ShadowOutcome::Available(Discrepancy {
            poll_time: t,
            entries,
            linepack: self.model.linepack(state),
        }))
    }
}

/// Result of the candidate-node scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationResult {
    pub position: f64,
    pub node: usize,
    pub ambiguous: bool,
    /// (position, objective) for every candidate; infinite where the
    /// steady solve failed.
    pub objective: Vec<(f64, f64)>,
}

/// A measured value used by the locator.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub node: usize,
    pub kind: InstrumentKind,
    pub value: f64,
    /// Residuals are divided by this scale before squaring.
    pub scale: f64,
}

/// Scans every interior node: places a leak of `size` there, solves the
/// steady state under `bc`, and scores the sum of squared normalized
/// residuals at the measurement points. Returns the minimizer.
pub fn locate_leak(
    model: &LineModel,
    bc: &BoundaryConditions,
    size: f64,
    measurements: &[Measurement],
    solver: &SolverSettings,
    ambiguity: f64,
) -> Result<LocationResult> {
    let n = model.node_count();
    if n < 3 {
        return Err(Error::Domain("line has no interior node to host a leak".into()));
    }
    if measurements.is_empty() {
        return Err(Error::Domain("no measurements to locate against".into()));
    }
    let x = &model.grid.node_positions;
    let t = bc.supply_temperature.start_time();
    let objective: Vec<(f64, f64)> = (1..n - 1)
        .into_par_iter()
        .map(|node| {
            let leak = LeakEvent {
                position: x[node],
                start_time: f64::NEG_INFINITY,
                mass_rate: size.max(0.0),
            };
            let score = match model.steady_state(bc, t, &[leak], solver) {
                Ok(state) => measurements
                    .iter()
                    .map(|m| {
                        let r = (m.value - crate::telemetry::true_value(model, &state, m.node, m.kind)) / m.scale;
                        r * r
                    })
                    .sum(),
                Err(_) => f64::INFINITY,
            };
            (x[node], score)
        })
        .collect();
    let finite: Vec<f64> = objective.iter().map(|o| o.1).filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Domain("no candidate location admits a steady solution".into()));
    }
    let (best, _) = objective
        .iter()
        .enumerate()
        .filter(|(_, o)| o.1.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let ambiguous = finite.len() < 2 || max <= 0.0 || (max - min) / max < ambiguity;
    Ok(LocationResult {
        position: objective[best].0,
        node: best + 1,
        ambiguous,
        objective,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakVerdict {
    pub declared: bool,
    pub declared_time: Option<f64>,
    /// Imbalance averaged over the voting polls at the alarm (kg/s).
    pub size_at_alarm: Option<f64>,
    /// Imbalance averaged over the window used for location (kg/s).
    pub size_estimate: Option<f64>,
    pub location_estimate: Option<f64>,
    pub location_ambiguous: Option<bool>,
    pub located_time: Option<f64>,
    pub notes: Vec<String>,
}

/// Per-poll detector trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub t: f64,
    pub available: bool,
    /// Window-averaged discrepancy per indicator, in indicator order.
    pub averaged: Vec<Option<f64>>,
    pub exceeding: Vec<bool>,
    /// Instantaneous vote.
    pub vote: bool,
    /// Compensated imbalance for this poll (kg/s).
    pub imbalance: Option<f64>,
    /// Raw measured and modeled values per indicator.
    pub measured: Vec<Option<f64>>,
    pub modeled: Vec<Option<f64>>,
}

/// Shadow model, voting, sizing and location as one state machine over the
/// poll stream.
#[derive(Debug, Clone)]
pub struct RtmDetector {
    shadow: ShadowModel,
    policy: VotingPolicy,
    indicator_ids: Vec<String>,
    indicator_meta: Vec<(usize, InstrumentKind, f64)>,
    inlet_flow_id: Option<String>,
    outlet_flow_id: Option<String>,
    windows: Vec<VecDeque<Option<f64>>>,
    measured_windows: Vec<VecDeque<Option<f64>>>,
    bc_window: VecDeque<(f64, f64, f64)>,
    imbalance_window: VecDeque<Option<f64>>,
    streaks: Vec<usize>,
    last_linepack: Option<(f64, f64)>,
    declared_poll: Option<usize>,
    polls: usize,
    verdict: LeakVerdict,
    trace: Vec<PollRecord>,
}

impl RtmDetector {
    pub fn new(shadow: ShadowModel, policy: VotingPolicy) -> Result<Self> {
        policy.validate()?;
        let model = shadow.model();
        let ins = &model.pipeline.instruments;
        let nodes = instrument_nodes(model, ins)?;
        let last = model.node_count() - 1;
        let flow_at = |node: usize| {
            ins.iter()
                .zip(&nodes)
                .find(|(i, &n)| i.kind == InstrumentKind::Flow && n == node)
                .map(|(i, _)| i.id.clone())
        };
        let indicator_ids = shadow.indicator_ids();
        let indicator_meta = shadow
            .channels
            .iter()
            .map(|c| (c.node, c.kind, policy.threshold(c.kind)))
            .collect();
        let k = indicator_ids.len();
        Ok(RtmDetector {
            inlet_flow_id: flow_at(0),
            outlet_flow_id: flow_at(last),
            policy,
            indicator_ids,
            indicator_meta,
            windows: vec![VecDeque::new(); k],
            measured_windows: vec![VecDeque::new(); k],
            bc_window: VecDeque::new(),
            imbalance_window: VecDeque::new(),
            streaks: vec![0; k],
            last_linepack: None,
            declared_poll: None,
            polls: 0,
            verdict: LeakVerdict::default(),
            trace: Vec::new(),
            shadow,
        })
    }

    pub fn indicator_ids(&self) -> &[String] {
        &self.indicator_ids
    }

    pub fn shadow(&self) -> &ShadowModel {
        &self.shadow
    }

    pub fn policy(&self) -> &VotingPolicy {
        &self.policy
    }

    pub fn trace(&self) -> &[PollRecord] {
        &self.trace
    }

    pub fn verdict(&self) -> &LeakVerdict {
        &self.verdict
    }

    fn push<T>(q: &mut VecDeque<T>, v: T, cap: usize) {
        q.push_back(v);
        while q.len() > cap {
            q.pop_front();
        }
    }

    fn mean(q: &VecDeque<Option<f64>>) -> Option<f64> {
        let vals: Vec<f64> = q.iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Consumes one filtered frame.
    pub fn process(&mut self, frame: &TelemetryFrame) -> Result<&PollRecord> {
        let w = self.shadow.settings.averaging_polls;
        let m = self.policy.consecutive_required;
        let outcome = self.shadow.step(frame)?;
        let poll = self.polls;
        self.polls += 1;
        let k = self.indicator_ids.len();

        let record = match outcome {
            ShadowOutcome::Unavailable { poll_time, .. } => {
                self.streaks.iter_mut().for_each(|s| *s = 0);
                for i in 0..k {
                    Self::push(&mut self.windows[i], None, w);
                    Self::push(&mut self.measured_windows[i], None, w);
                }
                Self::push(&mut self.imbalance_window, None, w.max(m));
                self.last_linepack = None;
                PollRecord {
                    t: poll_time,
                    available: false,
                    averaged: vec![None; k],
                    exceeding: vec![false; k],
                    vote: false,
                    imbalance: None,
                    measured: vec![None; k],
                    modeled: vec![None; k],
                }
            }
            ShadowOutcome::Available(d) => {
                let t = d.poll_time;
                let imbalance = match (
                    self.last_linepack,
                    self.inlet_flow_id.as_deref().and_then(|id| frame.good(id)),
                    self.outlet_flow_id.as_deref().and_then(|id| frame.good(id)),
                ) {
                    (Some((t0, lp0)), Some(qi), Some(qo)) => Some(qi - qo - (d.linepack - lp0) / (t - t0)),
                    _ => None,
                };
                self.last_linepack = Some((t, d.linepack));
                Self::push(&mut self.imbalance_window, imbalance, w.max(m));
                if let Some(bc) = self.shadow.current_boundary() {
                    Self::push(&mut self.bc_window, bc, w);
                }
                let mut averaged = Vec::with_capacity(k);
                let mut exceeding = Vec::with_capacity(k);
                for (i, e) in d.entries.iter().enumerate() {
                    Self::push(&mut self.windows[i], e.delta, w);
                    Self::push(&mut self.measured_windows[i], e.measured, w);
                    let avg = Self::mean(&self.windows[i]);
                    let ex = e.delta.is_some() && avg.is_some_and(|a| a.abs() > self.indicator_meta[i].2);
                    if ex {
                        self.streaks[i] += 1;
                    } else {
                        self.streaks[i] = 0;
                    }
                    averaged.push(avg);
                    exceeding.push(ex);
                }
                let in_alarm = self.streaks.iter().filter(|&&s| s >= m).count();
                PollRecord {
                    t,
                    available: true,
                    averaged,
                    exceeding,
                    vote: in_alarm >= self.policy.min_indicators,
                    imbalance,
                    measured: d.entries.iter().map(|e| e.measured).collect(),
                    modeled: d.entries.iter().map(|e| Some(e.modeled)).collect(),
                }
            }
        };

        if record.vote && !self.verdict.declared {
            self.verdict.declared = true;
            self.verdict.declared_time = Some(record.t);
            self.declared_poll = Some(poll);
            let recent: Vec<Option<f64>> = self.imbalance_window.iter().rev().take(m).copied().collect();
            self.verdict.size_at_alarm = size_leak(&recent);
            if self.verdict.size_at_alarm.is_none() {
                self.verdict
                    .notes
                    .push("size unavailable at alarm: end flow reading missing".into());
            }
        }
        self.trace.push(record);

        if let Some(p) = self.declared_poll {
            if self.verdict.located_time.is_none() && poll >= p + self.shadow.settings.locate_delay_polls {
                self.locate()?;
            }
        }
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Sizes and locates from the current averaging window.
    fn locate(&mut self) -> Result<()> {
        let t = self.trace.last().map(|r| r.t).unwrap_or_default();
        self.verdict.located_time = Some(t);
        let imbalances: Vec<f64> = self
            .imbalance_window
            .iter()
            .rev()
            .take(self.shadow.settings.averaging_polls)
            .flatten()
            .copied()
            .collect();
        if imbalances.is_empty() {
            self.verdict
                .notes
                .push("location skipped: no end-flow imbalance available".into());
            return Ok(());
        }
        let size = imbalances.iter().sum::<f64>() / imbalances.len() as f64;
        self.verdict.size_estimate = Some(size);
        if self.bc_window.is_empty() {
            self.verdict.notes.push("location skipped: no boundary data".into());
            return Ok(());
        }
        let nb = self.bc_window.len() as f64;
        let (a, b, temp) = self.bc_window.iter().fold((0.0, 0.0, 0.0), |acc, v| {
            (acc.0 + v.0 / nb, acc.1 + v.1 / nb, acc.2 + v.2 / nb)
        });
        let mut bc = self.shadow.boundary_conditions(a, b, temp);
        bc.supply_temperature = Schedule::constant(temp);
        let measurements: Vec<Measurement> = self
            .indicator_meta
            .iter()
            .zip(&self.measured_windows)
            .filter_map(|(&(node, kind, threshold), q)| {
                Self::mean(q).map(|value| Measurement {
                    node,
                    kind,
                    value,
                    scale: threshold,
                })
            })
            .collect();
        if measurements.is_empty() {
            self.verdict
                .notes
                .push("location skipped: no indicator readings".into());
            return Ok(());
        }
        match locate_leak(
            &self.shadow.model,
            &bc,
            size,
            &measurements,
            &self.shadow.solver,
            self.shadow.settings.ambiguity,
        ) {
            Ok(loc) => {
                self.verdict.location_estimate = Some(loc.position);
                self.verdict.location_ambiguous = Some(loc.ambiguous);
                if loc.ambiguous {
                    self.verdict
                        .notes
                        .push("location ambiguous: flat residual landscape".into());
                }
            }
            Err(e) => self.verdict.notes.push(format!("location failed: {e}")),
        }
        Ok(())
    }

    /// Closes the run: if an alarm was declared but the settling delay did
    /// not elapse, locates from whatever window is available.
    pub fn finalize(&mut self) -> Result<LeakVerdict> {
        if self.verdict.declared && self.verdict.located_time.is_none() {
            self.verdict
                .notes
                .push("run ended before the settling delay; located from a partial window".into());
            self.locate()?;
        }
        Ok(self.verdict.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(m: usize, k: usize) -> VotingPolicy {
        VotingPolicy {
            flow_threshold: 1.0,
            pressure_threshold: 1.0,
            consecutive_required: m,
            min_indicators: k,
        }
    }

    #[test]
    fn vote_examples() {
        let quiet = vec![vec![false, false]; 5];
        assert!(!vote(&quiet, &policy(3, 2)));

        let mut h = vec![vec![false, false]; 2];
        for n in 1..=3 {
            h.push(vec![true, true]);
            assert_eq!(vote(&h, &policy(3, 2)), n == 3);
        }

        let one = vec![vec![true, false]; 50];
        assert!(!vote(&one, &policy(3, 2)));
        assert!(vote(&one, &policy(3, 1)));
    }

    #[test]
    fn sizing_averages_or_gives_up() {
        assert_eq!(size_leak(&[Some(1.0), Some(2.0), Some(3.0)]), Some(2.0));
        assert_eq!(size_leak(&[Some(1.0), None]), None);
        assert_eq!(size_leak(&[]), None);
    }

    #[test]
    fn default_thresholds_follow_noise() {
        let ins = vec![
            InstrumentPlacement::new("F", InstrumentKind::Flow, 0.0, (0.0, 80.0)).with_noise(0.16),
            InstrumentPlacement::new("P", InstrumentKind::Pressure, 0.0, (0.0, 1e6)).with_noise(2000.0),
            InstrumentPlacement::new("Q", InstrumentKind::Pressure, 0.0, (0.0, 1e6)),
        ];
        let p = VotingPolicy::from_instruments(&ins, 3.0, 1e-3);
        assert!((p.flow_threshold - 0.48).abs() < 1e-12);
        assert_eq!(p.pressure_threshold, 6000.0);
        assert_eq!((p.consecutive_required, p.min_indicators), (3, 2));
        let quiet = VotingPolicy::from_instruments(&ins[2..], 3.0, 1e-3);
        assert_eq!(quiet.pressure_threshold, 1000.0);
    }

    proptest::proptest! {
        #[test]
        fn voting_only_suppresses(
            flags in proptest::collection::vec(proptest::collection::vec(proptest::bool::ANY, 3), 1..40),
            m in 1usize..5,
            k in 1usize..4,
        ) {
            for end in 1..=flags.len() {
                if vote(&flags[..end], &policy(m, k)) {
                    proptest::prop_assert!(vote(&flags[..end], &policy(1, 1)));
                }
            }
        }
    }
}
