//! Scenario files: loading, overrides, end-to-end runs and parameter
//! sweeps.

pub mod config;
mod report;
mod run;
mod sweep;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::acoustic::{AcousticSensor, WaveModel};
use crate::availability::ComponentChain;
use crate::balance::{windowed_noise_sigma, InventoryMode};
use crate::error::{Error, Result};
use crate::fluid::{CriticalPoint, Eos, FluidModel, GasEos, LiquidEos};
use crate::hydraulics::{
    BoundaryConditions, BoundaryKind, EndCondition, LeakEvent, LineModel, Schedule, SolverSettings,
};
use crate::network::{discretize, ElevationProfile, InstrumentKind, InstrumentPlacement, PipelineModel, Segment};
use crate::rtm::{RtmSettings, ShadowModel, VotingPolicy};
use crate::telemetry::{instrument_nodes, KindLimits};

use config::{Dimension, EndKind, EndSection, FluidKind, FluidSection, ScenarioFile, ZModel};

pub use report::{
    write_acoustic_csv, write_availability_csv, write_balance_csv, write_report_json, write_run_outputs,
    write_state_dumps, write_sweep_csv, write_telemetry_csv, write_trace_csv, AcousticEvent, AcousticReport,
    BalanceReport, CombinedVerdict, Failure, Metrics, RtmReport, RunMetadata, RunReport, RunStatus,
};
pub use run::{run_scenario, RunOutput};
pub use sweep::{sweep, GridParameter, SweepGrid, SweepRow, SweepSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct RtmConfig {
    pub settings: RtmSettings,
    pub policy: VotingPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    pub window: f64,
    pub threshold: f64,
    pub inventory: InventoryMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticConfig {
    pub wave: WaveModel,
    pub amplitude: f64,
    pub sensors: Vec<AcousticSensor>,
}

/// A fully validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// sha256 of the canonical configuration text.
    pub config_hash: String,
    /// Plant model; its pipeline carries the instruments.
    pub model: LineModel,
    pub boundary: BoundaryConditions,
    pub leaks: Vec<LeakEvent>,
    pub solver: SolverSettings,
    pub horizon: f64,
    pub poll_interval: f64,
    pub seed: u64,
    pub limits: KindLimits,
    pub rtm: Option<RtmConfig>,
    pub balance: Option<BalanceConfig>,
    pub acoustic: Option<AcousticConfig>,
    pub availability: Vec<ComponentChain>,
    pub state_dump_interval: Option<f64>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        ScenarioTemplate::parse(text)?.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ScenarioTemplate::load(path)?.build()
    }

    pub fn instruments(&self) -> &[InstrumentPlacement] {
        &self.model.pipeline.instruments
    }

    /// Id of the instrument of `kind` sitting on grid node `node`.
    pub fn instrument_at(&self, kind: InstrumentKind, node: usize) -> Option<&str> {
        instrument_at(&self.model, kind, node)
    }
}

fn instrument_at(model: &LineModel, kind: InstrumentKind, node: usize) -> Option<&str> {
    let ins = &model.pipeline.instruments;
    let nodes = instrument_nodes(model, ins).ok()?;
    ins.iter()
        .zip(nodes)
        .find(|(i, n)| i.kind == kind && *n == node)
        .map(|(i, _)| i.id.as_str())
}

/// A parsed scenario document that can be edited by key path before it is
/// built. Sweeps and tests derive variants this way.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTemplate {
    doc: toml::Table,
}

impl ScenarioTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| Error::config("(syntax)", e.to_string()))?;
        Ok(ScenarioTemplate { doc })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets the value at a dotted key path such as `leaks.0.rate` or
    /// `rtm.min_indicators`. Missing tables are created; array elements
    /// must exist.
    pub fn set(&mut self, path: &str, value: impl Into<toml::Value>) -> Result<()> {
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::config(path, "malformed key path"));
        }
        let mut root = toml::Value::Table(std::mem::take(&mut self.doc));
        let r = set_in(&mut root, &keys, value.into());
        if let toml::Value::Table(t) = root {
            self.doc = t;
        }
        r.map_err(|m| Error::config(path, m))
    }

    pub fn with(mut self, path: &str, value: impl Into<toml::Value>) -> Result<Self> {
        self.set(path, value)?;
        Ok(self)
    }

    /// Removes the key at `path`, returning its old value if it was set.
    pub fn remove(&mut self, path: &str) -> Result<Option<toml::Value>> {
        let keys: Vec<&str> = path.split('.').collect();
        let mut root = toml::Value::Table(std::mem::take(&mut self.doc));
        let r = remove_in(&mut root, &keys);
        if let toml::Value::Table(t) = root {
            self.doc = t;
        }
        r.map_err(|m| Error::config(path, m))
    }

    pub fn without(mut self, path: &str) -> Result<Self> {
        self.remove(path)?;
        Ok(self)
    }

    /// Canonical text: comments and layout stripped, keys in stable order.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.doc).expect("a toml table always serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn build(&self) -> Result<Scenario> {
        let file: ScenarioFile = serde_path_to_error::deserialize(toml::Value::Table(self.doc.clone()))
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        build(file, self.hash())
    }
}

fn set_in(node: &mut toml::Value, keys: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    let Some((&key, rest)) = keys.split_first() else {
        *node = value;
        return Ok(());
    };
    match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(key.to_string(), value);
                return Ok(());
            }
            let child = t
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            set_in(child, rest, value)
        }
        toml::Value::Array(a) => {
            let idx: usize = key.parse().map_err(|_| format!("`{key}` must be an array index"))?;
            let len = a.len();
            let child = a
                .get_mut(idx)
                .ok_or_else(|| format!("index {idx} out of range (length {len})"))?;
            set_in(child, rest, value)
        }
        _ => Err(format!("cannot descend into `{key}`: parent is not a table or array")),
    }
}

fn remove_in(node: &mut toml::Value, keys: &[&str]) -> std::result::Result<Option<toml::Value>, String> {
    let Some((&key, rest)) = keys.split_first() else {
        return Err("malformed key path".into());
    };
    match node {
        toml::Value::Table(t) if rest.is_empty() => Ok(t.remove(key)),
        toml::Value::Table(t) => remove_in(t.get_mut(key).ok_or_else(|| format!("no such key `{key}`"))?, rest),
        toml::Value::Array(a) if !rest.is_empty() => {
            let child = key.parse::<usize>().ok().and_then(|i| a.get_mut(i));
            remove_in(child.ok_or_else(|| format!("no element `{key}`"))?, rest)
        }
        _ => Err(format!("cannot remove `{key}`: parent is not a table")),
    }
}

/// Re-labels a domain error with the configuration path that caused it.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(m) => Error::config(path, m),
        other => other,
    })
}

fn required<T: Copy>(v: Option<T>, path: &str, why: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(path, format!("required {why}")))
}

fn build_fluid(f: &FluidSection) -> Result<FluidModel> {
    let eos = match f.kind {
        FluidKind::Liquid => Eos::Liquid(at(
            "fluid",
            LiquidEos::new(
                required(f.density, "fluid.density", "for a liquid")?.0,
                required(f.reference_pressure, "fluid.reference_pressure", "for a liquid")?.0,
                required(f.reference_temperature, "fluid.reference_temperature", "for a liquid")?.0,
                required(f.bulk_modulus, "fluid.bulk_modulus", "for a liquid")?.0,
                f.expansion.unwrap_or(0.0),
            ),
        )?),
        FluidKind::Gas => {
            let r = required(f.gas_constant, "fluid.gas_constant", "for a gas")?;
            let why = "for this z_model";
            let gas = match f.z_model.unwrap_or(ZModel::Ideal) {
                ZModel::Ideal => GasEos::ideal(r),
                ZModel::Correlated => GasEos::correlated(
                    r,
                    required(f.z_exponent, "fluid.z_exponent", why)?,
                    required(f.z_constant, "fluid.z_constant", why)?,
                ),
                ZModel::Calibrated => GasEos::calibrated(
                    r,
                    required(f.z_exponent, "fluid.z_exponent", why)?,
                    required(f.z_reference, "fluid.z_reference", why)?,
                    required(f.reference_pressure, "fluid.reference_pressure", why)?.0,
                    required(f.reference_temperature, "fluid.reference_temperature", why)?.0,
                ),
            };
            Eos::Gas(at("fluid", gas)?)
        }
    };
    let mut fluid = at("fluid", FluidModel::new(eos, f.specific_heat, f.sound_speed.0))?;
    match (f.critical_pressure, f.critical_temperature) {
        (Some(p), Some(t)) => {
            fluid = fluid.with_critical_point(CriticalPoint {
                pressure: p.0,
                temperature: t.0,
            })
        }
        (None, None) => {}
        _ => {
            return Err(Error::config(
                "fluid.critical_pressure",
                "critical pressure and temperature go together",
            ))
        }
    }
    at("fluid", fluid.validate())?;
    Ok(fluid)
}

fn build_end(e: &EndSection, path: &str) -> Result<EndCondition> {
    let dim = match e.kind {
        EndKind::MassFlow => Dimension::MassFlow,
        EndKind::Pressure | EndKind::Reservoir => Dimension::Pressure,
    };
    let points = match (&e.value, &e.schedule) {
        (Some(v), None) => vec![(
            0.0,
            v.to_si(dim).map_err(|m| Error::config(format!("{path}.value"), m))?,
        )],
        (None, Some(s)) => s
            .iter()
            .enumerate()
            .map(|(i, (t, v))| {
                v.to_si(dim)
                    .map(|v| (t.0, v))
                    .map_err(|m| Error::config(format!("{path}.schedule[{i}]"), m))
            })
            .collect::<Result<_>>()?,
        _ => return Err(Error::config(path, "give exactly one of `value` or `schedule`")),
    };
    let schedule = at(&format!("{path}.schedule"), Schedule::new(points))?;
    let kind = match (e.kind, e.loss_coefficient) {
        (EndKind::Reservoir, Some(k)) => BoundaryKind::Reservoir { loss_coefficient: k },
        (EndKind::Reservoir, None) => {
            return Err(Error::config(
                format!("{path}.loss_coefficient"),
                "required for a reservoir",
            ))
        }
        (_, Some(_)) => {
            return Err(Error::config(
                format!("{path}.loss_coefficient"),
                "only valid for a reservoir",
            ))
        }
        (EndKind::Pressure, None) => BoundaryKind::Pressure,
        (EndKind::MassFlow, None) => BoundaryKind::MassFlow,
    };
    Ok(EndCondition { kind, schedule })
}

fn build(file: ScenarioFile, config_hash: String) -> Result<Scenario> {
    let horizon = file.run.horizon.0;
    if !(horizon > 0.0) {
        return Err(Error::config("run.horizon", "must be > 0"));
    }
    let solver = SolverSettings {
        dt: file.solver.dt.0,
        theta: file.solver.theta,
        newton_tol: file.solver.newton_tol,
        newton_max_iter: file.solver.newton_max_iter,
    };
    solver.validate()?;
    let tel = &file.telemetry;
    let poll = tel.poll_interval.0;
    if !(poll > 0.0) {
        return Err(Error::config("telemetry.poll_interval", "must be > 0"));
    }
    let ratio = poll / solver.dt;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
        return Err(Error::config(
            "telemetry.poll_interval",
            format!("must be a whole multiple of solver.dt = {} s", solver.dt),
        ));
    }
    if !(tel.noise_fraction >= 0.0) {
        return Err(Error::config("telemetry.noise_fraction", "must be >= 0"));
    }
    tel.limits.validate()?;

    let fluid = build_fluid(&file.fluid)?;

    let p = &file.pipeline;
    let length = p.length.0;
    let segments = if p.segments.is_empty() {
        vec![Segment {
            end: length,
            diameter: required(p.diameter, "pipeline.diameter", "when no segments are given")?.0,
            friction_factor: required(
                p.friction_factor,
                "pipeline.friction_factor",
                "when no segments are given",
            )?,
            heat_transfer: None,
        }]
    } else {
        if p.diameter.is_some() || p.friction_factor.is_some() {
            return Err(Error::config(
                "pipeline.diameter",
                "give either diameter/friction_factor or segments, not both",
            ));
        }
        p.segments
            .iter()
            .map(|s| Segment {
                end: s.end.0,
                diameter: s.diameter.0,
                friction_factor: s.friction_factor,
                heat_transfer: s.heat_transfer,
            })
            .collect()
    };
    let elevation = match &p.elevation {
        Some(pts) => at(
            "pipeline.elevation",
            ElevationProfile::new(pts.iter().map(|(x, z)| (x.0, z.0)).collect()),
        )?,
        None => ElevationProfile::flat(length, 0.0),
    };
    let mut instruments = Vec::with_capacity(file.instruments.len());
    for (i, s) in file.instruments.iter().enumerate() {
        let path = format!("instruments[{i}]");
        let dim = Dimension::of_instrument(s.kind);
        let lo = s
            .span
            .0
            .to_si(dim)
            .map_err(|m| Error::config(format!("{path}.span"), m))?;
        let hi = s
            .span
            .1
            .to_si(dim)
            .map_err(|m| Error::config(format!("{path}.span"), m))?;
        let mut ins = InstrumentPlacement::new(s.id.clone(), s.kind, s.position.0, (lo, hi));
        ins.noise_sigma = s.noise.unwrap_or(tel.noise_fraction * (hi - lo));
        ins.bias = s.bias;
        ins.dropout_prob = s.dropout.unwrap_or(tel.dropout);
        instruments.push(ins);
    }
    let pipeline = PipelineModel {
        length,
        segments,
        elevation,
        heat_transfer: p.heat_transfer,
        ground_temperature: p.ground_temperature.map(|t| t.0).unwrap_or(288.15),
        instruments,
    }
    .validated()?;
    let grid = discretize(&pipeline, file.solver.dx.0)?;
    let model = LineModel::new(pipeline, fluid, grid)?;

    let boundary = BoundaryConditions {
        inlet: build_end(&file.boundary.inlet, "boundary.inlet")?,
        outlet: build_end(&file.boundary.outlet, "boundary.outlet")?,
        supply_temperature: Schedule::constant(
            file.boundary
                .supply_temperature
                .map(|t| t.0)
                .unwrap_or(model.pipeline.ground_temperature),
        ),
    };
    boundary.validate()?;
    if !boundary.has_pressure_anchor() {
        return Err(Error::config("boundary", "at least one end must fix pressure"));
    }
    for (name, end) in [("inlet", &boundary.inlet), ("outlet", &boundary.outlet)] {
        if end.schedule.points().last().is_some_and(|p| p.0 > horizon) {
            return Err(Error::config(
                format!("boundary.{name}.schedule"),
                "breakpoints beyond the run horizon",
            ));
        }
        if end.kind.anchors_pressure() {
            for v in end.schedule.values() {
                at(
                    &format!("boundary.{name}"),
                    model
                        .fluid
                        .check_operating_point(v, boundary.supply_temperature.value_at(0.0)),
                )?;
            }
        }
    }

    let mut leaks = Vec::with_capacity(file.leaks.len());
    for (i, l) in file.leaks.iter().enumerate() {
        let path = format!("leaks[{i}]");
        let leak = LeakEvent {
            position: l.position.0,
            start_time: l.start_time.0,
            mass_rate: l.rate.0,
        };
        if !(leak.mass_rate >= 0.0) {
            return Err(Error::config(format!("{path}.rate"), "must be >= 0"));
        }
        if !(leak.start_time <= horizon) {
            return Err(Error::config(format!("{path}.start_time"), "after the run horizon"));
        }
        model
            .leak_node(leak.position)
            .map_err(|_| Error::config(format!("{path}.position"), "must fall on an interior grid node"))?;
        leaks.push(leak);
    }

    let supply0 = boundary.supply_temperature.value_at(0.0);
    let rtm_section = file.rtm.clone().unwrap_or_default();
    let rtm = if rtm_section.enabled {
        let r = &rtm_section;
        let settings = RtmSettings {
            shadow_inlet: r.shadow_inlet,
            shadow_outlet: r.shadow_outlet,
            averaging_polls: r.averaging_polls,
            stale_polls: r.stale_polls,
            locate_delay_polls: r.locate_delay_polls,
            ambiguity: r.ambiguity,
        };
        // a provisional shadow tells which instruments end up as indicators
        let probe = ShadowModel::new(
            model.clone(),
            settings,
            &VotingPolicy::from_instruments([], 3.0, 1e-3),
            solver,
            supply0,
        )?;
        let ids = probe.indicator_ids();
        let indicators = model.pipeline.instruments.iter().filter(|i| ids.contains(&i.id));
        let mut policy = VotingPolicy::from_instruments(indicators, r.threshold_sigmas, r.threshold_floor);
        if let Some(q) = r.flow_threshold {
            policy.flow_threshold = q.0;
        }
        if let Some(p) = r.pressure_threshold {
            policy.pressure_threshold = p.0;
        }
        policy.consecutive_required = r.consecutive;
        policy.min_indicators = r.min_indicators;
        policy.validate()?;
        Some(RtmConfig { settings, policy })
    } else {
        None
    };

    let balance_section = file.balance.clone().unwrap_or_default();
    let balance = if balance_section.enabled {
        let b = &balance_section;
        let last = model.node_count() - 1;
        let meter = |node: usize| {
            instrument_at(&model, InstrumentKind::Flow, node)
                .and_then(|id| model.pipeline.instrument(id))
                .map(|i| i.noise_sigma)
        };
        let (Some(s_in), Some(s_out)) = (meter(0), meter(last)) else {
            return Err(Error::config("balance", "needs flow meters at both ends of the line"));
        };
        if b.inventory == InventoryMode::Model && rtm.is_none() {
            return Err(Error::config(
                "balance.inventory",
                "`model` inventory comes from the real-time model; enable [rtm] or use `endpoint_average`",
            ));
        }
        if !(b.window.0 >= 2.0 * poll) {
            return Err(Error::config("balance.window", "must span at least two polls"));
        }
        let polls = (b.window.0 / poll).round() as usize + 1;
        let threshold = match b.threshold {
            Some(t) => t.0,
            None => (b.threshold_sigmas * windowed_noise_sigma(s_in, s_out, poll, polls)).max(b.threshold_floor.0),
        };
        if !(threshold > 0.0) {
            return Err(Error::config("balance.threshold", "must be > 0"));
        }
        Some(BalanceConfig {
            window: b.window.0,
            threshold,
            inventory: b.inventory,
        })
    } else {
        None
    };

    let acoustic = match &file.acoustic {
        Some(a) if a.enabled => {
            let wave = WaveModel {
                speed: a.speed.map(|s| s.0).unwrap_or(model.fluid.sound_speed_hint),
                attenuation: a.attenuation,
            };
            wave.validate()?;
            if !(a.amplitude.0 > 0.0) {
                return Err(Error::config("acoustic.amplitude", "must be > 0"));
            }
            let mut sensors: Vec<AcousticSensor> = Vec::new();
            for s in &a.sensors {
                if sensors.iter().any(|o| o.id == s.id) {
                    return Err(Error::config("acoustic.sensors", format!("duplicate id `{}`", s.id)));
                }
                let sensor = AcousticSensor {
                    id: s.id.clone(),
                    position: s.position.0,
                    trigger_threshold: s.threshold.0,
                    resolution: s.resolution.0,
                };
                sensor.validate(length)?;
                sensors.push(sensor);
            }
            if sensors.len() < 2 {
                return Err(Error::config(
                    "acoustic.sensors",
                    "at least two sensors are needed to localize",
                ));
            }
            Some(AcousticConfig {
                wave,
                amplitude: a.amplitude.0,
                sensors,
            })
        }
        _ => None,
    };

    let mut availability = Vec::new();
    if let Some(av) = &file.availability {
        if let Some(a) = av.preset_availability {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("availability.preset_availability", "must lie in [0, 1]"));
            }
            availability.extend(ComponentChain::presets(a));
        }
        for c in &av.chains {
            c.validate()?;
            availability.push(c.clone());
        }
    }

    let state_dump_interval = match file.output.state_dump_interval {
        Some(t) if !(t.0 > 0.0) => return Err(Error::config("output.state_dump_interval", "must be > 0")),
        other => other.map(|t| t.0),
    };

    Ok(Scenario {
        name: if file.name.is_empty() {
            "scenario".into()
        } else {
            file.name
        },
        config_hash,
        model,
        boundary,
        leaks,
        solver,
        horizon,
        poll_interval: poll,
        seed: file.run.seed,
        limits: tel.limits,
        rtm,
        balance,
        acoustic,
        availability,
        state_dump_interval,
    })
}

#[cfg(test)]
mod tests;
