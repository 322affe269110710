//! Synthetic SCADA polling: instrument readings with noise, bias and
//! dropout, and the plausibility checks applied before detectors see data.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{GridState, LineModel};
use crate::network::{InstrumentKind, InstrumentPlacement};

/// Noise draws beyond this many standard deviations are rejected and redrawn.
const TRUNCATION_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Good,
    Suspect,
    Missing,
}

impl Quality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quality::Good => "good",
            Quality::Suspect => "suspect",
            Quality::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub id: String,
    pub kind: InstrumentKind,
    /// `None` exactly when the reading is missing.
    pub value: Option<f64>,
    pub quality: Quality,
}

impl Reading {
    /// The value if the reading is usable by detectors.
    pub fn good(&self) -> Option<f64> {
        match self.quality {
            Quality::Good => self.value,
            _ => None,
        }
    }
}

/// One SCADA poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub poll_time: f64,
    pub readings: Vec<Reading>,
}

impl TelemetryFrame {
    pub fn get(&self, id: &str) -> Option<&Reading> {
        self.readings.iter().find(|r| r.id == id)
    }

    pub fn good(&self, id: &str) -> Option<f64> {
        self.get(id).and_then(Reading::good)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rng_seed: u64,
}

/// True instrument value at a node: kg/s for flow, Pa for pressure and
/// acoustic transducers, K for temperature.
pub fn true_value(model: &LineModel, state: &GridState, node: usize, kind: InstrumentKind) -> f64 {
    match kind {
        InstrumentKind::Flow => model.mass_flow(state, node),
        InstrumentKind::Pressure | InstrumentKind::Acoustic => state.p[node],
        InstrumentKind::Temperature => state.temp[node],
    }
}

/// Maps each instrument onto its grid node; positions must coincide with a
/// node to within half the smallest adjacent spacing.
pub fn instrument_nodes(model: &LineModel, instruments: &[InstrumentPlacement]) -> Result<Vec<usize>> {
    let x = &model.grid.node_positions;
    instruments
        .iter()
        .map(|ins| {
            let node = model.grid.nearest_node(ins.position);
            let tol = 1e-6 * model.pipeline.length;
            if (x[node] - ins.position).abs() > tol {
                return Err(Error::config(
                    format!("instruments.{}.position", ins.id),
                    format!("{} m is not on a grid node", ins.position),
                ));
            }
            Ok(node)
        })
        .collect()
}

/// A seeded poll generator. The random stream is consumed in instrument
/// order, one dropout draw and one noise draw per instrument per poll, so
/// the sequence is reproducible regardless of which readings drop out.
#[derive(Debug, Clone)]
pub struct Sampler {
    instruments: Vec<InstrumentPlacement>,
    nodes: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(model: &LineModel, instruments: &[InstrumentPlacement], noise: NoiseSpec) -> Result<Self> {
        Ok(Sampler {
            nodes: instrument_nodes(model, instruments)?,
            instruments: instruments.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(noise.rng_seed),
        })
    }

    pub fn instruments(&self) -> &[InstrumentPlacement] {
        &self.instruments
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    fn standard_normal(&mut self) -> f64 {
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= TRUNCATION_SIGMAS {
                return z;
            }
        }
    }

    /// Polls every instrument against `state`.
    pub fn sample(&mut self, model: &LineModel, state: &GridState, poll_time: f64) -> TelemetryFrame {
        let mut readings = Vec::with_capacity(self.instruments.len());
        for k in 0..self.instruments.len() {
            let u: f64 = self.rng.random();
            let z = self.standard_normal();
            let ins = &self.instruments[k];
            let reading = if u < ins.dropout_prob {
                Reading {
                    id: ins.id.clone(),
                    kind: ins.kind,
                    value: None,
                    quality: Quality::Missing,
                }
            } else {
                let truth = true_value(model, state, self.nodes[k], ins.kind);
                let mut value = truth + ins.bias;
                if ins.noise_sigma > 0.0 {
                    value += ins.noise_sigma * z;
                }
                Reading {
                    id: ins.id.clone(),
                    kind: ins.kind,
                    value: Some(value),
                    quality: Quality::Good,
                }
            };
            readings.push(reading);
        }
        TelemetryFrame { poll_time, readings }
    }
}

/// Plausibility limits for one instrument kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub min: f64,
    pub max: f64,
    /// Largest credible change per second against the last good reading.
    pub max_rate: f64,
    /// Flag a reading once it has repeated exactly this many polls; off when `None`.
    #[serde(default)]
    pub flatline_polls: Option<usize>,
}

impl Limits {
    pub fn unbounded() -> Self {
        Limits {
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
            max_rate: f64::INFINITY,
            flatline_polls: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KindLimits {
    pub flow: Limits,
    pub pressure: Limits,
    pub temperature: Limits,
    pub acoustic: Limits,
}

impl Default for KindLimits {
    /// Wide physical bounds: non-negative absolute pressure, liquid/gas
    /// service temperatures, and rates no real line produces in a second.
    fn default() -> Self {
        let pressure = Limits {
            min: 0.0,
            max: 2.5e7,
            max_rate: 1e6,
            flatline_polls: None,
        };
        KindLimits {
            flow: Limits {
                min: -1e4,
                max: 1e4,
                max_rate: 1e3,
                flatline_polls: None,
            },
            pressure,
            temperature: Limits {
                min: 200.0,
                max: 400.0,
                max_rate: 5.0,
                flatline_polls: None,
            },
            acoustic: pressure,
        }
    }
}

impl KindLimits {
    pub fn for_kind(&self, kind: InstrumentKind) -> &Limits {
        match kind {
            InstrumentKind::Flow => &self.flow,
            InstrumentKind::Pressure => &self.pressure,
            InstrumentKind::Temperature => &self.temperature,
            InstrumentKind::Acoustic => &self.acoustic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("flow", &self.flow),
            ("pressure", &self.pressure),
            ("temperature", &self.temperature),
            ("acoustic", &self.acoustic),
        ] {
            if !(l.max > l.min) {
                return Err(Error::config(format!("telemetry.limits.{name}"), "max must exceed min"));
            }
            if !(l.max_rate > 0.0) {
                return Err(Error::config(
                    format!("telemetry.limits.{name}.max_rate"),
                    "must be > 0",
                ));
            }
            if l.flatline_polls == Some(0) || l.flatline_polls == Some(1) {
                return Err(Error::config(
                    format!("telemetry.limits.{name}.flatline_polls"),
                    "must be >= 2",
                ));
            }
        }
        Ok(())
    }
}

/// Per-instrument memory used by [`plausibility_filter`].
#[derive(Debug, Clone, Default)]
pub struct FilterHistory {
    last_good: HashMap<String, (f64, f64)>,
    repeats: HashMap<String, (f64, usize)>,
}

/// Flags readings that are out of range, change faster than `max_rate`
/// against the last good reading, or repeat identically for
/// `flatline_polls` polls. Values are never altered.
pub fn plausibility_filter(frame: &TelemetryFrame, history: &mut FilterHistory, limits: &KindLimits) -> TelemetryFrame {
    let t = frame.poll_time;
    let mut out = frame.clone();
    for r in &mut out.readings {
        let Some(v) = r.value else {
            continue;
        };
        let lim = limits.for_kind(r.kind);

        let run = history.repeats.entry(r.id.clone()).or_insert((f64::NAN, 0));
        if run.0 == v {
            run.1 += 1;
        } else {
            *run = (v, 1);
        }
        let flat = lim.flatline_polls.is_some_and(|n| run.1 >= n);

        if r.quality != Quality::Good {
            continue;
        }
        let in_range = v >= lim.min && v <= lim.max;
        let rate_ok = match history.last_good.get(&r.id) {
            Some(&(t0, v0)) if t > t0 => (v - v0).abs() <= lim.max_rate * (t - t0),
            _ => true,
        };
        if in_range && rate_ok && !flat {
            history.last_good.insert(r.id.clone(), (t, v));
        } else {
            r.quality = Quality::Suspect;
        }
    }
    out
}

/// Writes frames as `poll_time,id,value,quality` rows.
pub fn write_csv<W: Write>(out: &mut W, frames: &[TelemetryFrame]) -> std::io::Result<()> {
    writeln!(out, "poll_time,id,value,quality")?;
    for f in frames {
        for r in &f.readings {
            let v = r.value.map(|v| format!("{v:.9e}")).unwrap_or_default();
            writeln!(out, "{:.3},{},{},{}", f.poll_time, r.id, v, r.quality.as_str())?;
        }
    }
    Ok(())
}
