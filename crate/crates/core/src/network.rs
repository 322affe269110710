//! Pipeline geometry, instrumentation and spatial discretization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity (m/s²).
pub const GRAVITY: f64 = 9.80665;

/// A uniform-diameter stretch of line ending at `end` (m from the inlet).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub end: f64,
    pub diameter: f64,
    /// Darcy friction factor.
    pub friction_factor: f64,
    /// Overrides the line's heat-transfer coefficient on this segment.
    pub heat_transfer: Option<f64>,
}

impl Segment {
    pub fn area(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }
}

/// Piecewise-linear elevation `H(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevationProfile {
    points: Vec<(f64, f64)>,
}

impl ElevationProfile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("pipeline.elevation", "profile needs at least one point"));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::config(
                "pipeline.elevation",
                "breakpoint positions must be strictly increasing",
            ));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::config("pipeline.elevation", "non-finite breakpoint"));
        }
        Ok(ElevationProfile { points })
    }

    pub fn flat(length: f64, height: f64) -> Self {
        ElevationProfile {
            points: vec![(0.0, height), (length, height)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn interpolate(&self, x: f64) -> f64 {
        let pts = &self.points;
        if pts.len() == 1 {
            return pts[0].1;
        }
        let i = pts.partition_point(|p| p.0 <= x);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (x0, h0) = pts[i - 1];
        let (x1, h1) = pts[i];
        if x == x0 {
            return h0;
        }
        h0 + (h1 - h0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    Flow,
    Pressure,
    Temperature,
    Acoustic,
}

impl InstrumentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstrumentKind::Flow => "flow",
            InstrumentKind::Pressure => "pressure",
            InstrumentKind::Temperature => "temperature",
            InstrumentKind::Acoustic => "acoustic",
        }
    }
}

/// A field instrument. Values are in instrument units: kg/s for flow, Pa
/// for pressure and acoustic, K for temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPlacement {
    pub id: String,
    pub kind: InstrumentKind,
    pub position: f64,
    pub noise_sigma: f64,
    pub bias: f64,
    pub dropout_prob: f64,
    /// Calibrated range (min, max).
    pub span: (f64, f64),
}

impl InstrumentPlacement {
    pub fn new(id: impl Into<String>, kind: InstrumentKind, position: f64, span: (f64, f64)) -> Self {
        InstrumentPlacement {
            id: id.into(),
            kind,
            position,
            noise_sigma: 0.0,
            bias: 0.0,
            dropout_prob: 0.0,
            span,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn span_width(&self) -> f64 {
        self.span.1 - self.span.0
    }
}

/// A single trunk line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub length: f64,
    pub segments: Vec<Segment>,
    pub elevation: ElevationProfile,
    /// Overall heat-transfer coefficient U (W/(m² K)).
    pub heat_transfer: f64,
    /// Ground temperature Tg (K).
    pub ground_temperature: f64,
    pub instruments: Vec<InstrumentPlacement>,
}

impl PipelineModel {
    /// A single-segment flat line without instruments.
    pub fn uniform(length: f64, diameter: f64, friction_factor: f64) -> Result<Self> {
        PipelineModel {
            length,
            segments: vec![Segment {
                end: length,
                diameter,
                friction_factor,
                heat_transfer: None,
            }],
            elevation: ElevationProfile::flat(length, 0.0),
            heat_transfer: 0.0,
            ground_temperature: 288.15,
            instruments: Vec::new(),
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::config("pipeline.length", "must be > 0"));
        }
        if self.segments.is_empty() {
            return Err(Error::config("pipeline.segments", "at least one segment required"));
        }
        let mut prev = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            let path = format!("pipeline.segments[{i}]");
            if !(s.end > prev) {
                return Err(Error::config(format!("{path}.end"), "segment ends must increase"));
            }
            if !(s.diameter > 0.0) {
                return Err(Error::config(format!("{path}.diameter"), "must be > 0"));
            }
            if !(s.friction_factor > 0.0) {
                return Err(Error::config(format!("{path}.friction"), "must be > 0"));
            }
            if let Some(u) = s.heat_transfer {
                if !(u >= 0.0) {
                    return Err(Error::config(format!("{path}.heat_transfer"), "must be >= 0"));
                }
            }
            prev = s.end;
        }
        if (prev - self.length).abs() > 1e-9 * self.length {
            return Err(Error::config(
                "pipeline.segments",
                format!("last segment ends at {prev}, line length is {}", self.length),
            ));
        }
        if !(self.heat_transfer >= 0.0) {
            return Err(Error::config("pipeline.heat_transfer", "must be >= 0"));
        }
        if !(self.ground_temperature > 0.0) {
            return Err(Error::config("pipeline.ground_temperature", "must be > 0"));
        }
        let pts = self.elevation.points();
        let tol = 1e-9 * self.length;
        if pts.len() < 2 || pts[0].0.abs() > tol || (pts[pts.len() - 1].0 - self.length).abs() > tol {
            return Err(Error::config(
                "pipeline.elevation",
                "profile must start at x = 0 and end at the line length",
            ));
        }
        for (i, ins) in self.instruments.iter().enumerate() {
            let path = format!("instruments[{i}]");
            if !(ins.position >= 0.0 && ins.position <= self.length) {
                return Err(Error::config(format!("{path}.position"), "outside [0, length]"));
            }
            if !(ins.noise_sigma >= 0.0) {
                return Err(Error::config(format!("{path}.noise_sigma"), "must be >= 0"));
            }
            if !(ins.dropout_prob >= 0.0 && ins.dropout_prob < 1.0) {
                return Err(Error::config(format!("{path}.dropout"), "must lie in [0, 1)"));
            }
            if !(ins.span.1 > ins.span.0) {
                return Err(Error::config(format!("{path}.span"), "max must exceed min"));
            }
            if self.instruments[..i].iter().any(|o| o.id == ins.id) {
                return Err(Error::config(
                    format!("{path}.id"),
                    format!("duplicate id `{}`", ins.id),
                ));
            }
        }
        Ok(())
    }

    pub fn segment_at(&self, x: f64) -> &Segment {
        let i = self.segments.partition_point(|s| s.end < x);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    /// Cross-sectional area of the segment containing `x`.
    pub fn area_at(&self, x: f64) -> f64 {
        self.segment_at(x).area()
    }

    pub fn elevation_at(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0 && x <= self.length) {
            return Err(Error::Domain(format!(
                "elevation query at x = {x} outside [0, {}]",
                self.length
            )));
        }
        Ok(self.elevation.interpolate(x))
    }

    pub fn instrument(&self, id: &str) -> Option<&InstrumentPlacement> {
        self.instruments.iter().find(|i| i.id == id)
    }
}

/// Free-function form of [`PipelineModel::elevation_at`].
pub fn elevation_at(pipeline: &PipelineModel, x: f64) -> Result<f64> {
    pipeline.elevation_at(x)
}

/// Solver nodes along the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub node_positions: Vec<f64>,
    /// Largest node spacing (m).
    pub dx: f64,
}

impl Grid {
    pub fn node_count(&self) -> usize {
        self.node_positions.len()
    }

    pub fn cell_count(&self) -> usize {
        self.node_positions.len() - 1
    }

    /// Index of the node nearest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let pos = &self.node_positions;
        let i = pos.partition_point(|&p| p < x);
        if i == 0 {
            0
        } else if i == pos.len() {
            pos.len() - 1
        } else if pos[i] - x < x - pos[i - 1] {
            i
        } else {
            i - 1
        }
    }
}

/// Builds a grid whose spacing never exceeds `target_dx`, with every
/// instrument, segment boundary and line end on a node. Between consecutive
/// required points the spacing is uniform.
pub fn discretize(pipeline: &PipelineModel, target_dx: f64) -> Result<Grid> {
    let length = pipeline.length;
    if !(target_dx > 0.0) {
        return Err(Error::config("solver.dx", "must be > 0"));
    }
    let target_dx = target_dx.min(length);

    let mut positions: Vec<f64> = pipeline.instruments.iter().map(|i| i.position).collect();
    positions.sort_by(f64::total_cmp);
    positions.dedup();
    for w in positions.windows(2) {
        if w[1] - w[0] < target_dx {
            return Err(Error::config(
                "solver.dx",
                format!(
                    "instruments at {} m and {} m are closer than dx = {target_dx} m; use a smaller dx",
                    w[0], w[1]
                ),
            ));
        }
    }

    let mut required = positions;
    required.push(0.0);
    required.push(length);
    required.extend(pipeline.segments.iter().map(|s| s.end.min(length)));
    required.sort_by(f64::total_cmp);
    let tol = 1e-9 * length;
    required.dedup_by(|a, b| (*a - *b).abs() <= tol);
    // dedup keeps the first; make sure the ends are exact
    required[0] = 0.0;
    *required.last_mut().expect("non-empty") = length;

    let mut nodes = vec![0.0];
    let mut dx_max: f64 = 0.0;
    for w in required.windows(2) {
        let gap = w[1] - w[0];
        let n = ((gap / target_dx) - 1e-9).ceil().max(1.0) as usize;
        let h = gap / n as f64;
        dx_max = dx_max.max(h);
        for k in 1..n {
            nodes.push(w[0] + h * k as f64);
        }
        nodes.push(w[1]);
    }
    Ok(Grid {
        node_positions: nodes,
        dx: dx_max,
    })
}
