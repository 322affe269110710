//! One-dimensional transient flow in a single trunk line.
//!
//! The continuity, momentum and energy equations are discretised with a
//! four-point implicit box scheme. Each cell between nodes `i` and `i+1`
//! contributes three equations, time derivatives are taken on cell
//! averages and spatial terms are weighted `theta` at the new time level
//! and `1 - theta` at the old one. Boundary rows close the system: one
//! hydraulic condition per end and a supply temperature at the upstream end.
//! The nonlinear system is solved by Newton iteration on a banded Jacobian.
//!
//! Flow is carried as velocity `V`; nodal mass flow is `rho V A`.

pub mod band;
mod residual;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::FluidModel;
use crate::network::{Grid, PipelineModel};

use residual::{Mode, Problem};

/// Piecewise-linear time series, held constant before the first and after
/// the last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    points: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("schedule", "needs at least one point"));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::config("schedule", "times must be strictly increasing"));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::config("schedule", "non-finite entry"));
        }
        Ok(Schedule { points })
    }

    pub fn constant(value: f64) -> Self {
        Schedule {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn start_time(&self) -> f64 {
        self.points[0].0
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.0 <= t);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (t0, v0) = pts[i - 1];
        let (t1, v1) = pts[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

/// Hydraulic condition imposed at one end of the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Pressure at the end node (Pa).
    Pressure,
    /// Mass flow along +x at the end node (kg/s).
    MassFlow,
    /// A reservoir at the scheduled pressure behind a valve:
    /// `P_end = P_res - K q |q|`, `q` being the flow entering the line.
    Reservoir { loss_coefficient: f64 },
}

impl BoundaryKind {
    pub fn anchors_pressure(&self) -> bool {
        !matches!(self, BoundaryKind::MassFlow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndCondition {
    pub kind: BoundaryKind,
    pub schedule: Schedule,
}

impl EndCondition {
    pub fn pressure(schedule: Schedule) -> Self {
        EndCondition {
            kind: BoundaryKind::Pressure,
            schedule,
        }
    }

    pub fn mass_flow(schedule: Schedule) -> Self {
        EndCondition {
            kind: BoundaryKind::MassFlow,
            schedule,
        }
    }

    pub fn reservoir(schedule: Schedule, loss_coefficient: f64) -> Self {
        EndCondition {
            kind: BoundaryKind::Reservoir { loss_coefficient },
            schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub inlet: EndCondition,
    pub outlet: EndCondition,
    /// Temperature of fluid entering the line at its upstream end (K).
    pub supply_temperature: Schedule,
}

impl BoundaryConditions {
    pub fn validate(&self) -> Result<()> {
        for (name, end) in [("inlet", &self.inlet), ("outlet", &self.outlet)] {
            if let BoundaryKind::Reservoir { loss_coefficient } = end.kind {
                if !(loss_coefficient >= 0.0) {
                    return Err(Error::config(
                        format!("boundary.{name}.loss_coefficient"),
                        "must be >= 0",
                    ));
                }
            }
            if end.kind.anchors_pressure() && end.schedule.values().any(|p| !(p > 0.0)) {
                return Err(Error::config(
                    format!("boundary.{name}.schedule"),
                    "pressures must be > 0",
                ));
            }
        }
        if self.supply_temperature.values().any(|t| !(t > 0.0)) {
            return Err(Error::config("boundary.supply_temperature", "temperatures must be > 0"));
        }
        Ok(())
    }

    pub fn has_pressure_anchor(&self) -> bool {
        self.inlet.kind.anchors_pressure() || self.outlet.kind.anchors_pressure()
    }
}

/// A constant-rate mass sink switched on at `start_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub position: f64,
    pub start_time: f64,
    pub mass_rate: f64,
}

impl LeakEvent {
    pub fn rate_at(&self, t: f64) -> f64 {
        if t >= self.start_time {
            self.mass_rate
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub dt: f64,
    pub theta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            dt: 1.0,
            theta: 0.6,
            newton_tol: 1e-10,
            newton_max_iter: 30,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("solver.dt", "must be > 0"));
        }
        if !(self.theta >= 0.5 && self.theta <= 1.0) {
            return Err(Error::config("solver.theta", "must lie in [0.5, 1]"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::config("solver.newton_tol", "must be > 0"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::config("solver.newton_max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

/// Line state at one model time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub t: f64,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub temp: Vec<f64>,
    pub rho: Vec<f64>,
}

impl GridState {
    pub fn node_count(&self) -> usize {
        self.p.len()
    }
}

/// Per-node pressure and mass flow readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub pressure: Vec<f64>,
    pub mass_flow: Vec<f64>,
}

/// Mass audit of a single time step (kg).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLedger {
    pub mass_in: f64,
    pub mass_out: f64,
    pub leak_mass: f64,
    pub linepack_before: f64,
    pub linepack_after: f64,
}

impl StepLedger {
    /// `in - out - leak - (linepack change)`; zero for an exact solve.
    pub fn residual(&self) -> f64 {
        self.mass_in - self.mass_out - self.leak_mass - (self.linepack_after - self.linepack_before)
    }
}

/// Running totals of [`StepLedger`]s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MassLedger {
    pub steps: usize,
    pub mass_in: f64,
    pub mass_out: f64,
    pub leak_mass: f64,
    pub linepack_change: f64,
    /// Largest per-step residual relative to linepack.
    pub max_relative_step_residual: f64,
}

impl MassLedger {
    pub fn record(&mut self, step: &StepLedger) {
        self.steps += 1;
        self.mass_in += step.mass_in;
        self.mass_out += step.mass_out;
        self.leak_mass += step.leak_mass;
        self.linepack_change += step.linepack_after - step.linepack_before;
        let rel = step.residual().abs() / step.linepack_after.abs().max(f64::MIN_POSITIVE);
        self.max_relative_step_residual = self.max_relative_step_residual.max(rel);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub dx: f64,
    pub area: f64,
    pub diameter: f64,
    pub friction: f64,
    pub heat_transfer: f64,
    pub dh: f64,
}

/// A pipeline, its fluid and grid compiled into solver form.
#[derive(Debug, Clone)]
pub struct LineModel {
    pub pipeline: PipelineModel,
    pub fluid: FluidModel,
    pub grid: Grid,
    pub(crate) cells: Vec<Cell>,
    /// Flux area per node; the mean of adjacent cells at diameter changes.
    pub(crate) node_area: Vec<f64>,
}

impl LineModel {
    pub fn new(pipeline: PipelineModel, fluid: FluidModel, grid: Grid) -> Result<Self> {
        pipeline.validate()?;
        fluid.validate()?;
        let x = &grid.node_positions;
        if x.len() < 2 || x[0] != 0.0 || (x[x.len() - 1] - pipeline.length).abs() > 1e-9 * pipeline.length {
            return Err(Error::config("solver.dx", "grid does not span the line"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("solver.dx", "grid nodes must be strictly increasing"));
        }
        let mut cells = Vec::with_capacity(x.len() - 1);
        for w in x.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let seg = pipeline.segment_at(mid);
            let h0 = pipeline.elevation_at(w[0])?;
            let h1 = pipeline.elevation_at(w[1].min(pipeline.length))?;
            cells.push(Cell {
                dx: w[1] - w[0],
                area: seg.area(),
                diameter: seg.diameter,
                friction: seg.friction_factor,
                heat_transfer: seg.heat_transfer.unwrap_or(pipeline.heat_transfer),
                dh: h1 - h0,
            });
        }
        let n = x.len();
        let node_area = (0..n)
            .map(|i| match i {
                0 => cells[0].area,
                i if i == n - 1 => cells[n - 2].area,
                i => 0.5 * (cells[i - 1].area + cells[i].area),
            })
            .collect();
        Ok(LineModel {
            pipeline,
            fluid,
            grid,
            cells,
            node_area,
        })
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn node_area(&self, node: usize) -> f64 {
        self.node_area[node]
    }

    /// Mass flow along +x at `node` (kg/s).
    pub fn mass_flow(&self, state: &GridState, node: usize) -> f64 {
        state.rho[node] * state.v[node] * self.node_area[node]
    }

    /// Trapezoidal integral of `rho A` over the line (kg).
    pub fn linepack(&self, state: &GridState) -> f64 {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| c.area * c.dx * 0.5 * (state.rho[i] + state.rho[i + 1]))
            .sum()
    }

    pub fn modeled_profile(&self, state: &GridState) -> Profile {
        Profile {
            pressure: state.p.clone(),
            mass_flow: (0..state.node_count()).map(|i| self.mass_flow(state, i)).collect(),
        }
    }

    /// Node carrying a leak at `position`; must be interior.
    pub fn leak_node(&self, position: f64) -> Result<usize> {
        let node = self.grid.nearest_node(position);
        if node == 0 || node + 1 >= self.node_count() {
            return Err(Error::config(
                "leaks.position",
                format!("leak at {position} m does not fall on an interior node"),
            ));
        }
        Ok(node)
    }

    pub(crate) fn nodal_sinks(&self, leaks: &[LeakEvent], t: f64) -> Result<Vec<f64>> {
        let mut sinks = vec![0.0; self.node_count()];
        for leak in leaks {
            if !(leak.mass_rate >= 0.0) {
                return Err(Error::config("leaks.rate", "must be >= 0"));
            }
            let rate = leak.rate_at(t);
            if rate != 0.0 {
                sinks[self.leak_node(leak.position)?] += rate;
            }
        }
        Ok(sinks)
    }

    /// Checks EOS consistency and positivity of a state.
    pub fn check_state(&self, state: &GridState) -> Result<()> {
        let n = self.node_count();
        if [state.p.len(), state.v.len(), state.temp.len(), state.rho.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Domain(format!("state arrays must have {n} entries")));
        }
        for i in 0..n {
            let (p, t, rho) = (state.p[i], state.temp[i], state.rho[i]);
            if !(p > 0.0 && t > 0.0 && rho > 0.0) || !state.v[i].is_finite() {
                return Err(self.infeasible(i, format!("P = {p}, T = {t}, rho = {rho}")));
            }
            let eos = self.fluid.density_unchecked(p, t);
            if ((eos - rho) / rho).abs() > 1e-8 {
                return Err(self.infeasible(i, format!("density {rho} inconsistent with EOS value {eos}")));
            }
        }
        Ok(())
    }

    fn infeasible(&self, node: usize, message: String) -> Error {
        Error::Infeasible {
            node,
            position: self.grid.node_positions[node],
            message,
        }
    }

    /// Builds a state from P, V, T arrays, filling density from the EOS.
    pub fn state_from(&self, t: f64, p: Vec<f64>, v: Vec<f64>, temp: Vec<f64>) -> GridState {
        let rho = p
            .iter()
            .zip(&temp)
            .map(|(&p, &tt)| self.fluid.density_unchecked(p, tt))
            .collect();
        GridState { t, p, v, temp, rho }
    }

    /// Steady state consistent with the boundary conditions at time `t`,
    /// including any leaks active at `t`.
    ///
    /// The result is a fixed point of [`LineModel::advance`] under constant
    /// boundary conditions.
    pub fn steady_state(
        &self,
        bc: &BoundaryConditions,
        t: f64,
        leaks: &[LeakEvent],
        settings: &SolverSettings,
    ) -> Result<GridState> {
        bc.validate()?;
        if !bc.has_pressure_anchor() {
            return Err(Error::config(
                "boundary",
                "steady state needs a pressure or reservoir condition at one end at least",
            ));
        }
        let sinks = self.nodal_sinks(leaks, t)?;
        let guess = residual::steady_guess(self, bc, t, &sinks)?;
        let problem = Problem {
            model: self,
            mode: Mode::Steady,
            bc,
            t_new: t,
            sinks_new: &sinks,
            theta: 1.0,
            upstream_inlet: guess.v[0] + guess.v[self.node_count() - 1] >= 0.0,
        };
        let state = problem.solve(guess, settings)?;
        self.check_state(&state)?;
        Ok(state)
    }

    /// Advances `state` by one step of `settings.dt`.
    pub fn advance(
        &self,
        state: &GridState,
        bc: &BoundaryConditions,
        leaks: &[LeakEvent],
        settings: &SolverSettings,
    ) -> Result<(GridState, StepLedger)> {
        settings.validate()?;
        let n = self.node_count();
        let dt = settings.dt;
        let t_new = state.t + dt;
        let sinks_old = self.nodal_sinks(leaks, state.t)?;
        let sinks_new = self.nodal_sinks(leaks, t_new)?;
        let problem = Problem {
            model: self,
            mode: Mode::Transient {
                old: state,
                dt,
                sinks_old: &sinks_old,
            },
            bc,
            t_new,
            sinks_new: &sinks_new,
            theta: settings.theta,
            upstream_inlet: state.v[0] + state.v[n - 1] >= 0.0,
        };
        let mut guess = state.clone();
        guess.t = t_new;
        let new = problem.solve(guess, settings)?;
        self.check_state(&new)?;

        let th = settings.theta;
        let ledger = StepLedger {
            mass_in: dt * (th * self.mass_flow(&new, 0) + (1.0 - th) * self.mass_flow(state, 0)),
            mass_out: dt * (th * self.mass_flow(&new, n - 1) + (1.0 - th) * self.mass_flow(state, n - 1)),
            leak_mass: dt * (th * sinks_new.iter().sum::<f64>() + (1.0 - th) * sinks_old.iter().sum::<f64>()),
            linepack_before: self.linepack(state),
            linepack_after: self.linepack(&new),
        };
        Ok((new, ledger))
    }

    /// Writes the state as `t x P V T rho` rows.
    pub fn write_state_dump<W: Write>(&self, out: &mut W, state: &GridState) -> std::io::Result<()> {
        for i in 0..state.node_count() {
            writeln!(
                out,
                "{:.3} {:.3} {:.6e} {:.6e} {:.6e} {:.6e}",
                state.t, self.grid.node_positions[i], state.p[i], state.v[i], state.temp[i], state.rho[i]
            )?;
        }
        Ok(())
    }
}
