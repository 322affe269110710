//! Discrete residuals, finite-difference Jacobian and the Newton driver.

use super::band::BandMatrix;
use super::{BoundaryConditions, BoundaryKind, EndCondition, GridState, LineModel, SolverSettings};
use crate::error::{Error, Result};
use crate::network::GRAVITY;

/// Velocity below which a stagnant, adiabatic cell has no steady energy
/// equation; temperature is then carried across the cell unchanged.
const STAGNANT_VELOCITY: f64 = 1e-9;

pub(super) enum Mode<'a> {
    Steady,
    Transient {
        old: &'a GridState,
        dt: f64,
        sinks_old: &'a [f64],
    },
}

pub(super) struct Problem<'a> {
    pub model: &'a LineModel,
    pub mode: Mode<'a>,
    pub bc: &'a BoundaryConditions,
    pub t_new: f64,
    pub sinks_new: &'a [f64],
    pub theta: f64,
    /// Supply temperature applies at node 0 when true, at the last node otherwise.
    pub upstream_inlet: bool,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    p: f64,
    v: f64,
    t: f64,
    rho: f64,
}

struct Scales {
    flux: f64,
    pressure: f64,
}

const TEMPERATURE_RATE_SCALE: f64 = 1.0;

impl<'a> Problem<'a> {
    fn node(&self, p: f64, v: f64, t: f64) -> Node {
        Node {
            p,
            v,
            t,
            rho: self.model.fluid.density_unchecked(p, t),
        }
    }

    fn nodes(&self, s: &GridState) -> Vec<Node> {
        (0..s.node_count())
            .map(|i| Node {
                p: s.p[i],
                v: s.v[i],
                t: s.temp[i],
                rho: s.rho[i],
            })
            .collect()
    }

    fn scales(&self, s: &GridState) -> Scales {
        let n = s.node_count() as f64;
        let rho = s.rho.iter().sum::<f64>() / n;
        let p = s.p.iter().sum::<f64>() / n;
        let a = self.model.node_area.iter().cloned().fold(0.0, f64::max);
        Scales {
            flux: (rho * a).max(1e-9),
            pressure: p.max(1e3),
        }
    }

    fn cell_sink(sinks: &[f64], c: usize) -> f64 {
        0.5 * (sinks[c] + sinks[c + 1])
    }

    /// Spatial operator of cell `c` in physical units:
    /// (kg/s, m/s², K/s).
    fn spatial(&self, c: usize, a: &Node, b: &Node, sink: f64) -> [f64; 3] {
        let m = self.model;
        let cell = &m.cells[c];
        let fluid = &m.fluid;
        let cp = fluid.specific_heat;
        let dx = cell.dx;
        let d = cell.diameter;

        let flux_a = a.rho * a.v * m.node_area[c];
        let flux_b = b.rho * b.v * m.node_area[c + 1];
        let cont = flux_b - flux_a + sink;

        let vbar = 0.5 * (a.v + b.v);
        let rbar = 0.5 * (a.rho + b.rho);
        let tbar = 0.5 * (a.t + b.t);
        let pbar = 0.5 * (a.p + b.p);
        let dvdx = (b.v - a.v) / dx;

        let mom = vbar * dvdx
            + (b.p - a.p) / (rbar * dx)
            + GRAVITY * cell.dh / dx
            + cell.friction * vbar * vbar.abs() / (2.0 * d);

        let u = cell.heat_transfer;
        let energy = if matches!(self.mode, Mode::Steady) && u == 0.0 && vbar.abs() < STAGNANT_VELOCITY {
            b.t - a.t
        } else {
            vbar * (b.t - a.t) / dx + tbar / (rbar * cp) * fluid.dp_dt_at_constant_density(pbar, tbar) * dvdx
                - cell.friction * vbar.abs().powi(3) / (2.0 * cp * d)
                + 4.0 * u / (rbar * cp * d) * (tbar - m.pipeline.ground_temperature)
        };
        [cont, mom, energy]
    }

    fn old_spatial(&self) -> Option<Vec<[f64; 3]>> {
        match &self.mode {
            Mode::Steady => None,
            Mode::Transient { old, sinks_old, .. } => {
                let nodes = self.nodes(old);
                Some(
                    (0..self.model.cells.len())
                        .map(|c| self.spatial(c, &nodes[c], &nodes[c + 1], Self::cell_sink(sinks_old, c)))
                        .collect(),
                )
            }
        }
    }

    fn cell_residual(&self, c: usize, a: &Node, b: &Node, old_spatial: Option<&[f64; 3]>, sc: &Scales) -> [f64; 3] {
        let new = self.spatial(c, a, b, Self::cell_sink(self.sinks_new, c));
        let r = match (&self.mode, old_spatial) {
            (Mode::Transient { old, dt, .. }, Some(os)) => {
                let cell = &self.model.cells[c];
                let th = self.theta;
                let storage = cell.area * cell.dx * (a.rho + b.rho - old.rho[c] - old.rho[c + 1]) / (2.0 * dt);
                let accel = (a.v + b.v - old.v[c] - old.v[c + 1]) / (2.0 * dt);
                let heat = (a.t + b.t - old.temp[c] - old.temp[c + 1]) / (2.0 * dt);
                [
                    storage + th * new[0] + (1.0 - th) * os[0],
                    accel + th * new[1] + (1.0 - th) * os[1],
                    heat + th * new[2] + (1.0 - th) * os[2],
                ]
            }
            _ => new,
        };
        [r[0] / sc.flux, r[1] / GRAVITY, r[2] / TEMPERATURE_RATE_SCALE]
    }

    fn hydraulic_bc(&self, end: &EndCondition, node: usize, nd: &Node, inflow_sign: f64, sc: &Scales) -> f64 {
        let target = end.schedule.value_at(self.t_new);
        let flux = nd.rho * nd.v * self.model.node_area[node];
        match end.kind {
            BoundaryKind::Pressure => (nd.p - target) / sc.pressure,
            BoundaryKind::MassFlow => (flux - target) / sc.flux,
            BoundaryKind::Reservoir { loss_coefficient } => {
                let q_in = inflow_sign * flux;
                (nd.p - (target - loss_coefficient * q_in * q_in.abs())) / sc.pressure
            }
        }
    }

    fn temperature_bc(&self, nd: &Node) -> f64 {
        nd.t - self.bc.supply_temperature.value_at(self.t_new)
    }

    fn cell_row(&self, c: usize) -> usize {
        1 + usize::from(self.upstream_inlet) + 3 * c
    }

    fn residual(&self, nodes: &[Node], old_spatial: Option<&[[f64; 3]]>, sc: &Scales) -> Vec<f64> {
        let n = nodes.len();
        let mut r = vec![0.0; 3 * n];
        r[0] = self.hydraulic_bc(&self.bc.inlet, 0, &nodes[0], 1.0, sc);
        if self.upstream_inlet {
            r[1] = self.temperature_bc(&nodes[0]);
        }
        for c in 0..n - 1 {
            let row = self.cell_row(c);
            let cr = self.cell_residual(c, &nodes[c], &nodes[c + 1], old_spatial.map(|o| &o[c]), sc);
            r[row..row + 3].copy_from_slice(&cr);
        }
        let row = self.cell_row(n - 1);
        r[row] = self.hydraulic_bc(&self.bc.outlet, n - 1, &nodes[n - 1], -1.0, sc);
        if !self.upstream_inlet {
            r[row + 1] = self.temperature_bc(&nodes[n - 1]);
        }
        r
    }

    fn perturbation(&self, nd: &Node, var: usize, sc: &Scales) -> f64 {
        match var {
            0 => 1e-6 * nd.p.abs().max(1e-3 * sc.pressure),
            1 => 1e-7 * nd.v.abs().max(0.1),
            _ => 1e-6 * nd.t.abs().max(1.0),
        }
    }

    fn perturbed(&self, nd: &Node, var: usize, h: f64) -> Node {
        match var {
            0 => self.node(nd.p + h, nd.v, nd.t),
            1 => Node { v: nd.v + h, ..*nd },
            _ => self.node(nd.p, nd.v, nd.t + h),
        }
    }

    fn jacobian(&self, nodes: &[Node], old_spatial: Option<&[[f64; 3]]>, sc: &Scales) -> BandMatrix {
        let n = nodes.len();
        let mut jac = BandMatrix::new(3 * n, 4, 4);

        let mut end_rows = |node: usize, row: usize, end: &EndCondition, sign: f64, with_t: bool| {
            let nd = &nodes[node];
            let base = self.hydraulic_bc(end, node, nd, sign, sc);
            for var in 0..3 {
                let h = self.perturbation(nd, var, sc);
                let pn = self.perturbed(nd, var, h);
                jac.add(
                    row,
                    3 * node + var,
                    (self.hydraulic_bc(end, node, &pn, sign, sc) - base) / h,
                );
            }
            if with_t {
                jac.add(row + 1, 3 * node + 2, 1.0);
            }
        };
        end_rows(0, 0, &self.bc.inlet, 1.0, self.upstream_inlet);
        end_rows(n - 1, self.cell_row(n - 1), &self.bc.outlet, -1.0, !self.upstream_inlet);

        for c in 0..n - 1 {
            let row = self.cell_row(c);
            let os = old_spatial.map(|o| &o[c]);
            let (a, b) = (&nodes[c], &nodes[c + 1]);
            let base = self.cell_residual(c, a, b, os, sc);
            for side in 0..2 {
                let nd = if side == 0 { a } else { b };
                for var in 0..3 {
                    let h = self.perturbation(nd, var, sc);
                    let pn = self.perturbed(nd, var, h);
                    let r = if side == 0 {
                        self.cell_residual(c, &pn, b, os, sc)
                    } else {
                        self.cell_residual(c, a, &pn, os, sc)
                    };
                    let col = 3 * (c + side) + var;
                    for k in 0..3 {
                        jac.add(row + k, col, (r[k] - base[k]) / h);
                    }
                }
            }
        }
        jac
    }

    fn nodes_valid(nodes: &[Node]) -> bool {
        nodes
            .iter()
            .all(|n| n.p > 0.0 && n.t > 0.0 && n.rho > 0.0 && n.rho.is_finite() && n.v.is_finite())
    }

    pub fn solve(&self, guess: GridState, settings: &SolverSettings) -> Result<GridState> {
        let old_spatial = self.old_spatial();
        let os = old_spatial.as_deref();
        let sc = match &self.mode {
            Mode::Transient { old, .. } => self.scales(old),
            Mode::Steady => self.scales(&guess),
        };
        let mut nodes = self.nodes(&guess);
        if !Self::nodes_valid(&nodes) {
            return Err(Error::Domain("Newton started from a non-physical state".into()));
        }
        let mut r = self.residual(&nodes, os, &sc);
        let mut history = Vec::new();
        for _ in 0..settings.newton_max_iter {
            let norm = max_abs(&r);
            history.push(norm);
            if norm < settings.newton_tol {
                return Ok(self.to_state(&nodes));
            }
            let mut jac = self.jacobian(&nodes, os, &sc);
            let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
            if jac.solve(&mut step).is_err() {
                return Err(Error::NonConvergence {
                    method: "Newton (singular Jacobian)",
                    iterations: history.len(),
                    residual: norm,
                    history,
                });
            }
            let norm2 = l2(&r);
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<Node> = nodes
                    .iter()
                    .enumerate()
                    .map(|(i, nd)| {
                        self.node(
                            nd.p + lambda * step[3 * i],
                            nd.v + lambda * step[3 * i + 1],
                            nd.t + lambda * step[3 * i + 2],
                        )
                    })
                    .collect();
                if Self::nodes_valid(&trial) {
                    let rt = self.residual(&trial, os, &sc);
                    let rt2 = l2(&rt);
                    if rt2.is_finite() && (rt2 < norm2 || lambda < 1.0 / 64.0) {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((trial, rt)) => {
                    nodes = trial;
                    r = rt;
                }
                None => break,
            }
        }
        let norm = max_abs(&r);
        if norm < settings.newton_tol {
            return Ok(self.to_state(&nodes));
        }
        history.push(norm);
        Err(Error::NonConvergence {
            method: "Newton",
            iterations: history.len(),
            residual: norm,
            history,
        })
    }

    fn to_state(&self, nodes: &[Node]) -> GridState {
        GridState {
            t: self.t_new,
            p: nodes.iter().map(|n| n.p).collect(),
            v: nodes.iter().map(|n| n.v).collect(),
            temp: nodes.iter().map(|n| n.t).collect(),
            rho: nodes.iter().map(|n| n.rho).collect(),
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inlet pressure implied by an end condition for a given inflow.
fn end_pressure(end: &EndCondition, t: f64, q_in: f64) -> Option<f64> {
    let target = end.schedule.value_at(t);
    match end.kind {
        BoundaryKind::Pressure => Some(target),
        BoundaryKind::MassFlow => None,
        BoundaryKind::Reservoir { loss_coefficient } => Some(target - loss_coefficient * q_in * q_in.abs()),
    }
}

/// Initial guess for the steady solve: Darcy-Weisbach plus hydrostatic
/// marching from the pressure anchor, with the mass flow found by bisection
/// when both ends are pressure-like.
pub(super) fn steady_guess(model: &LineModel, bc: &BoundaryConditions, t: f64, sinks: &[f64]) -> Result<GridState> {
    let n = model.node_count();
    let temp = bc.supply_temperature.value_at(t);
    let total_sink: f64 = sinks.iter().sum();
    let fluid = &model.fluid;

    // flow in cell c given inlet flow
    let cell_flow = |m_in: f64, c: usize| m_in - sinks[1..=c].iter().sum::<f64>();
    let gradient = |c: usize, p: f64, m: f64| {
        let cell = &model.cells[c];
        let rho = fluid.density_unchecked(p.max(1.0), temp);
        let a = cell.area;
        cell.friction * m * m.abs() / (2.0 * cell.diameter * rho * a * a) * cell.dx + rho * GRAVITY * cell.dh
    };
    let march_forward = |p0: f64, m_in: f64| {
        let mut p = vec![p0; n];
        for c in 0..n - 1 {
            p[c + 1] = p[c] - gradient(c, p[c], cell_flow(m_in, c));
        }
        p
    };
    let march_backward = |pn: f64, m_in: f64| {
        let mut p = vec![pn; n];
        for c in (0..n - 1).rev() {
            p[c] = p[c + 1] + gradient(c, p[c + 1], cell_flow(m_in, c));
        }
        p
    };

    let m_in = match (bc.inlet.kind, bc.outlet.kind) {
        (BoundaryKind::MassFlow, _) => bc.inlet.schedule.value_at(t),
        (_, BoundaryKind::MassFlow) => bc.outlet.schedule.value_at(t) + total_sink,
        _ => {
            let f = |m: f64| {
                let p_in = end_pressure(&bc.inlet, t, m).expect("pressure-like inlet");
                let p = march_forward(p_in, m);
                let m_out = m - total_sink;
                p[n - 1] - end_pressure(&bc.outlet, t, -m_out).expect("pressure-like outlet")
            };
            let p_scale = bc.inlet.schedule.value_at(t).max(bc.outlet.schedule.value_at(t));
            let rho = fluid.density_unchecked(p_scale, temp);
            let cell = &model.cells[0];
            let mut s = rho
                * cell.area
                * (2.0 * cell.diameter * p_scale / (cell.friction * model.pipeline.length * rho)).sqrt()
                + total_sink
                + 1.0;
            let (mut lo, mut hi) = (-s, s);
            let mut k = 0;
            while f(lo) < 0.0 && k < 200 {
                lo *= 2.0;
                k += 1;
            }
            while f(hi) > 0.0 && k < 200 {
                hi *= 2.0;
                k += 1;
            }
            s = hi - lo;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * s {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    };

    let p = if bc.inlet.kind.anchors_pressure() {
        march_forward(end_pressure(&bc.inlet, t, m_in).expect("anchored"), m_in)
    } else {
        let m_out = m_in - total_sink;
        march_backward(end_pressure(&bc.outlet, t, -m_out).expect("anchored"), m_in)
    };

    // report the first violating node along the flow direction
    let order: Vec<usize> = if m_in >= 0.0 {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    if let Some(&i) = order.iter().find(|&&i| !(p[i] > 0.0)) {
        return Err(Error::Infeasible {
            node: i,
            position: model.grid.node_positions[i],
            message: format!(
                "no steady solution: pressure falls to {:.4e} Pa with inlet flow {m_in:.4} kg/s",
                p[i]
            ),
        });
    }

    let v = (0..n)
        .map(|i| {
            let m_node = if i == 0 {
                m_in
            } else {
                cell_flow(m_in, i - 1) - 0.5 * sinks[i]
            };
            m_node / (fluid.density_unchecked(p[i], temp) * model.node_area[i])
        })
        .collect();
    Ok(model.state_from(t, p, v, vec![temp; n]))
}
