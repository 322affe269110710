//! Desk-scale pipeline integrity toolkit: transient line hydraulics,
//! synthetic SCADA telemetry and three leak detectors (real-time model,
//! line balance, negative pressure wave), plus alarm availability analysis.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic;
pub mod availability;
pub mod balance;
pub mod error;
pub mod fluid;
pub mod hydraulics;
pub mod network;
pub mod rtm;
pub mod scenario;
pub mod telemetry;

pub use error::{Error, Result};
pub use fluid::{Eos, FluidModel, GasEos, LiquidEos, ZMode};
pub use hydraulics::{
    BoundaryConditions, BoundaryKind, EndCondition, GridState, LeakEvent, LineModel, MassLedger, Schedule,
    SolverSettings, StepLedger,
};
pub use network::{discretize, Grid, InstrumentKind, InstrumentPlacement, PipelineModel};
pub use rtm::{LeakVerdict, RtmDetector, RtmSettings, ShadowModel, VotingPolicy};
pub use scenario::{run_scenario, sweep, RunReport, Scenario, ScenarioTemplate, SweepGrid};
pub use telemetry::{NoiseSpec, Quality, Sampler, TelemetryFrame};
