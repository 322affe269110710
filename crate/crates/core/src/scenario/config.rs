//! Scenario file schema. Dimensional fields accept either a bare number in
//! SI units or a string `"<number> <unit>"`, converted on load.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use crate::availability::ComponentChain;
use crate::balance::InventoryMode;
use crate::network::InstrumentKind;
use crate::rtm::ShadowEnd;
use crate::telemetry::KindLimits;

type Converter = fn(f64, &str) -> Option<f64>;

fn length(v: f64, unit: &str) -> Option<f64> {
    let k = match unit {
        "m" => 1.0,
        "km" => 1e3,
        "cm" => 1e-2,
        "mm" => 1e-3,
        "ft" => 0.3048,
        "in" => 0.0254,
        "mi" => 1609.344,
        _ => return None,
    };
    Some(v * k)
}

fn pressure(v: f64, unit: &str) -> Option<f64> {
    let k = match unit {
        "Pa" => 1.0,
        "kPa" => 1e3,
        "MPa" => 1e6,
        "GPa" => 1e9,
        "bar" => 1e5,
        "psi" => 6894.757293168,
        _ => return None,
    };
    Some(v * k)
}

fn temperature(v: f64, unit: &str) -> Option<f64> {
    match unit {
        "K" => Some(v),
        "degC" | "C" => Some(v + 273.15),
        "degF" | "F" => Some((v - 32.0) * 5.0 / 9.0 + 273.15),
        _ => None,
    }
}

fn time(v: f64, unit: &str) -> Option<f64> {
    let k = match unit {
        "ms" => 1e-3,
        "s" => 1.0,
        "min" => 60.0,
        "h" => 3600.0,
        "d" => 86400.0,
        _ => return None,
    };
    Some(v * k)
}

fn mass_flow(v: f64, unit: &str) -> Option<f64> {
    let k = match unit {
        "kg/s" => 1.0,
        "kg/min" => 1.0 / 60.0,
        "kg/h" => 1.0 / 3600.0,
        "t/h" => 1000.0 / 3600.0,
        _ => return None,
    };
    Some(v * k)
}

fn density(v: f64, unit: &str) -> Option<f64> {
    match unit {
        "kg/m3" => Some(v),
        "g/cm3" => Some(v * 1000.0),
        _ => None,
    }
}

fn speed(v: f64, unit: &str) -> Option<f64> {
    match unit {
        "m/s" => Some(v),
        "km/s" => Some(v * 1e3),
        "ft/s" => Some(v * 0.3048),
        _ => None,
    }
}

fn mass(v: f64, unit: &str) -> Option<f64> {
    match unit {
        "kg" => Some(v),
        "t" => Some(v * 1e3),
        _ => None,
    }
}

struct QuantityVisitor {
    what: &'static str,
    convert: Converter,
}

impl<'de> Visitor<'de> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a {} as a number (SI) or \"<number> <unit>\"", self.what)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, s: &str) -> Result<f64, E> {
        parse_quantity(s, self.what, self.convert).map_err(E::custom)
    }
}

fn parse_quantity(s: &str, what: &str, convert: Converter) -> Result<f64, String> {
    let mut parts = s.split_whitespace();
    let (Some(num), unit, None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected \"<number> <unit>\" for a {what}, got \"{s}\""));
    };
    let v: f64 = num.parse().map_err(|_| format!("`{num}` is not a number"))?;
    match unit {
        None => Ok(v),
        Some(u) => convert(v, u).ok_or_else(|| format!("unknown {what} unit `{u}`")),
    }
}

macro_rules! quantity {
    ($name:ident, $what:literal, $convert:path) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                d.deserialize_any(QuantityVisitor {
                    what: $what,
                    convert: $convert,
                })
                .map($name)
            }
        }
    };
}

quantity!(Length, "length", length);
quantity!(Pressure, "pressure", pressure);
quantity!(Temperature, "temperature", temperature);
quantity!(Time, "time", time);
quantity!(MassFlow, "mass flow", mass_flow);
quantity!(Density, "density", density);
quantity!(Speed, "speed", speed);
quantity!(Mass, "mass", mass);

/// A value whose dimension depends on a sibling field (instrument kind,
/// boundary kind). Converted once that field is known.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Flexible {
    Number(f64),
    Text(String),
}

impl<'de> Deserialize<'de> for Flexible {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Flexible;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number (SI) or \"<number> <unit>\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Flexible, E> {
                Ok(Flexible::Number(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Flexible, E> {
                Ok(Flexible::Number(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Flexible, E> {
                Ok(Flexible::Number(v as f64))
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Flexible, E> {
                Ok(Flexible::Text(s.to_string()))
            }
        }
        d.deserialize_any(V)
    }
}

/// Dimension a [`Flexible`] value is read in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Pressure,
    MassFlow,
    Temperature,
}

impl Dimension {
    pub fn of_instrument(kind: InstrumentKind) -> Self {
        match kind {
            InstrumentKind::Flow => Dimension::MassFlow,
            InstrumentKind::Temperature => Dimension::Temperature,
            InstrumentKind::Pressure | InstrumentKind::Acoustic => Dimension::Pressure,
        }
    }

    fn parts(self) -> (&'static str, Converter) {
        match self {
            Dimension::Pressure => ("pressure", pressure),
            Dimension::MassFlow => ("mass flow", mass_flow),
            Dimension::Temperature => ("temperature", temperature),
        }
    }
}

impl Flexible {
    pub fn to_si(&self, dim: Dimension) -> Result<f64, String> {
        match self {
            Flexible::Number(v) => Ok(*v),
            Flexible::Text(s) => {
                let (what, convert) = dim.parts();
                parse_quantity(s, what, convert)
            }
        }
    }
}

fn default_poll() -> Time {
    Time(5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub run: RunSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub fluid: FluidSection,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub instruments: Vec<InstrumentSection>,
    pub boundary: BoundarySection,
    #[serde(default)]
    pub leaks: Vec<LeakSection>,
    #[serde(default)]
    pub telemetry: TelemetrySection,
    pub rtm: Option<RtmSection>,
    pub balance: Option<BalanceSection>,
    pub acoustic: Option<AcousticSection>,
    pub availability: Option<AvailabilitySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: Time,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dx: Length,
    pub dt: Time,
    pub theta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = crate::hydraulics::SolverSettings::default();
        SolverSection {
            dx: Length(100.0),
            dt: Time(s.dt),
            theta: s.theta,
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidKind {
    Liquid,
    Gas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZModel {
    Ideal,
    Correlated,
    /// Correlated, with the constant fitted to a reference Z.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub kind: FluidKind,
    /// J/(kg K)
    pub specific_heat: f64,
    pub sound_speed: Speed,
    // liquid
    pub density: Option<Density>,
    pub reference_pressure: Option<Pressure>,
    pub reference_temperature: Option<Temperature>,
    pub bulk_modulus: Option<Pressure>,
    /// Signed thermal expansion coefficient (1/K).
    pub expansion: Option<f64>,
    // gas
    /// J/(kg K)
    pub gas_constant: Option<f64>,
    pub z_model: Option<ZModel>,
    pub z_exponent: Option<f64>,
    pub z_constant: Option<f64>,
    pub z_reference: Option<f64>,
    pub critical_pressure: Option<Pressure>,
    pub critical_temperature: Option<Temperature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub end: Length,
    pub diameter: Length,
    pub friction_factor: f64,
    /// W/(m² K)
    pub heat_transfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub length: Length,
    /// Uniform line: diameter and friction factor for the whole length.
    pub diameter: Option<Length>,
    pub friction_factor: Option<f64>,
    #[serde(default)]
    pub segments: Vec<SegmentSection>,
    /// (x, z) breakpoints; flat at zero when absent.
    pub elevation: Option<Vec<(Length, Length)>>,
    #[serde(default)]
    pub heat_transfer: f64,
    pub ground_temperature: Option<Temperature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub id: String,
    pub kind: InstrumentKind,
    pub position: Length,
    pub span: (Flexible, Flexible),
    /// Absolute noise sigma in instrument units; defaults to
    /// `telemetry.noise_fraction` of the span.
    pub noise: Option<f64>,
    #[serde(default)]
    pub bias: f64,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndKind {
    Pressure,
    MassFlow,
    Reservoir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndSection {
    pub kind: EndKind,
    /// Constant value; alternative to `schedule`.
    pub value: Option<Flexible>,
    /// (t, value) breakpoints.
    pub schedule: Option<Vec<(Time, Flexible)>>,
    pub loss_coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub inlet: EndSection,
    pub outlet: EndSection,
    pub supply_temperature: Option<Temperature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakSection {
    pub position: Length,
    pub start_time: Time,
    pub rate: MassFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetrySection {
    pub poll_interval: Time,
    /// Default noise sigma as a fraction of each instrument's span.
    pub noise_fraction: f64,
    /// Default per-poll dropout probability.
    pub dropout: f64,
    pub limits: KindLimits,
}

impl Default for TelemetrySection {
    fn default() -> Self {
        TelemetrySection {
            poll_interval: default_poll(),
            noise_fraction: 0.0,
            dropout: 0.0,
            limits: KindLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RtmSection {
    pub enabled: bool,
    pub shadow_inlet: ShadowEnd,
    pub shadow_outlet: ShadowEnd,
    pub averaging_polls: usize,
    pub stale_polls: usize,
    pub locate_delay_polls: usize,
    pub ambiguity: f64,
    pub consecutive: usize,
    pub min_indicators: usize,
    /// Default thresholds: this many noise sigmas of the noisiest indicator.
    pub threshold_sigmas: f64,
    /// Lower bound on default thresholds, as a fraction of span.
    pub threshold_floor: f64,
    pub flow_threshold: Option<MassFlow>,
    pub pressure_threshold: Option<Pressure>,
}

impl Default for RtmSection {
    fn default() -> Self {
        let s = crate::rtm::RtmSettings::default();
        RtmSection {
            enabled: true,
            shadow_inlet: s.shadow_inlet,
            shadow_outlet: s.shadow_outlet,
            averaging_polls: s.averaging_polls,
            stale_polls: s.stale_polls,
            locate_delay_polls: s.locate_delay_polls,
            ambiguity: s.ambiguity,
            consecutive: crate::rtm::VotingPolicy::DEFAULT_CONSECUTIVE,
            min_indicators: crate::rtm::VotingPolicy::DEFAULT_MIN_INDICATORS,
            threshold_sigmas: 3.0,
            threshold_floor: 1e-3,
            flow_threshold: None,
            pressure_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceSection {
    pub enabled: bool,
    pub window: Time,
    pub inventory: InventoryMode,
    /// Explicit imbalance threshold; otherwise `threshold_sigmas` times the
    /// windowed meter noise, never below `threshold_floor`.
    pub threshold: Option<Mass>,
    pub threshold_sigmas: f64,
    pub threshold_floor: Mass,
}

impl Default for BalanceSection {
    fn default() -> Self {
        BalanceSection {
            enabled: true,
            window: Time(3600.0),
            inventory: InventoryMode::Model,
            threshold: None,
            threshold_sigmas: 3.0,
            threshold_floor: Mass(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticSensorSection {
    pub id: String,
    pub position: Length,
    pub threshold: Pressure,
    pub resolution: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticSection {
    #[serde(default = "enabled")]
    pub enabled: bool,
    /// Defaults to the fluid sound speed.
    pub speed: Option<Speed>,
    #[serde(default)]
    pub attenuation: f64,
    /// Initial rarefaction amplitude at the leak.
    pub amplitude: Pressure,
    pub sensors: Vec<AcousticSensorSection>,
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilitySection {
    /// Adds the three reference chains at this per-unit availability.
    pub preset_availability: Option<f64>,
    #[serde(default)]
    pub chains: Vec<ComponentChain>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Keep a plant state snapshot this often.
    pub state_dump_interval: Option<Time>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Deserialize)]
    struct Probe {
        l: Length,
        p: Pressure,
        t: Temperature,
        q: MassFlow,
        d: Time,
    }

    #[test]
    fn unit_strings_convert() {
        let p: Probe = toml::from_str(
            r#"l = "10 km"
p = "6.8 bar"
t = "15 degC"
q = "252 t/h"
d = 2"#,
        )
        .unwrap();
        assert_eq!(p.l.0, 10_000.0);
        assert!((p.p.0 - 6.8e5).abs() < 1e-6);
        assert!((p.t.0 - 288.15).abs() < 1e-9);
        assert!((p.q.0 - 70.0).abs() < 1e-12);
        assert_eq!(p.d.0, 2.0);
    }

    #[test]
    fn bad_units_are_rejected() {
        assert!(toml::from_str::<Probe>("l = \"3 parsecs\"\np = 1\nt = 1\nq = 1\nd = 1").is_err());
        assert!(parse_quantity("1 bar extra", "pressure", pressure).is_err());
        assert_eq!(Flexible::Text("2 bar".into()).to_si(Dimension::Pressure), Ok(2e5));
        assert!(Flexible::Text("2 bar".into()).to_si(Dimension::MassFlow).is_err());
    }
}
