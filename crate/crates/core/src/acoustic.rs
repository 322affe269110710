//! Negative-pressure-wave monitoring: kinematic arrival times at line
//! transducers and two-sensor time-difference localization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::LeakEvent;

/// Reference wave speeds (m/s): a mile in five seconds in gas, about a
/// mile a second in liquid.
pub const GAS_WAVE_SPEED: f64 = 1609.34 / 5.0;
pub const LIQUID_WAVE_SPEED: f64 = 1609.34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticSensor {
    pub id: String,
    pub position: f64,
    /// Smallest amplitude that triggers the sensor (Pa).
    pub trigger_threshold: f64,
    /// Clock tick of the sensor's timestamps (s).
    pub resolution: f64,
}

impl AcousticSensor {
    pub fn validate(&self, length: f64) -> Result<()> {
        if !(self.position >= 0.0 && self.position <= length) {
            return Err(Error::config(
                format!("acoustic.sensors.{}.position", self.id),
                "outside the line",
            ));
        }
        if !(self.trigger_threshold > 0.0) {
            return Err(Error::config(
                format!("acoustic.sensors.{}.threshold", self.id),
                "must be > 0",
            ));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::config(
                format!("acoustic.sensors.{}.resolution", self.id),
                "must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveModel {
    pub speed: f64,
    /// Amplitude decays as exp(-attenuation * distance) (1/m).
    pub attenuation: f64,
}

impl WaveModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) {
            return Err(Error::config("acoustic.speed", "must be > 0"));
        }
        if !(self.attenuation >= 0.0) {
            return Err(Error::config("acoustic.attenuation", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub sensor_id: String,
    pub position: f64,
    /// Quantized timestamp (s).
    pub arrival_time: f64,
    pub amplitude: f64,
    pub triggered: bool,
}

/// Floors `t` to the clock tick, tolerating roundoff just below a tick.
fn quantize(t: f64, resolution: f64) -> f64 {
    (t / resolution + 1e-9).floor() * resolution
}

/// Arrival of the rarefaction front from `leak` at every sensor.
pub fn propagate(
    leak: &LeakEvent,
    amplitude: f64,
    sensors: &[AcousticSensor],
    wave: &WaveModel,
) -> Result<Vec<Arrival>> {
    wave.validate()?;
    if !(amplitude > 0.0) {
        return Err(Error::Domain(format!("wave amplitude must be > 0, got {amplitude}")));
    }
    Ok(sensors
        .iter()
        .map(|s| {
            let d = (s.position - leak.position).abs();
            let amp = amplitude * (-wave.attenuation * d).exp();
            Arrival {
                sensor_id: s.id.clone(),
                position: s.position,
                arrival_time: quantize(leak.start_time + d / wave.speed, s.resolution),
                amplitude: amp,
                triggered: amp >= s.trigger_threshold,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub position: f64,
    /// Estimate before clamping to the sensor pair.
    pub raw_position: f64,
    /// The leak appears to lie outside the pair.
    pub out_of_bracket: bool,
}

/// Position from arrival times `t1`, `t2` at sensors `x1 < x2`.
pub fn localize(x1: f64, t1: f64, x2: f64, t2: f64, speed: f64) -> Result<Localization> {
    if !(x2 > x1) {
        return Err(Error::Domain(format!(
            "sensor pair must satisfy x1 < x2, got {x1} and {x2}"
        )));
    }
    if !(speed > 0.0) {
        return Err(Error::Domain("wave speed must be > 0".into()));
    }
    let raw = 0.5 * (x1 + x2) + 0.5 * speed * (t1 - t2);
    let position = raw.clamp(x1, x2);
    Ok(Localization {
        position,
        raw_position: raw,
        out_of_bracket: position != raw,
    })
}

/// Delay from leak onset to the first triggered sensor.
pub fn detection_latency(leak: &LeakEvent, arrivals: &[Arrival]) -> Option<f64> {
    arrivals
        .iter()
        .filter(|a| a.triggered)
        .map(|a| a.arrival_time - leak.start_time)
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticFix {
    pub sensors: (String, String),
    pub localization: Localization,
}

/// Localizes from the earliest triggered sensor and the triggered
/// neighbour on the source side. A source outside a pair arrives at the far
/// sensor exactly one sensor-to-sensor transit later, so the neighbour with
/// the most timing slack is the one that brackets the source.
pub fn localize_event(arrivals: &[Arrival], speed: f64) -> Result<Option<AcousticFix>> {
    let mut trig: Vec<&Arrival> = arrivals.iter().filter(|a| a.triggered).collect();
    if trig.len() < 2 {
        return Ok(None);
    }
    trig.sort_by(|a, b| a.position.total_cmp(&b.position));
    let first = (0..trig.len())
        .min_by(|&a, &b| trig[a].arrival_time.total_cmp(&trig[b].arrival_time))
        .expect("non-empty");
    let slack = |nb: usize| {
        (trig[nb].position - trig[first].position).abs() / speed - (trig[nb].arrival_time - trig[first].arrival_time)
    };
    let Some(nb) = [first.checked_sub(1), Some(first + 1).filter(|&i| i < trig.len())]
        .into_iter()
        .flatten()
        .filter(|&nb| trig[nb].position != trig[first].position)
        .max_by(|&a, &b| slack(a).total_cmp(&slack(b)))
    else {
        return Ok(None);
    };
    let (a, b) = if nb < first {
        (trig[nb], trig[first])
    } else {
        (trig[first], trig[nb])
    };
    Ok(Some(AcousticFix {
        sensors: (a.sensor_id.clone(), b.sensor_id.clone()),
        localization: localize(a.position, a.arrival_time, b.position, b.arrival_time, speed)?,
    }))
}

/// Writes `sensor_id,arrival_time,amplitude,triggered` rows.
pub fn write_event_log<W: Write>(out: &mut W, arrivals: &[Arrival]) -> std::io::Result<()> {
    writeln!(out, "sensor_id,arrival_time,amplitude,triggered")?;
    for a in arrivals {
        writeln!(
            out,
            "{},{:.6},{:.6e},{}",
            a.sensor_id, a.arrival_time, a.amplitude, a.triggered
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sensor(id: &str, x: f64, res: f64) -> AcousticSensor {
        AcousticSensor {
            id: id.into(),
            position: x,
            trigger_threshold: 100.0,
            resolution: res,
        }
    }

    fn leak(x: f64, t0: f64) -> LeakEvent {
        LeakEvent {
            position: x,
            start_time: t0,
            mass_rate: 1.0,
        }
    }

    #[test]
    fn reference_wave_speeds() {
        let s = [sensor("A", 3218.68, 0.01)];
        let lossless = |a| WaveModel {
            speed: a,
            attenuation: 0.0,
        };
        let gas = propagate(&leak(0.0, 0.0), 1e4, &s, &lossless(GAS_WAVE_SPEED)).unwrap();
        assert!((gas[0].arrival_time - 10.0).abs() <= 0.01);
        let liq = propagate(&leak(0.0, 0.0), 1e4, &s, &lossless(LIQUID_WAVE_SPEED)).unwrap();
        assert!((liq[0].arrival_time - 2.0).abs() <= 0.01);
    }

    #[test]
    fn no_attenuation_keeps_amplitude() {
        let s = [sensor("A", 0.0, 0.01), sensor("B", 9000.0, 0.01)];
        let w = WaveModel {
            speed: 1000.0,
            attenuation: 0.0,
        };
        let a = propagate(&leak(2000.0, 0.0), 5e3, &s, &w).unwrap();
        assert_eq!(a[0].amplitude, 5e3);
        assert_eq!(a[1].amplitude, 5e3);
    }

    #[test]
    fn localize_examples() {
        assert_eq!(localize(0.0, 3.0, 10_000.0, 3.0, 1000.0).unwrap().position, 5000.0);
        let l = localize(0.0, 4.0, 10_000.0, 6.0, 1000.0).unwrap();
        assert_eq!(l.position, 4000.0);
        assert!(!l.out_of_bracket);
        let out = localize(0.0, 0.0, 1000.0, 3.0, 1000.0).unwrap();
        assert_eq!(out.position, 0.0);
        assert!(out.out_of_bracket);
    }

    #[test]
    fn latency_examples() {
        let s = [sensor("A", 0.0, 0.001), sensor("B", 10_000.0, 0.001)];
        let w = WaveModel {
            speed: LIQUID_WAVE_SPEED,
            attenuation: 0.0,
        };
        let l = leak(5000.0, 100.0);
        let lat = detection_latency(&l, &propagate(&l, 1e4, &s, &w).unwrap()).unwrap();
        assert!((lat - 5000.0 / 1609.34).abs() <= 0.001 + 1e-9);

        let near = leak(1.0, 0.0);
        let lat = detection_latency(&near, &propagate(&near, 1e4, &s, &w).unwrap()).unwrap();
        assert!(lat < 0.001 + 1e-9);

        let faint = propagate(&l, 50.0, &s, &w).unwrap();
        assert_eq!(detection_latency(&l, &faint), None);
    }

    #[test]
    fn event_prefers_bracketing_pair() {
        let s = [
            sensor("A", 0.0, 0.001),
            sensor("B", 4000.0, 0.001),
            sensor("C", 10_000.0, 0.001),
        ];
        let w = WaveModel {
            speed: 1000.0,
            attenuation: 0.0,
        };
        let arr = propagate(&leak(6500.0, 0.0), 1e4, &s, &w).unwrap();
        let fix = localize_event(&arr, 1000.0).unwrap().unwrap();
        assert_eq!(fix.sensors, ("B".to_string(), "C".to_string()));
        assert!((fix.localization.position - 6500.0).abs() <= 1.0);
    }

    proptest! {
        #[test]
        fn forward_inverse(x in 1.0f64..9999.0, shift in -5000.0f64..5000.0, beta in 0.0f64..1e-4, res in 1e-4f64..0.05) {
            let a = 1200.0;
            let s = [sensor("A", shift, res), sensor("B", shift + 10_000.0, res)];
            let w = WaveModel { speed: a, attenuation: beta };
            let arr = propagate(&leak(shift + x, 3.7), 1e6, &s, &w).unwrap();
            prop_assume!(arr.iter().all(|a| a.triggered));
            let l = localize(s[0].position, arr[0].arrival_time, s[1].position, arr[1].arrival_time, a).unwrap();
            prop_assert!((l.position - (shift + x)).abs() <= a * res + 1e-6);
        }

        #[test]
        fn attenuation_never_adds_triggers(b1 in 0.0f64..1e-3, b2 in 0.0f64..1e-3) {
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            let s: Vec<_> = (0..6).map(|k| sensor(&format!("S{k}"), 2000.0 * k as f64, 0.01)).collect();
            let count = |b| {
                let w = WaveModel { speed: 1000.0, attenuation: b };
                propagate(&leak(3300.0, 0.0), 500.0, &s, &w).unwrap().iter().filter(|a| a.triggered).count()
            };
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
