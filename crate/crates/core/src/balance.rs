//! Windowed line balance: metered inflow minus outflow minus the change in
//! line inventory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::LineModel;

/// Windows with more than this fraction of polls missing an end flow are
/// void.
pub const MAX_MISSING_FRACTION: f64 = 0.1;

/// Source of the inventory term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InventoryMode {
    /// Linepack of the shadow model.
    #[default]
    Model,
    /// Whole line at the density of the mean end pressure and temperature.
    EndpointAverage,
}

/// Inventory estimate from end measurements only (kg).
pub fn endpoint_inventory(model: &LineModel, p_in: f64, p_out: f64, t_in: f64, t_out: f64) -> f64 {
    let rho = model
        .fluid
        .density_unchecked(0.5 * (p_in + p_out), 0.5 * (t_in + t_out));
    let n = model.node_count();
    let state = model.state_from(0.0, vec![1.0; n], vec![0.0; n], vec![1.0; n]);
    let mut s = state;
    s.rho = vec![rho; n];
    model.linepack(&s)
}

/// Data for one poll. Flows in kg/s, inventory in kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSample {
    pub t: f64,
    pub q_in: Option<f64>,
    pub q_out: Option<f64>,
    pub inventory: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceTotals {
    /// Integrated inflow (kg).
    pub v_in: f64,
    pub v_out: f64,
    pub delta_linepack: f64,
    /// `v_in - v_out - delta_linepack`
    pub imbalance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceWindow {
    pub start: f64,
    pub end: f64,
    pub polls: usize,
    pub missing_fraction: f64,
    /// `None` when the window is void.
    pub totals: Option<BalanceTotals>,
}

impl BalanceWindow {
    pub fn is_void(&self) -> bool {
        self.totals.is_none()
    }
}

/// Fills gaps by linear interpolation in time between good neighbours,
/// holding the nearest value at the ends.
fn fill(t: &[f64], v: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..v.len()).filter(|&i| v[i].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    for i in 0..v.len() {
        out[i] = if let Some(x) = v[i] {
            x
        } else if i < first {
            v[first].unwrap()
        } else if i > last {
            v[last].unwrap()
        } else {
            while known[k + 1] < i {
                k += 1;
            }
            let (a, b) = (known[k], known[k + 1]);
            let (va, vb) = (v[a].unwrap(), v[b].unwrap());
            va + (vb - va) * (t[i] - t[a]) / (t[b] - t[a])
        };
    }
    Some(out)
}

fn trapezoid(t: &[f64], v: &[f64]) -> f64 {
    t.windows(2)
        .zip(v.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Integrates metered flows over the samples and closes the balance
/// against the inventory change between the first and last sample.
pub fn accumulate(samples: &[BalanceSample]) -> Result<BalanceWindow> {
    if samples.len() < 2 {
        return Err(Error::Domain("a balance window needs at least two polls".into()));
    }
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::Domain("balance samples must be in increasing time order".into()));
    }
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let missing = samples.iter().filter(|s| s.q_in.is_none() || s.q_out.is_none()).count();
    let missing_fraction = missing as f64 / samples.len() as f64;
    let start = t[0];
    let end = t[t.len() - 1];
    let void = BalanceWindow {
        start,
        end,
        polls: samples.len(),
        missing_fraction,
        totals: None,
    };
    if missing_fraction > MAX_MISSING_FRACTION {
        return Ok(void);
    }
    let q_in = fill(&t, &samples.iter().map(|s| s.q_in).collect::<Vec<_>>());
    let q_out = fill(&t, &samples.iter().map(|s| s.q_out).collect::<Vec<_>>());
    let inv = fill(&t, &samples.iter().map(|s| s.inventory).collect::<Vec<_>>());
    let (Some(q_in), Some(q_out), Some(inv)) = (q_in, q_out, inv) else {
        return Ok(void);
    };
    let v_in = trapezoid(&t, &q_in);
    let v_out = trapezoid(&t, &q_out);
    let delta_linepack = inv[inv.len() - 1] - inv[0];
    Ok(BalanceWindow {
        totals: Some(BalanceTotals {
            v_in,
            v_out,
            delta_linepack,
            imbalance: v_in - v_out - delta_linepack,
        }),
        ..void
    })
}

/// Alarm iff the window is valid and its imbalance exceeds `threshold`.
/// The balance never yields a location.
pub fn balance_alarm(window: &BalanceWindow, threshold: f64) -> bool {
    window.totals.is_some_and(|t| t.imbalance > threshold)
}

/// Standard deviation of the integrated imbalance produced by independent
/// meter noise over `polls` trapezoid-weighted polls (kg).
pub fn windowed_noise_sigma(sigma_in: f64, sigma_out: f64, poll_interval: f64, polls: usize) -> f64 {
    if polls < 2 {
        return 0.0;
    }
    let weights = (polls - 2) as f64 + 0.5;
    (sigma_in * sigma_in + sigma_out * sigma_out).sqrt() * poll_interval * weights.sqrt()
}

/// Least-squares slope of window imbalance against window midpoint
/// (kg/s). A persistent positive slope marks meters drifting apart.
pub fn imbalance_trend(windows: &[BalanceWindow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = windows
        .iter()
        .filter_map(|w| w.totals.map(|t| (0.5 * (w.start + w.end), t.imbalance)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Back-to-back windows of fixed duration over the poll stream. The poll
/// closing one window opens the next, so adjacent windows add up.
#[derive(Debug, Clone)]
pub struct BalanceMonitor {
    duration: f64,
    threshold: f64,
    current: Vec<BalanceSample>,
    windows: Vec<BalanceWindow>,
    first_alarm: Option<f64>,
}

impl BalanceMonitor {
    pub fn new(duration: f64, threshold: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::config("balance.window", "must be > 0"));
        }
        if !(threshold > 0.0) {
            return Err(Error::config("balance.threshold", "must be > 0"));
        }
        Ok(BalanceMonitor {
            duration,
            threshold,
            current: Vec::new(),
            windows: Vec::new(),
            first_alarm: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Adds a poll; returns the window it closed, if any.
    pub fn push(&mut self, sample: BalanceSample) -> Result<Option<BalanceWindow>> {
        self.current.push(sample);
        let start = self.current[0].t;
        if sample.t - start < self.duration - 1e-9 {
            return Ok(None);
        }
        let w = accumulate(&self.current)?;
        if balance_alarm(&w, self.threshold) && self.first_alarm.is_none() {
            self.first_alarm = Some(w.end);
        }
        self.windows.push(w);
        self.current = vec![sample];
        Ok(Some(w))
    }

    pub fn windows(&self) -> &[BalanceWindow] {
        &self.windows
    }

    pub fn first_alarm(&self) -> Option<f64> {
        self.first_alarm
    }

    pub fn trend(&self) -> Option<f64> {
        imbalance_trend(&self.windows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steady(n: usize, q_in: f64, q_out: f64, inv: impl Fn(f64) -> f64) -> Vec<BalanceSample> {
        (0..n)
            .map(|k| {
                let t = 5.0 * k as f64;
                BalanceSample {
                    t,
                    q_in: Some(q_in),
                    q_out: Some(q_out),
                    inventory: Some(inv(t)),
                }
            })
            .collect()
    }

    #[test]
    fn identity_arithmetic() {
        // 100 kg in, 95 kg out, 3 kg packed over a 10 s window
        let s = vec![
            BalanceSample {
                t: 0.0,
                q_in: Some(10.0),
                q_out: Some(9.5),
                inventory: Some(1000.0),
            },
            BalanceSample {
                t: 10.0,
                q_in: Some(10.0),
                q_out: Some(9.5),
                inventory: Some(1003.0),
            },
        ];
        let t = accumulate(&s).unwrap().totals.unwrap();
        assert_eq!((t.v_in, t.v_out, t.delta_linepack), (100.0, 95.0, 3.0));
        assert_eq!(t.imbalance, 2.0);
    }

    #[test]
    fn constant_leak_integrates() {
        let s = steady(721, 70.7, 69.7, |_| 5e5);
        let t = accumulate(&s).unwrap().totals.unwrap();
        assert!((t.imbalance - 3600.0).abs() < 1e-6);
    }

    #[test]
    fn gaps_are_interpolated_and_large_gaps_void() {
        let mut s = steady(21, 10.0, 10.0, |t| t);
        s[5].q_in = None;
        s[6].q_out = None;
        let w = accumulate(&s).unwrap();
        assert!((w.totals.unwrap().imbalance + 100.0).abs() < 1e-9);
        s[7].q_in = None;
        assert!(accumulate(&s).unwrap().is_void());
        assert!(!balance_alarm(&accumulate(&s).unwrap(), 1.0));
    }

    #[test]
    fn adjacent_windows_add_up() {
        let s: Vec<_> = (0..41)
            .map(|k| {
                let t = 5.0 * k as f64;
                BalanceSample {
                    t,
                    q_in: Some(10.0 + (0.3 * k as f64).sin()),
                    q_out: Some(9.0 + (0.17 * k as f64).cos()),
                    inventory: Some(1000.0 + 0.01 * t * t),
                }
            })
            .collect();
        let whole = accumulate(&s).unwrap().totals.unwrap().imbalance;
        let a = accumulate(&s[..21]).unwrap().totals.unwrap().imbalance;
        let b = accumulate(&s[20..]).unwrap().totals.unwrap().imbalance;
        assert!((whole - a - b).abs() < 1e-9 * whole.abs());
    }

    #[test]
    fn alarm_threshold() {
        let w = accumulate(&steady(3, 10.0, 9.0, |_| 0.0)).unwrap();
        assert!(!balance_alarm(&w, 20.0));
        assert!(balance_alarm(&w, 5.0));
    }

    #[test]
    fn monitor_closes_windows_back_to_back() {
        let mut m = BalanceMonitor::new(50.0, 1e9).unwrap();
        let mut closed = 0;
        for s in steady(31, 1.0, 1.0, |_| 0.0) {
            if m.push(s).unwrap().is_some() {
                closed += 1;
            }
        }
        assert_eq!(closed, 3);
        assert_eq!(m.windows()[1].start, 50.0);
        assert_eq!(m.windows()[1].end, 100.0);
    }

    #[test]
    fn trend_slope() {
        let ws: Vec<_> = (0..5)
            .map(|k| BalanceWindow {
                start: 100.0 * k as f64,
                end: 100.0 * (k + 1) as f64,
                polls: 21,
                missing_fraction: 0.0,
                totals: Some(BalanceTotals {
                    v_in: 0.0,
                    v_out: 0.0,
                    delta_linepack: 0.0,
                    imbalance: 2.0 * k as f64,
                }),
            })
            .collect();
        assert!((imbalance_trend(&ws).unwrap() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn windowed_sigma() {
        // N = 3: weights 0.5, 1, 0.5
        let s = windowed_noise_sigma(1.0, 0.0, 2.0, 3);
        assert!((s - 2.0 * 1.5f64.sqrt()).abs() < 1e-12);
    }
}
