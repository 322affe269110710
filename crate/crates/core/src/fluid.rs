//! Equations of state for liquids and light hydrocarbon gases.
//!
//! Two families are provided:
//!
//! * a bulk-modulus liquid, `rho = rho0 * [1 + (P - P0)/B + alpha (T - T0)]`
//! * a real gas, `P = rho R Z T`, with either `Z = 1` or the one-parameter
//!   correlation `1/Z - 1 = k P / T^y`.
//!
//! All quantities are SI (Pa, K, kg/m³).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GAS_INVERSION_MAX_ITER: usize = 100;
const GAS_INVERSION_RTOL: f64 = 1e-12;

/// Bulk-modulus liquid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidEos {
    /// Reference density (kg/m³).
    pub rho0: f64,
    /// Reference pressure (Pa).
    pub p0: f64,
    /// Reference temperature (K).
    pub t0: f64,
    /// Bulk modulus (Pa).
    pub bulk_modulus: f64,
    /// Signed thermal expansion coefficient (1/K). Negative values make the
    /// density fall with temperature.
    pub alpha: f64,
}

impl LiquidEos {
    pub fn new(rho0: f64, p0: f64, t0: f64, bulk_modulus: f64, alpha: f64) -> Result<Self> {
        let eos = LiquidEos {
            rho0,
            p0,
            t0,
            bulk_modulus,
            alpha,
        };
        eos.validate()?;
        Ok(eos)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(Error::Domain(format!("liquid rho0 must be > 0, got {}", self.rho0)));
        }
        if !(self.bulk_modulus > 0.0) {
            return Err(Error::Domain(format!(
                "bulk modulus must be > 0, got {}",
                self.bulk_modulus
            )));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::Domain(format!("liquid t0 must be > 0, got {}", self.t0)));
        }
        if !(self.p0 >= 0.0) {
            return Err(Error::Domain(format!("liquid p0 must be >= 0, got {}", self.p0)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Domain("thermal expansion coefficient must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    fn density_raw(&self, p: f64, t: f64) -> f64 {
        self.rho0 * (1.0 + (p - self.p0) / self.bulk_modulus + self.alpha * (t - self.t0))
    }
}

/// Selects how the gas compressibility factor is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    Ideal,
    Correlated,
}

/// Real-gas equation of state `P = rho R Z T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasEos {
    /// Specific gas constant (J/(kg K)).
    pub gas_constant: f64,
    /// Temperature exponent of the Z correlation.
    pub exponent: f64,
    pub z_mode: ZMode,
    /// Calibration constant of the correlation, in Pa⁻¹ K^exponent.
    pub k: f64,
}

impl GasEos {
    pub fn ideal(gas_constant: f64) -> Result<Self> {
        let eos = GasEos {
            gas_constant,
            exponent: 1.0,
            z_mode: ZMode::Ideal,
            k: 0.0,
        };
        eos.validate()?;
        Ok(eos)
    }

    pub fn correlated(gas_constant: f64, exponent: f64, k: f64) -> Result<Self> {
        let eos = GasEos {
            gas_constant,
            exponent,
            z_mode: ZMode::Correlated,
            k,
        };
        eos.validate()?;
        Ok(eos)
    }

    /// Builds a correlated gas whose Z equals `z_ref` at (`p_ref`, `t_ref`).
    pub fn calibrated(gas_constant: f64, exponent: f64, z_ref: f64, p_ref: f64, t_ref: f64) -> Result<Self> {
        if !(z_ref > 0.0 && z_ref <= 1.0) {
            return Err(Error::Domain(format!("reference Z must lie in (0, 1], got {z_ref}")));
        }
        if !(p_ref > 0.0 && t_ref > 0.0) {
            return Err(Error::Domain("reference pressure and temperature must be > 0".into()));
        }
        let k = (1.0 / z_ref - 1.0) * t_ref.powf(exponent) / p_ref;
        Self::correlated(gas_constant, exponent, k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gas_constant > 0.0) {
            return Err(Error::Domain(format!(
                "gas constant must be > 0, got {}",
                self.gas_constant
            )));
        }
        if !(self.exponent > 0.0) {
            return Err(Error::Domain(format!("Z exponent must be > 0, got {}", self.exponent)));
        }
        if !(self.k.is_finite()) {
            return Err(Error::Domain("Z calibration constant must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    fn z_term(&self, p: f64, t: f64) -> f64 {
        match self.z_mode {
            ZMode::Ideal => 0.0,
            ZMode::Correlated => self.k * p / t.powf(self.exponent),
        }
    }

    /// Compressibility factor at (`p`, `t`).
    #[inline]
    pub fn compressibility_z(&self, p: f64, t: f64) -> f64 {
        1.0 / (1.0 + self.z_term(p, t))
    }

    #[inline]
    fn density_raw(&self, p: f64, t: f64) -> f64 {
        p * (1.0 + self.z_term(p, t)) / (self.gas_constant * t)
    }
}

/// Free-function form of [`GasEos::compressibility_z`].
pub fn compressibility_z(gas: &GasEos, p: f64, t: f64) -> f64 {
    gas.compressibility_z(p, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Eos {
    Liquid(LiquidEos),
    Gas(GasEos),
}

/// Critical point used to reject near-critical operation at configuration time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub pressure: f64,
    pub temperature: f64,
}

impl CriticalPoint {
    /// Reduced temperature within 5 % and reduced pressure within 20 % of unity.
    pub fn is_near(&self, p: f64, t: f64) -> bool {
        let tr = t / self.temperature;
        let pr = p / self.pressure;
        (tr - 1.0).abs() < 0.05 && (pr - 1.0).abs() < 0.2
    }
}

/// A transported fluid: equation of state plus thermal and acoustic properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidModel {
    pub eos: Eos,
    /// Specific heat (J/(kg K)).
    pub specific_heat: f64,
    /// Negative-pressure-wave propagation speed (m/s).
    pub sound_speed_hint: f64,
    pub critical: Option<CriticalPoint>,
}

impl FluidModel {
    pub fn new(eos: Eos, specific_heat: f64, sound_speed_hint: f64) -> Result<Self> {
        let fluid = FluidModel {
            eos,
            specific_heat,
            sound_speed_hint,
            critical: None,
        };
        fluid.validate()?;
        Ok(fluid)
    }

    pub fn with_critical_point(mut self, critical: CriticalPoint) -> Self {
        self.critical = Some(critical);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.eos {
            Eos::Liquid(l) => l.validate()?,
            Eos::Gas(g) => g.validate()?,
        }
        if !(self.specific_heat > 0.0) {
            return Err(Error::Domain(format!(
                "specific heat must be > 0, got {}",
                self.specific_heat
            )));
        }
        if !(self.sound_speed_hint > 0.0) {
            return Err(Error::Domain(format!(
                "sound speed must be > 0, got {}",
                self.sound_speed_hint
            )));
        }
        if let Some(c) = &self.critical {
            if !(c.pressure > 0.0 && c.temperature > 0.0) {
                return Err(Error::Domain("critical point must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn is_gas(&self) -> bool {
        matches!(self.eos, Eos::Gas(_))
    }

    /// Rejects an operating point close to the fluid's critical point.
    pub fn check_operating_point(&self, p: f64, t: f64) -> Result<()> {
        if let Some(c) = &self.critical {
            if c.is_near(p, t) {
                return Err(Error::Domain(format!(
                    "operating point P = {p:.4e} Pa, T = {t:.2} K is near the critical point \
                     (Pc = {:.4e} Pa, Tc = {:.2} K)",
                    c.pressure, c.temperature
                )));
            }
        }
        Ok(())
    }

    /// Density without domain checks; the solver validates states separately.
    #[inline]
    pub fn density_unchecked(&self, p: f64, t: f64) -> f64 {
        match &self.eos {
            Eos::Liquid(l) => l.density_raw(p, t),
            Eos::Gas(g) => g.density_raw(p, t),
        }
    }

    pub fn density(&self, p: f64, t: f64) -> Result<f64> {
        if !(p >= 0.0) || !(t > 0.0) {
            return Err(Error::Domain(format!(
                "density requires P >= 0 and T > 0, got P = {p}, T = {t}"
            )));
        }
        let rho = self.density_unchecked(p, t);
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("non-positive density {rho} at P = {p}, T = {t}")));
        }
        Ok(rho)
    }

    pub fn pressure_from_density(&self, rho: f64, t: f64) -> Result<f64> {
        if !(rho > 0.0) || !(t > 0.0) {
            return Err(Error::Domain(format!(
                "pressure_from_density requires rho > 0 and T > 0, got rho = {rho}, T = {t}"
            )));
        }
        let p = match &self.eos {
            Eos::Liquid(l) => l.p0 + l.bulk_modulus * (rho / l.rho0 - 1.0 - l.alpha * (t - l.t0)),
            Eos::Gas(g) => invert_gas(g, rho, t)?,
        };
        if !(p >= 0.0) {
            return Err(Error::Domain(format!(
                "density {rho} at T = {t} implies negative pressure {p}"
            )));
        }
        Ok(p)
    }

    /// Partial derivative of pressure with respect to temperature at
    /// constant density (Pa/K).
    pub fn dp_dt_at_constant_density(&self, p: f64, t: f64) -> f64 {
        match &self.eos {
            Eos::Liquid(l) => -l.alpha * l.bulk_modulus,
            Eos::Gas(g) => match g.z_mode {
                ZMode::Ideal => p / t,
                ZMode::Correlated => {
                    let ty = t.powf(g.exponent);
                    let rho = g.density_raw(p, t);
                    (rho * g.gas_constant + g.exponent * g.k * p * p / (ty * t)) / (1.0 + 2.0 * g.k * p / ty)
                }
            },
        }
    }
}

/// Solves `rho(P, T) = rho` for a correlated gas by damped Newton iteration.
fn invert_gas(g: &GasEos, rho: f64, t: f64) -> Result<f64> {
    let mut p = rho * g.gas_constant * t;
    if g.z_mode == ZMode::Ideal {
        return Ok(p);
    }
    let ty = t.powf(g.exponent);
    let rt = g.gas_constant * t;
    let mut history = Vec::new();
    for _ in 0..GAS_INVERSION_MAX_ITER {
        let f = p * (1.0 + g.k * p / ty) / rt - rho;
        let df = (1.0 + 2.0 * g.k * p / ty) / rt;
        let rel = (f / rho).abs();
        history.push(rel);
        if rel < GAS_INVERSION_RTOL {
            return Ok(p);
        }
        let mut step = -f / df;
        while p + step <= 0.0 {
            step *= 0.5;
        }
        p += step;
    }
    Err(Error::NonConvergence {
        method: "gas density inversion",
        iterations: GAS_INVERSION_MAX_ITER,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn water(p0: f64) -> FluidModel {
        let eos = LiquidEos::new(1000.0, p0, 288.15, 2e9, -2e-4).unwrap();
        FluidModel::new(Eos::Liquid(eos), 4180.0, 1414.0).unwrap()
    }

    fn gas(mode: ZMode) -> FluidModel {
        let eos = match mode {
            ZMode::Ideal => GasEos::ideal(500.0).unwrap(),
            ZMode::Correlated => GasEos::calibrated(500.0, 1.5, 0.9, 5e6, 300.0).unwrap(),
        };
        FluidModel::new(Eos::Gas(eos), 2200.0, 400.0).unwrap()
    }

    #[test]
    fn liquid_reference_state_is_identity() {
        let f = water(1e5);
        assert_eq!(f.density(1e5, 288.15).unwrap(), 1000.0);
    }

    #[test]
    fn liquid_compression() {
        let f = water(0.0);
        assert_relative_eq!(f.density(2e7, 288.15).unwrap(), 1010.0, max_relative = 1e-14);
    }

    #[test]
    fn ideal_gas_density_and_inverse() {
        let f = gas(ZMode::Ideal);
        assert_relative_eq!(f.density(5e6, 300.0).unwrap(), 33.333_333_333, max_relative = 1e-9);
        assert_relative_eq!(
            f.pressure_from_density(100.0 / 3.0, 300.0).unwrap(),
            5e6,
            max_relative = 1e-12
        );
    }

    #[test]
    fn z_examples() {
        let ideal = GasEos::ideal(500.0).unwrap();
        assert_eq!(ideal.compressibility_z(1e7, 300.0), 1.0);
        let corr = GasEos::correlated(500.0, 1.0, 1.0).unwrap();
        assert_eq!(corr.compressibility_z(0.0, 250.0), 1.0);
        assert_relative_eq!(compressibility_z(&corr, 30.0, 300.0), 1.0 / 1.1, max_relative = 1e-14);
    }

    #[test]
    fn calibrated_gas_hits_reference_z() {
        let g = GasEos::calibrated(500.0, 1.5, 0.9, 5e6, 300.0).unwrap();
        assert_relative_eq!(g.compressibility_z(5e6, 300.0), 0.9, max_relative = 1e-14);
    }

    #[test]
    fn liquid_roundtrip_at_reference() {
        let f = water(1e5);
        assert_relative_eq!(
            f.pressure_from_density(1000.0, 288.15).unwrap(),
            1e5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_bad_parameters_and_inputs() {
        assert!(LiquidEos::new(0.0, 0.0, 300.0, 2e9, 0.0).is_err());
        assert!(LiquidEos::new(1000.0, 0.0, 300.0, -1.0, 0.0).is_err());
        assert!(GasEos::correlated(500.0, 0.0, 1.0).is_err());
        let f = water(1e5);
        assert!(f.density(-1.0, 300.0).is_err());
        assert!(f.density(1e5, 0.0).is_err());
        // alpha pushes density negative at absurd temperature
        let hot = FluidModel::new(
            Eos::Liquid(LiquidEos::new(1000.0, 0.0, 300.0, 2e9, -2e-3).unwrap()),
            4180.0,
            1400.0,
        )
        .unwrap();
        assert!(matches!(hot.density(0.0, 900.0), Err(Error::Domain(_))));
    }

    #[test]
    fn near_critical_operation_is_rejected() {
        let f = gas(ZMode::Ideal).with_critical_point(CriticalPoint {
            pressure: 4.6e6,
            temperature: 190.6,
        });
        assert!(f.check_operating_point(4.5e6, 192.0).is_err());
        assert!(f.check_operating_point(4.5e6, 288.0).is_ok());
    }

    #[test]
    fn liquid_pressure_derivative_matches_finite_difference() {
        let f = water(1e5);
        for &p in &[1e5, 1e6, 5e6, 2e7] {
            let h = 10.0;
            let fd = (f.density(p + h, 300.0).unwrap() - f.density(p - h, 300.0).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, 1000.0 / 2e9, max_relative = 1e-6);
        }
    }

    #[test]
    fn dp_dt_matches_finite_difference_of_inverse() {
        for f in [water(1e5), gas(ZMode::Ideal), gas(ZMode::Correlated)] {
            let (p, t) = (3e6, 290.0);
            let rho = f.density(p, t).unwrap();
            let h = 1e-3;
            let fd = (f.pressure_from_density(rho, t + h).unwrap() - f.pressure_from_density(rho, t - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(f.dp_dt_at_constant_density(p, t), fd, max_relative = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn density_increases_with_pressure(p in 1e4f64..2e7, dp in 1.0f64..1e6, t in 250.0f64..350.0) {
            for f in [water(1e5), gas(ZMode::Ideal), gas(ZMode::Correlated)] {
                prop_assert!(f.density(p + dp, t).unwrap() > f.density(p, t).unwrap());
            }
        }

        #[test]
        fn density_roundtrip(p in 1e4f64..2e7, t in 250.0f64..350.0) {
            for f in [water(1e5), gas(ZMode::Ideal), gas(ZMode::Correlated)] {
                let rho = f.density(p, t).unwrap();
                let p2 = f.pressure_from_density(rho, t).unwrap();
                let rho2 = f.density(p2, t).unwrap();
                prop_assert!(((rho2 - rho) / rho).abs() < 1e-10);
            }
        }

        #[test]
        fn z_bounded_and_tends_to_one(p in 0.0f64..3e7, t in 200.0f64..400.0, k in 0.0f64..1e-3, y in 0.1f64..3.0) {
            let g = GasEos::correlated(500.0, y, k).unwrap();
            let z = g.compressibility_z(p, t);
            prop_assert!(z > 0.0 && z <= 1.0);
            let z_small = g.compressibility_z(p * 1e-12, t);
            prop_assert!((1.0 - z_small) <= (1.0 - z) + 1e-15);
            prop_assert!(1.0 - z_small < 1e-6);
        }
    }
}
