//! Frequency-reactive droop: parameter synthesis from the demand anchors and
//! the static frequency where droop supply meets demand.

use serde::{Deserialize, Serialize};

use super::reactive::{ReactiveDemand, OMEGA_RANGE};
use crate::error::{Error, Result};

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;
const ENDPOINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub omega_min_h: f64,
    pub omega_max_h: f64,
    pub omega_0: f64,
}

impl FrequencyBand {
    pub fn new(omega_min_h: f64, omega_max_h: f64, omega_0: f64) -> Result<Self> {
        let (lo, hi) = OMEGA_RANGE;
        if !(omega_min_h <= omega_0 && omega_0 <= omega_max_h) {
            return Err(Error::InvalidParameter(format!(
                "band needs omega_min_h <= omega_0 <= omega_max_h, got ({omega_min_h}, {omega_max_h}, {omega_0})"
            )));
        }
        if omega_min_h < lo || omega_max_h > hi {
            return Err(Error::InvalidParameter(format!("band must lie within [{lo}, {hi}]")));
        }
        Ok(Self { omega_min_h, omega_max_h, omega_0 })
    }

    pub fn width(&self) -> f64 {
        self.omega_max_h - self.omega_min_h
    }

    pub fn contains(&self, omega: f64) -> bool {
        (self.omega_min_h..=self.omega_max_h).contains(&omega)
    }
}

impl Default for FrequencyBand {
    fn default() -> Self {
        Self { omega_min_h: 0.995, omega_max_h: 1.005, omega_0: 1.0 }
    }
}

/// Per-turbine droop law `q = q_0 + k_h (omega - omega_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    pub k_h: f64,
    pub q_0: f64,
}

impl DroopParams {
    pub fn per_turbine(&self, omega: f64, omega_0: f64) -> f64 {
        self.q_0 + self.k_h * (omega - omega_0)
    }
}

pub fn compute_droop_params(
    band: &FrequencyBand,
    model: &impl ReactiveDemand,
    n_wt: usize,
    p_farm_max: f64,
) -> Result<DroopParams> {
    if !(p_farm_max > 0.0) || n_wt == 0 {
        return Err(Error::InvalidParameter("droop synthesis needs p_farm_max > 0 and n_wt >= 1".into()));
    }
    let span = band.width();
    if span == 0.0 {
        return Err(Error::InvalidParameter("collapsed band: delta omega max is zero".into()));
    }
    let n = n_wt as f64;
    let q_max_h = model.demand(band.omega_max_h, p_farm_max)?;
    let q_min_h = model.demand(band.omega_min_h, 0.0)?;
    let k_h = (q_max_h - q_min_h) / (n * span);
    if k_h == 0.0 || !k_h.is_finite() {
        return Err(Error::DegenerateDroop);
    }
    let q_0 = q_max_h / n - k_h * (band.omega_max_h - band.omega_0);
    Ok(DroopParams { k_h, q_0 })
}

/// Frequency at which the farm's droop supply equals its reactive demand.
pub fn static_operating_point(
    droop: &DroopParams,
    p_farm: f64,
    model: &impl ReactiveDemand,
    n_wt: usize,
    band: &FrequencyBand,
) -> Result<f64> {
    let n = n_wt as f64;
    let residual = |w: f64| -> Result<f64> { Ok(n * droop.per_turbine(w, band.omega_0) - model.demand(w, p_farm)?) };

    let (mut lo, mut hi) = (band.omega_min_h, band.omega_max_h);
    let mut f_lo = residual(lo)?;
    if f_lo.abs() <= ENDPOINT_TOL {
        return Ok(lo);
    }
    let f_hi = residual(hi)?;
    if f_hi.abs() <= ENDPOINT_TOL {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoEquilibrium);
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = residual(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_demand_closed_form() {
        let band = FrequencyBand::new(0.95, 1.05, 1.0).unwrap();
        let droop = DroopParams { k_h: 0.4, q_0: 0.01 };
        let q_c = 0.15;
        let demand = move |_w: f64, _p: f64| q_c;
        let w = static_operating_point(&droop, 0.3, &demand, 10, &band).unwrap();
        let expected = 1.0 + (q_c / 10.0 - 0.01) / 0.4;
        assert!((w - expected).abs() < 1e-11);
    }

    #[test]
    fn flat_demand_is_degenerate() {
        let band = FrequencyBand::new(0.99, 1.01, 1.0).unwrap();
        let flat = |_w: f64, _p: f64| 0.2;
        assert!(matches!(compute_droop_params(&band, &flat, 4, 0.8), Err(Error::DegenerateDroop)));
    }

    #[test]
    fn nominal_at_upper_edge() {
        let band = FrequencyBand::new(0.99, 1.01, 1.01).unwrap();
        let demand = |w: f64, p: f64| 0.3 * p + 0.5 * (w - 1.0) - 0.05;
        let droop = compute_droop_params(&band, &demand, 4, 0.8).unwrap();
        let q_max_h = demand(1.01, 0.8);
        assert!((droop.q_0 - q_max_h / 4.0).abs() < 1e-15);
    }

    #[test]
    fn band_validation() {
        assert!(FrequencyBand::new(1.0, 0.99, 1.0).is_err());
        assert!(FrequencyBand::new(0.99, 1.01, 1.02).is_err());
        assert!(FrequencyBand::new(0.85, 1.01, 1.0).is_err());
        let band = FrequencyBand::new(0.99, 1.01, 1.0).unwrap();
        assert!(matches!(
            compute_droop_params(&FrequencyBand::new(1.0, 1.0, 1.0).unwrap(), &|_w: f64, p: f64| p, 2, 1.0),
            Err(Error::InvalidParameter(_))
        ));
        let no_root = |_w: f64, _p: f64| 100.0;
        let droop = DroopParams { k_h: 0.1, q_0: 0.0 };
        assert!(matches!(static_operating_point(&droop, 0.5, &no_root, 3, &band), Err(Error::NoEquilibrium)));
    }
}
