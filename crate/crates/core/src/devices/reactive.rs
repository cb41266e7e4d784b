//! Reactive consumption of the farm's components and the aggregate demand
//! curve `q_farm(omega, p_farm)`.
//!
//! The component formulas are written in peak-amplitude quantities, where
//! three-phase power is `1.5 * u * i`. Per-unit inductances and
//! capacitances of the network map onto that frame as `1.5 * l` and
//! `c / 1.5`, which [`FarmReactiveModel`] applies once at construction.

use serde::Serialize;

use super::dru::{check_phi, dru_reactive, DruStation};
use super::TurbineUnit;
use crate::error::{Error, Result};
use crate::network::{aggregate_equivalents, NetworkModel};

pub const AMPLITUDE_POWER_FACTOR: f64 = 1.5;

/// Lower and upper edge of the normalized frequency range the demand
/// model is defined on.
pub const OMEGA_RANGE: (f64, f64) = (0.9, 1.1);

pub fn pcc_current(p_farm: f64, u_pcc: f64, phi: f64) -> Result<f64> {
    if !(u_pcc > 0.0) {
        return Err(Error::InvalidParameter(format!("u_pcc must be positive, got {u_pcc}")));
    }
    check_phi(phi)?;
    Ok(p_farm / (1.5 * u_pcc * phi.cos()))
}

/// Collection-network consumption: series inductance minus line charging.
pub fn network_reactive(p_farm: f64, u_pcc: f64, phi: f64, omega: f64, l_net: f64, c_net: f64) -> Result<f64> {
    let i_pcc = pcc_current(p_farm, u_pcc, phi)?;
    Ok(1.5 * i_pcc * i_pcc * omega * l_net - 1.5 * u_pcc * u_pcc * omega * c_net)
}

/// Leakage consumption of all turbine transformers, each carrying an equal
/// share of the PCC current.
pub fn transformer_reactive(i_pcc: f64, n_tf: f64, n_wt: usize, omega: f64, l_tf: f64) -> Result<f64> {
    if n_wt == 0 {
        return Err(Error::InvalidParameter("transformer model needs n_wt >= 1".into()));
    }
    let n = n_wt as f64;
    let i_turbine = i_pcc * n_tf / n;
    Ok(1.5 * n * i_turbine * i_turbine * omega * l_tf)
}

/// Filter capacitors generate, so this is never positive.
pub fn filter_reactive(u_pcc: f64, n_tf: f64, n_wt: usize, omega: f64, c_f: f64) -> Result<f64> {
    if !(u_pcc > 0.0) {
        return Err(Error::InvalidParameter(format!("u_pcc must be positive, got {u_pcc}")));
    }
    let u_lv = u_pcc / n_tf;
    Ok(-1.5 * u_lv * u_lv * n_wt as f64 * omega * c_f)
}

/// Anything that can report the farm's total reactive demand.
pub trait ReactiveDemand {
    fn demand(&self, omega: f64, p_farm: f64) -> Result<f64>;
}

impl<F: Fn(f64, f64) -> f64> ReactiveDemand for F {
    fn demand(&self, omega: f64, p_farm: f64) -> Result<f64> {
        Ok(self(omega, p_farm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemandBreakdown {
    pub omega: f64,
    pub p_farm: f64,
    pub q_cf: f64,
    pub q_tf: f64,
    pub q_net: f64,
    pub q_dr: f64,
    pub mu: f64,
    pub phi: f64,
}

impl DemandBreakdown {
    pub fn total(&self) -> f64 {
        self.q_cf + self.q_tf + self.q_net + self.q_dr
    }
}

/// Lumped farm model in the amplitude frame: identical turbines, lumped
/// collection network, rectifier at a held AC voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmReactiveModel {
    pub n_wt: usize,
    pub n_tf: f64,
    pub l_tf: f64,
    pub c_f: f64,
    pub l_net: f64,
    pub c_net: f64,
    pub u_pcc: f64,
    pub dru: DruStation,
}

impl FarmReactiveModel {
    /// Builds the lumped model from a radial network. Turbine parameters are
    /// averaged, which is exact for the identical turbines assumed here.
    pub fn from_parts(net: &NetworkModel, turbines: &[TurbineUnit], dru: &DruStation) -> Result<Self> {
        if turbines.is_empty() {
            return Err(Error::InvalidParameter("farm has no turbines".into()));
        }
        let (l_net, c_net) = aggregate_equivalents(net)?;
        let n = turbines.len() as f64;
        let mean = |f: fn(&TurbineUnit) -> f64| turbines.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            n_wt: turbines.len(),
            n_tf: mean(|t| t.n_tf),
            l_tf: AMPLITUDE_POWER_FACTOR * mean(|t| t.l_tf),
            c_f: mean(|t| t.c_f) / AMPLITUDE_POWER_FACTOR,
            l_net: AMPLITUDE_POWER_FACTOR * l_net,
            c_net: c_net / AMPLITUDE_POWER_FACTOR,
            u_pcc: 1.0,
            dru: dru.clone(),
        })
    }

    pub fn with_u_pcc(mut self, u_pcc: f64) -> Self {
        self.u_pcc = u_pcc;
        self
    }

    pub fn breakdown(&self, omega: f64, p_farm: f64) -> Result<DemandBreakdown> {
        let (lo, hi) = OMEGA_RANGE;
        if !(lo..=hi).contains(&omega) {
            return Err(Error::InvalidParameter(format!("omega {omega} outside [{lo}, {hi}]")));
        }
        if !(p_farm >= 0.0) {
            return Err(Error::InvalidParameter(format!("p_farm must be nonnegative, got {p_farm}")));
        }
        let op = self.dru.operating_point_for_power(p_farm, self.u_pcc, omega)?;
        let i_pcc = pcc_current(p_farm, self.u_pcc, op.phi)?;
        Ok(DemandBreakdown {
            omega,
            p_farm,
            q_cf: filter_reactive(self.u_pcc, self.n_tf, self.n_wt, omega, self.c_f)?,
            q_tf: transformer_reactive(i_pcc, self.n_tf, self.n_wt, omega, self.l_tf)?,
            q_net: network_reactive(p_farm, self.u_pcc, op.phi, omega, self.l_net, self.c_net)?,
            q_dr: dru_reactive(p_farm, op.phi),
            mu: op.mu,
            phi: op.phi,
        })
    }

    pub fn farm_demand(&self, omega: f64, p_farm: f64) -> Result<f64> {
        self.breakdown(omega, p_farm).map(|b| b.total())
    }
}

impl ReactiveDemand for FarmReactiveModel {
    fn demand(&self, omega: f64, p_farm: f64) -> Result<f64> {
        self.farm_demand(omega, p_farm)
    }
}

/// Samples the demand family on a grid; rows are `(omega, p_farm, q_farm)`.
pub fn demand_curves(model: &impl ReactiveDemand, p_levels: &[f64], omegas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::with_capacity(p_levels.len() * omegas.len());
    for &p in p_levels {
        for &w in omegas {
            rows.push((w, p, model.demand(w, p)?));
        }
    }
    Ok(rows)
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_reactive_cases() {
        assert_eq!(network_reactive(0.0, 1.0, 0.0, 1.0, 0.3, 0.0).unwrap(), 0.0);
        assert!((network_reactive(0.0, 1.0, 0.0, 1.0, 0.3, 0.1).unwrap() + 0.15).abs() < 1e-15);
        assert!(network_reactive(0.5, 1.0, std::f64::consts::FRAC_PI_2, 1.0, 0.3, 0.1).is_err());
    }

    #[test]
    fn transformer_reactive_cases() {
        assert_eq!(transformer_reactive(0.0, 1.0, 12, 1.0, 0.1).unwrap(), 0.0);
        assert!((transformer_reactive(1.0, 1.0, 1, 1.0, 0.1).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn filter_reactive_cases() {
        assert_eq!(filter_reactive(1.0, 1.0, 4, 1.0, 0.0).unwrap(), 0.0);
        assert!((filter_reactive(1.0, 1.0, 1, 1.0, 0.1).unwrap() + 0.15).abs() < 1e-15);
        let lo = filter_reactive(1.0, 1.0, 12, 0.95, 0.003).unwrap();
        let hi = filter_reactive(1.0, 1.0, 12, 1.05, 0.003).unwrap();
        assert!((lo / hi - 0.95 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn filter_reactive_scaling() {
        let base = filter_reactive(1.0, 1.0, 3, 1.0, 0.01).unwrap();
        assert!((filter_reactive(2.0, 1.0, 3, 1.0, 0.01).unwrap() - 4.0 * base).abs() < 1e-15);
        assert!((filter_reactive(1.0, 1.0, 3, 3.0, 0.01).unwrap() - 3.0 * base).abs() < 1e-15);
    }

    #[test]
    fn linspace_endpoints() {
        let xs = linspace(0.9, 1.1, 201);
        assert_eq!(xs.len(), 201);
        assert_eq!(xs[0], 0.9);
        assert!((xs[200] - 1.1).abs() < 1e-15);
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }
}
