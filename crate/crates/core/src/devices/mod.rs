//! Device models: rectifier station, turbine transformer and filter, lumped
//! collection network, droop synthesis and demand linearization.

pub mod droop;
pub mod dru;
pub mod fit;
pub mod reactive;

pub use droop::{compute_droop_params, static_operating_point, DroopParams, FrequencyBand};
pub use dru::{dru_power_factor, dru_reactive, DruOperatingPoint, DruStation};
pub use fit::{fit_demand_line, fit_quadratic_surface, DemandLine, QuadraticDemandFit, LINE_FIT_SAMPLES, RESIDUAL_SCAN_POINTS};
pub use reactive::{
    demand_curves, filter_reactive, linspace, network_reactive, pcc_current, transformer_reactive, DemandBreakdown,
    FarmReactiveModel, ReactiveDemand,
};

use crate::error::{Error, Result};

/// Grid-forming turbine with its LCL filter capacitor and step-up
/// transformer. All values per unit on the farm base.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineUnit {
    /// Index of the turbine-lv bus.
    pub bus: usize,
    pub c_f: f64,
    /// Per-unit turns ratio (1.0 when the voltage bases follow the
    /// nameplate ratio).
    pub n_tf: f64,
    pub l_tf: f64,
    pub p_max: f64,
    pub s_rating: f64,
}

impl TurbineUnit {
    pub fn new(bus: usize, c_f: f64, n_tf: f64, l_tf: f64, p_max: f64, s_rating: f64) -> Result<Self> {
        if !(c_f >= 0.0 && l_tf >= 0.0 && n_tf > 0.0 && p_max > 0.0 && p_max <= s_rating) {
            return Err(Error::InvalidParameter(
                "turbine needs c_f >= 0, l_tf >= 0, n_tf > 0, 0 < p_max <= s_rating".into(),
            ));
        }
        Ok(Self { bus, c_f, n_tf, l_tf, p_max, s_rating })
    }

    /// Reactive headroom left at active output `p`.
    pub fn q_capability(&self, p: f64) -> f64 {
        (self.s_rating * self.s_rating - p * p).max(0.0).sqrt()
    }
}
