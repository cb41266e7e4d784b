//! Uncontrolled six-pulse rectifier station.
//!
//! Per-unit convention on the DC side: the DC voltage base is the total
//! no-load DC voltage of all series bridges at nominal AC voltage, so that
//!
//! ```text
//! v_d    = u - omega * l_c * i_d
//! cos mu = 1 - 2 * omega * l_c * i_d / u
//! i_d    = (v_d - v_dc_onshore) / r_dc
//! ```
//!
//! which is the classical overlap relation `v_d = v_d0 (1 + cos mu) / 2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DruStation {
    pub bus: usize,
    pub n_bridge: u32,
    /// Commutation inductance, DC per-unit (see module docs).
    pub l_c: f64,
    pub r_dc: f64,
    pub v_dc_onshore: f64,
    /// Nominal line-to-line RMS valve-winding voltage, kept for the DC base.
    pub v_valve_kv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DruOperatingPoint {
    pub mu: f64,
    pub phi: f64,
    pub i_d: f64,
    pub v_d: f64,
    /// AC-side active power, `v_d * i_d`.
    pub p: f64,
    pub q_dr: f64,
}

impl DruOperatingPoint {
    pub fn blocked(v_d: f64) -> Self {
        Self { mu: 0.0, phi: 0.0, i_d: 0.0, v_d, p: 0.0, q_dr: 0.0 }
    }

    pub fn is_blocked(&self) -> bool {
        self.i_d == 0.0
    }

    /// Power reaching the onshore terminal.
    pub fn p_onshore(&self, dru: &DruStation) -> f64 {
        dru.v_dc_onshore * self.i_d
    }

    pub fn dc_cable_loss(&self, dru: &DruStation) -> f64 {
        dru.r_dc * self.i_d * self.i_d
    }
}

impl DruStation {
    pub fn new(bus: usize, n_bridge: u32, l_c: f64, r_dc: f64, v_dc_onshore: f64, v_valve_kv: f64) -> Result<Self> {
        if n_bridge < 1 || !(l_c > 0.0) || !(r_dc >= 0.0) || !(v_dc_onshore > 0.0) || !(v_valve_kv > 0.0) {
            return Err(Error::InvalidParameter(
                "rectifier needs n_bridge >= 1, l_c > 0, r_dc >= 0, v_dc_onshore > 0".into(),
            ));
        }
        Ok(Self { bus, n_bridge, l_c, r_dc, v_dc_onshore, v_valve_kv })
    }

    /// AC voltage below which the diodes stay blocked.
    pub fn conduction_threshold(&self) -> f64 {
        self.v_dc_onshore
    }

    /// DC current that delivers AC-side power `p` into the stiff onshore bus.
    pub fn dc_current_for_power(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if self.r_dc == 0.0 {
            return p / self.v_dc_onshore;
        }
        // r i^2 + v i - p = 0, rationalized to avoid cancellation
        let v = self.v_dc_onshore;
        2.0 * p / (v + (v * v + 4.0 * self.r_dc * p).sqrt())
    }

    fn point(&self, u: f64, omega: f64, i_d: f64) -> Result<DruOperatingPoint> {
        let v_d = self.v_dc_onshore + self.r_dc * i_d;
        if i_d == 0.0 {
            return Ok(DruOperatingPoint::blocked(v_d));
        }
        let cos_mu = 1.0 - 2.0 * omega * self.l_c * i_d / u;
        let mu = cos_mu.clamp(-1.0, 1.0).acos();
        if cos_mu <= 0.5 {
            return Err(Error::OverlapLimit { mu });
        }
        let phi = dru_power_factor(mu)?;
        let p = v_d * i_d;
        Ok(DruOperatingPoint { mu, phi, i_d, v_d, p, q_dr: dru_reactive(p, phi) })
    }

    /// Operating point for a given AC voltage: the diode conducts only when
    /// the AC-side DC voltage exceeds the onshore voltage.
    pub fn dc_link(&self, u: f64, omega: f64) -> Result<DruOperatingPoint> {
        if !(u > 0.0) || !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!("rectifier needs u > 0 and omega > 0 (u={u}, omega={omega})")));
        }
        let i_d = ((u - self.v_dc_onshore) / (self.r_dc + omega * self.l_c)).max(0.0);
        self.point(u, omega, i_d)
    }

    /// Operating point when the delivered power is imposed and the AC
    /// voltage is held at `u`, as in the demand curves.
    pub fn operating_point_for_power(&self, p: f64, u: f64, omega: f64) -> Result<DruOperatingPoint> {
        if !(u > 0.0) || !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!("rectifier needs u > 0 and omega > 0 (u={u}, omega={omega})")));
        }
        self.point(u, omega, self.dc_current_for_power(p))
    }

    /// AC voltage at which the rectifier absorbs `p`. Blocked stations sit
    /// at the conduction threshold.
    pub fn ac_voltage_for_power(&self, p: f64, omega: f64) -> f64 {
        let i_d = self.dc_current_for_power(p);
        self.v_dc_onshore + (self.r_dc + omega * self.l_c) * i_d
    }
}

/// Displacement angle of the rectifier for commutation overlap `mu`.
pub fn dru_power_factor(mu: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_3).contains(&mu) {
        return Err(Error::InvalidParameter(format!("commutation angle {mu} outside [0, pi/3]")));
    }
    let x = 2.0 * mu;
    let num = if x < 0.1 {
        // x - sin x without cancellation
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        x - x.sin()
    };
    let half = mu.sin();
    let den = 2.0 * half * half;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).atan())
}

pub fn dru_reactive(p_farm: f64, phi: f64) -> f64 {
    p_farm * phi.tan()
}

pub(crate) fn check_phi(phi: f64) -> Result<()> {
    if !(phi.abs() < FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!("power-factor angle {phi} must be below pi/2")));
    }
    Ok(())
}
