//! Least-squares linearizations of the demand family.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::reactive::{linspace, ReactiveDemand};
use crate::error::{Error, Result};

pub const LINE_FIT_SAMPLES: usize = 101;
pub const RESIDUAL_SCAN_POINTS: usize = 2001;

/// Affine reactive demand `q = d1 * omega + d2` at a fixed farm output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandLine {
    pub d1: f64,
    pub d2: f64,
    pub p_anchor: f64,
    pub max_abs_err: f64,
}

impl DemandLine {
    pub fn eval(&self, omega: f64) -> f64 {
        self.d1 * omega + self.d2
    }
}

/// Coefficients of `q = k1 P^2 omega + k2 omega + k3 P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDemandFit {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub max_abs_err: f64,
}

impl QuadraticDemandFit {
    pub fn eval(&self, omega: f64, p_total: f64) -> f64 {
        self.k1 * p_total * p_total * omega + self.k2 * omega + self.k3 * p_total
    }
}

fn least_squares(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= s_max * 1e-10 {
        return Err(Error::RankDeficient);
    }
    svd.solve(&rhs, 0.0).map_err(|e| Error::Solver(e.to_string()))
}

pub fn fit_demand_line(
    p_anchor: f64,
    band: (f64, f64),
    n_samples: usize,
    model: &impl ReactiveDemand,
) -> Result<DemandLine> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("line fit needs at least two samples".into()));
    }
    let (lo, hi) = band;
    if lo == hi {
        // a single frequency pins the line to a constant
        let q = model.demand(lo, p_anchor)?;
        return Ok(DemandLine { d1: 0.0, d2: q, p_anchor, max_abs_err: 0.0 });
    }
    let omegas = linspace(lo, hi, n_samples);
    let q = omegas
        .iter()
        .map(|&w| model.demand(w, p_anchor))
        .collect::<Result<Vec<_>>>()?;
    let design = DMatrix::from_fn(n_samples, 2, |r, c| if c == 0 { omegas[r] } else { 1.0 });
    let coef = least_squares(design, DVector::from_vec(q.clone()))?;
    let (d1, d2) = (coef[0], coef[1]);

    let mut max_abs_err = omegas
        .iter()
        .zip(&q)
        .map(|(w, q)| (q - (d1 * w + d2)).abs())
        .fold(0.0, f64::max);
    for w in linspace(lo, hi, RESIDUAL_SCAN_POINTS) {
        max_abs_err = max_abs_err.max((model.demand(w, p_anchor)? - (d1 * w + d2)).abs());
    }
    Ok(DemandLine { d1, d2, p_anchor, max_abs_err })
}

pub fn fit_quadratic_surface(
    p_grid: &[f64],
    band: (f64, f64),
    model: &impl ReactiveDemand,
) -> Result<QuadraticDemandFit> {
    let mut levels = p_grid.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 3 {
        return Err(Error::RankDeficient);
    }
    let omegas = linspace(band.0, band.1, LINE_FIT_SAMPLES);
    let mut rows = Vec::with_capacity(levels.len() * omegas.len());
    for &p in &levels {
        for &w in &omegas {
            rows.push((w, p, model.demand(w, p)?));
        }
    }
    let design = DMatrix::from_fn(rows.len(), 3, |r, c| {
        let (w, p, _) = rows[r];
        match c {
            0 => p * p * w,
            1 => w,
            _ => p,
        }
    });
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let coef = least_squares(design, rhs)?;
    let mut fit = QuadraticDemandFit { k1: coef[0], k2: coef[1], k3: coef[2], max_abs_err: 0.0 };
    fit.max_abs_err = rows
        .iter()
        .map(|&(w, p, q)| (q - fit.eval(w, p)).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}
