//! Exhaustive grid search over frequency and turbine reactive setpoints,
//! each candidate checked with the AC power flow.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::devices::{linspace, DemandLine, FrequencyBand};
use crate::error::{Error, Result};
use crate::farm::Farm;
use crate::powerflow::ac_power_flow;

pub const MAX_DIMS: usize = 3;
pub const MIN_RESOLUTION: usize = 11;
pub const DEFAULT_ROUNDS: usize = 3;
const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSettings {
    pub resolution: usize,
    /// Refinement rounds after the coarse scan, each shrinking the box 10x.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { resolution: 21, rounds: DEFAULT_ROUNDS, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub omega: f64,
    pub q_turbine: Vec<f64>,
    /// Network (branch) losses of the best candidate.
    pub losses: f64,
    pub evaluated: usize,
    pub feasible: usize,
    /// Grid spacing per axis in the last round.
    pub cell: Vec<f64>,
}

struct Candidate {
    x: Vec<f64>,
    losses: Option<f64>,
}

/// Decision axes: frequency, then the reactive setpoints of all but the last
/// turbine; the last one closes the aggregate reactive balance.
pub fn grid_search_oracle(
    farm: &Farm,
    band: &FrequencyBand,
    p: &[f64],
    demand_line: &DemandLine,
    settings: &OracleSettings,
) -> Result<OracleResult> {
    let n = farm.n_wt();
    if n == 0 {
        return Err(Error::InvalidParameter("farm has no turbines".into()));
    }
    let dims = n;
    if dims > MAX_DIMS {
        return Err(Error::OracleDimension(dims));
    }
    if settings.resolution < MIN_RESOLUTION {
        return Err(Error::InvalidParameter(format!(
            "oracle resolution must be at least {MIN_RESOLUTION}, got {}",
            settings.resolution
        )));
    }
    if p.len() != n {
        return Err(Error::InvalidParameter(format!("expected {n} turbine outputs, got {}", p.len())));
    }
    let caps: Vec<f64> = farm.turbines.iter().zip(p).map(|(t, &pi)| t.q_capability(pi)).collect();
    let full: Vec<(f64, f64)> = std::iter::once((band.omega_min_h, band.omega_max_h))
        .chain(caps[..n - 1].iter().map(|&c| (-c, c)))
        .collect();

    let evaluate = |x: &[f64]| -> Option<f64> {
        let omega = x[0];
        let mut q: Vec<f64> = x[1..].to_vec();
        let last = demand_line.eval(omega) - q.iter().sum::<f64>();
        if last.abs() > caps[n - 1] {
            return None;
        }
        q.push(last);
        let pf = ac_power_flow(farm, p, &q, omega).ok()?;
        if !pf.converged || pf.limit_violation(&farm.network) > LIMIT_TOL {
            return None;
        }
        Some(pf.ac_losses)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut bounds = full.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0;
    let mut feasible = 0;
    let mut cell = vec![0.0; dims];
    for round in 0..=settings.rounds {
        let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| linspace(lo, hi, settings.resolution)).collect();
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            cell[d] = (hi - lo) / (settings.resolution - 1) as f64;
        }
        let mut points = cartesian(&axes);
        if let Some((_, x)) = &best {
            // the incumbent stays in the pool so refinement never gets worse
            points.push(x.clone());
        }
        points.shuffle(&mut rng);
        let results: Vec<Candidate> = points
            .into_par_iter()
            .map(|x| {
                let losses = evaluate(&x);
                Candidate { x, losses }
            })
            .collect();
        evaluated += results.len();
        for c in results {
            let Some(l) = c.losses else { continue };
            feasible += 1;
            let better = match &best {
                None => true,
                Some((bl, bx)) => l < *bl || (l == *bl && lex_less(&c.x, bx)),
            };
            if better {
                best = Some((l, c.x));
            }
        }
        let Some((_, x)) = &best else {
            return Err(Error::NoFeasibleCandidate);
        };
        if round == settings.rounds {
            break;
        }
        bounds = bounds
            .iter()
            .zip(&full)
            .zip(x)
            .map(|((&(lo, hi), &(flo, fhi)), &c)| {
                let half = (hi - lo) / 20.0;
                ((c - half).max(flo), (c + half).min(fhi))
            })
            .collect();
    }
    let (losses, x) = best.ok_or(Error::NoFeasibleCandidate)?;
    let mut q_turbine = x[1..].to_vec();
    q_turbine.push(demand_line.eval(x[0]) - q_turbine.iter().sum::<f64>());
    Ok(OracleResult { omega: x[0], q_turbine, losses, evaluated, feasible, cell })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut x = prefix.clone();
                    x.push(v);
                    x
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_order_is_lexicographic() {
        let g = cartesian(&[vec![0.0, 1.0], vec![2.0, 3.0, 4.0]]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.0, 2.0]);
        assert_eq!(g[5], vec![1.0, 4.0]);
        assert!(lex_less(&g[0], &g[1]));
        assert!(!lex_less(&g[1], &g[1]));
    }
}
