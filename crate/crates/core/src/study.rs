//! Dispatch studies: per-hour turbine profiles, single-interval solves with
//! the uniform comparator, and the day report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::{fit_demand_line, DemandLine, FarmReactiveModel, FrequencyBand, LINE_FIT_SAMPLES};
use crate::error::{Error, Result};
use crate::farm::Farm;
use crate::opf::{build_opf, frequency_search, OpfProblem};
use crate::powerflow::{ac_power_flow, baseline_uniform};
use crate::solver::{SolveStatus, SolverSettings};

/// Loss reduction reported for the original farm, shown for context only.
pub const REFERENCE_REDUCTION: f64 = 0.253;
/// Loading window over which the summary statistics are taken.
pub const SUMMARY_LOADING: (f64, f64) = (0.5, 0.7);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub hour: u32,
    /// Per-turbine output in MW, in the farm's turbine order.
    pub p_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayProfile {
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    hour: u32,
    turbine_id: String,
    p_mw: f64,
}

impl DayProfile {
    /// Parses `hour,turbine_id,p_mw` rows; every hour must list every turbine
    /// of `farm` exactly once.
    pub fn from_csv(text: &str, farm: &Farm) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Profile(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["hour", "turbine_id", "p_mw"] {
            return Err(Error::Profile(format!(
                "expected header hour,turbine_id,p_mw, got {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut hours: BTreeMap<u32, Vec<Option<f64>>> = BTreeMap::new();
        for (k, row) in reader.deserialize::<ProfileRow>().enumerate() {
            let row = row.map_err(|e| Error::Profile(format!("row {}: {e}", k + 2)))?;
            let t = farm
                .turbine_index(&row.turbine_id)
                .ok_or_else(|| Error::Profile(format!("row {}: unknown turbine \"{}\"", k + 2, row.turbine_id)))?;
            if !(row.p_mw >= 0.0) || !row.p_mw.is_finite() {
                return Err(Error::Profile(format!("row {}: p_mw must be a nonnegative number", k + 2)));
            }
            let slot = &mut hours.entry(row.hour).or_insert_with(|| vec![None; farm.n_wt()])[t];
            if slot.is_some() {
                return Err(Error::Profile(format!("hour {} lists turbine \"{}\" twice", row.hour, row.turbine_id)));
            }
            *slot = Some(row.p_mw);
        }
        if hours.is_empty() {
            return Err(Error::Profile("profile has no rows".into()));
        }
        let mut intervals = Vec::with_capacity(hours.len());
        for (hour, slots) in hours {
            let mut p_mw = Vec::with_capacity(slots.len());
            for (t, v) in slots.into_iter().enumerate() {
                p_mw.push(v.ok_or_else(|| {
                    Error::Profile(format!("hour {hour} is missing turbine \"{}\"", farm.turbine_id(t)))
                })?);
            }
            intervals.push(Interval { hour, p_mw });
        }
        Ok(Self { intervals })
    }

    pub fn horizon(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval(&self, hour: u32) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.hour == hour)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyOptions {
    pub band: FrequencyBand,
    pub regularize: bool,
    pub solver: SolverSettings,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { band: FrequencyBand::default(), regularize: false, solver: SolverSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalStatus {
    Converged,
    OpfFailed,
    PowerFlowFailed,
    BaselineFailed,
    Error,
}

/// One hour of the study. Losses in MW, reactive power in MVAr.
#[derive(Debug, Clone, Serialize)]
pub struct IntervalRecord {
    pub hour: u32,
    pub p_total_mw: f64,
    pub loading: f64,
    pub status: IntervalStatus,
    pub converged_both: bool,
    pub message: Option<String>,
    pub solver_status: Option<SolveStatus>,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub demand_line: Option<DemandLine>,
    pub omega_star: Option<f64>,
    pub q_turbine_mvar: Vec<f64>,
    pub objective_mw: Option<f64>,
    pub optimized_losses_mw: Option<f64>,
    pub optimized_ac_losses_mw: Option<f64>,
    pub baseline_losses_mw: Option<f64>,
    pub baseline_q_mvar: Option<f64>,
    /// Optimized over baseline losses.
    pub loss_ratio: Option<f64>,
    pub loss_reduction: Option<f64>,
    pub rank1_residual: Option<f64>,
    pub max_cone_slack: Option<f64>,
    pub reactive_imbalance_mvar: Option<f64>,
    pub dru_blocked: Option<bool>,
    pub frequency_evaluations: usize,
}

pub struct IntervalOutcome {
    pub record: IntervalRecord,
    /// Text form of the final relaxation, when it was built.
    pub program: Option<String>,
}

fn empty_record(hour: u32, p_total_mw: f64, loading: f64, opts: &StudyOptions) -> IntervalRecord {
    IntervalRecord {
        hour,
        p_total_mw,
        loading,
        status: IntervalStatus::Error,
        converged_both: false,
        message: None,
        solver_status: None,
        feas_tol: opts.solver.feas_tol,
        gap_tol: opts.solver.gap_tol,
        demand_line: None,
        omega_star: None,
        q_turbine_mvar: Vec::new(),
        objective_mw: None,
        optimized_losses_mw: None,
        optimized_ac_losses_mw: None,
        baseline_losses_mw: None,
        baseline_q_mvar: None,
        loss_ratio: None,
        loss_reduction: None,
        rank1_residual: None,
        max_cone_slack: None,
        reactive_imbalance_mvar: None,
        dru_blocked: None,
        frequency_evaluations: 0,
    }
}

/// Fits the demand line, optimizes, checks with the power flow and runs the
/// uniform comparator. Failures are recorded, not returned.
pub fn solve_interval(farm: &Farm, model: &FarmReactiveModel, interval: &Interval, opts: &StudyOptions) -> IntervalOutcome {
    let s_base = farm.network.base.s_base_mva;
    let p: Vec<f64> = interval.p_mw.iter().map(|v| v / s_base).collect();
    let p_total_mw: f64 = interval.p_mw.iter().sum();
    let loading = p_total_mw / (farm.p_rated() * s_base);
    let mut rec = empty_record(interval.hour, p_total_mw, loading, opts);
    let mut program = None;
    let fail = |mut rec: IntervalRecord, status, e: Error| {
        rec.status = status;
        rec.message = Some(e.to_string());
        rec
    };

    let band = opts.band;
    let line = match fit_demand_line(p.iter().sum(), (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, model) {
        Ok(l) => l,
        Err(e) => return IntervalOutcome { record: fail(rec, IntervalStatus::Error, e), program },
    };
    rec.demand_line = Some(line);

    let baseline = baseline_uniform(farm, &p, model, band.omega_0);
    match &baseline {
        Ok(b) => {
            rec.baseline_losses_mw = Some(b.power_flow.losses_total * s_base);
            rec.baseline_q_mvar = Some(b.q_uniform * s_base);
        }
        Err(e) => rec.message = Some(format!("baseline: {e}")),
    }

    let problem = OpfProblem { farm, p: p.clone(), demand_line: line, band, regularize: opts.regularize };
    let dispatch = match frequency_search(&problem, &opts.solver) {
        Ok(d) => d,
        Err(e) => return IntervalOutcome { record: fail(rec, IntervalStatus::OpfFailed, e), program },
    };
    let sol = &dispatch.run.solution;
    rec.frequency_evaluations = dispatch.evaluations.len();
    rec.solver_status = Some(sol.status);
    if let Ok((prog, _)) = build_opf(&problem, sol.options) {
        program = Some(prog.to_text());
    }
    if !sol.status.is_optimal() {
        rec.status = IntervalStatus::OpfFailed;
        rec.message = Some(format!("relaxation not solved: {:?}", sol.status));
        return IntervalOutcome { record: rec, program };
    }
    rec.omega_star = Some(sol.omega_star);
    rec.q_turbine_mvar = sol.q_turbine.iter().map(|q| q * s_base).collect();
    rec.objective_mw = Some(sol.losses_total * s_base);
    rec.rank1_residual = Some(sol.rank1_residual);
    rec.max_cone_slack = sol.cone_residuals.iter().copied().reduce(f64::max);

    let pf = match ac_power_flow(farm, &p, &sol.q_turbine, sol.omega_star) {
        Ok(pf) => pf,
        Err(e) => return IntervalOutcome { record: fail(rec, IntervalStatus::PowerFlowFailed, e), program },
    };
    rec.optimized_losses_mw = Some(pf.losses_total * s_base);
    rec.optimized_ac_losses_mw = Some(pf.ac_losses * s_base);
    rec.reactive_imbalance_mvar = Some(pf.q_imbalance * s_base);
    rec.dru_blocked = Some(pf.dru_blocked);
    if !pf.converged {
        rec.status = IntervalStatus::PowerFlowFailed;
        rec.message = Some("power flow did not converge".into());
        return IntervalOutcome { record: rec, program };
    }
    match baseline {
        Ok(b) if b.power_flow.converged => {
            let base = b.power_flow.losses_total;
            if base > 0.0 {
                rec.loss_ratio = Some(pf.losses_total / base);
                rec.loss_reduction = Some(1.0 - pf.losses_total / base);
            }
            rec.status = IntervalStatus::Converged;
            rec.converged_both = true;
        }
        _ => rec.status = IntervalStatus::BaselineFailed,
    }
    IntervalOutcome { record: rec, program }
}

#[derive(Debug, Clone, Serialize)]
pub struct DaySummary {
    pub intervals: usize,
    pub converged_both: usize,
    pub summary_window: (f64, f64),
    pub window_intervals: usize,
    pub mean_loss_reduction: Option<f64>,
    pub max_loss_reduction: Option<f64>,
    pub min_loss_reduction: Option<f64>,
    pub reference_loss_reduction: f64,
    pub omega_range: Option<(f64, f64)>,
    pub band: FrequencyBand,
    pub omega_within_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DayReport {
    pub options: StudyOptions,
    pub turbine_ids: Vec<String>,
    pub intervals: Vec<IntervalRecord>,
    pub summary: DaySummary,
}

pub fn summarize(records: &[IntervalRecord], band: FrequencyBand) -> DaySummary {
    let (lo, hi) = SUMMARY_LOADING;
    let window: Vec<f64> = records
        .iter()
        .filter(|r| r.converged_both && r.loading >= lo && r.loading <= hi)
        .filter_map(|r| r.loss_reduction)
        .collect();
    let omegas: Vec<f64> = records.iter().filter(|r| r.converged_both).filter_map(|r| r.omega_star).collect();
    let omega_range = if omegas.is_empty() {
        None
    } else {
        Some((omegas.iter().copied().fold(f64::INFINITY, f64::min), omegas.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
    };
    let tol = 1e-9;
    DaySummary {
        intervals: records.len(),
        converged_both: records.iter().filter(|r| r.converged_both).count(),
        summary_window: SUMMARY_LOADING,
        window_intervals: window.len(),
        mean_loss_reduction: (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64),
        max_loss_reduction: window.iter().copied().reduce(f64::max),
        min_loss_reduction: window.iter().copied().reduce(f64::min),
        reference_loss_reduction: REFERENCE_REDUCTION,
        omega_range,
        band,
        omega_within_band: omegas.iter().all(|&w| w >= band.omega_min_h - tol && w <= band.omega_max_h + tol),
    }
}

/// Solves every interval on a pool of `jobs` workers (all cores when
/// `None`); records come back in profile order.
pub fn run_day(
    farm: &Farm,
    profile: &DayProfile,
    opts: &StudyOptions,
    jobs: Option<usize>,
) -> Result<(DayReport, Vec<Option<String>>)> {
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let outcomes: Vec<IntervalOutcome> =
        pool.install(|| profile.intervals.par_iter().map(|i| solve_interval(farm, &model, i, opts)).collect());
    let (records, programs): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.record, o.program)).unzip();
    let report = DayReport {
        options: *opts,
        turbine_ids: (0..farm.n_wt()).map(|t| farm.turbine_id(t).to_string()).collect(),
        summary: summarize(&records, opts.band),
        intervals: records,
    };
    Ok((report, programs))
}
