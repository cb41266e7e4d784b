//! Loss-minimizing dispatch as a second-order cone relaxation in
//! bus-voltage products, voltage recovery, and the outer frequency loop.
//!
//! Per branch `k = (i, j)` with series admittance `g + jb` and end shunt
//! `j omega c_half`, writing `W_ij = a + jc`:
//!
//! ```text
//! P_ij = g (W_ii - a) - b c          Q_ij = -g c - b (W_ii - a) - omega c_half W_ii
//! P_ji = g (W_jj - a) + b c          Q_ji =  g c - b (W_jj - a) - omega c_half W_jj
//! ||(2a, 2c, W_ii - W_jj)|| <= W_ii + W_jj
//! ```
//!
//! The dru-ac bus is held at the rectifier voltage `U` of the current outer
//! iterate and takes whatever the network delivers; every other bus
//! balances exactly. Shunts are evaluated at the outer iterate's frequency.

use num_complex::Complex64;
use serde::Serialize;

use crate::conic::{ConicProgram, LinExpr, Relation, Tag};
use crate::devices::{DemandLine, FrequencyBand};
use crate::error::{Error, Result};
use crate::farm::Farm;
use crate::network::{build_admittance, NetworkModel};
use crate::solver::{solve, SolveStatus, SolverSettings};

pub const REGULARIZATION_EPS: f64 = 1e-6;
const ANCHOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpfOptions {
    pub regularize: bool,
    /// Frequency at which admittances and shunts are evaluated.
    pub omega: f64,
    /// Voltage magnitude held at the dru-ac bus.
    pub u_dru: f64,
    /// Fix the frequency variable at `omega` instead of leaving it free in
    /// the band.
    pub pin_omega: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BranchVars {
    pub re_w: usize,
    pub im_w: usize,
    pub p_ij: usize,
    pub q_ij: usize,
    pub p_ji: usize,
    pub q_ji: usize,
}

/// Where each physical quantity lives in the program's variable vector.
#[derive(Debug, Clone)]
pub struct OpfFormulation {
    pub w_diag: Vec<usize>,
    pub branches: Vec<BranchVars>,
    pub q_turbine: Vec<usize>,
    pub omega: usize,
    pub reg: Option<usize>,
    pub options: OpfOptions,
}

impl OpfFormulation {
    pub fn w_offdiag(&self, x: &[f64]) -> Vec<Complex64> {
        self.branches.iter().map(|b| Complex64::new(x[b.re_w], x[b.im_w])).collect()
    }

    pub fn flows(&self, x: &[f64]) -> Vec<(Complex64, Complex64)> {
        self.branches
            .iter()
            .map(|b| (Complex64::new(x[b.p_ij], x[b.q_ij]), Complex64::new(x[b.p_ji], x[b.q_ji])))
            .collect()
    }

    pub fn losses(&self, x: &[f64]) -> f64 {
        self.branches.iter().map(|b| x[b.p_ij] + x[b.p_ji]).sum()
    }
}

/// Everything needed to set up one interval.
#[derive(Debug, Clone)]
pub struct OpfProblem<'a> {
    pub farm: &'a Farm,
    pub p: Vec<f64>,
    pub demand_line: DemandLine,
    pub band: FrequencyBand,
    pub regularize: bool,
}

pub fn build_opf(problem: &OpfProblem, options: OpfOptions) -> Result<(ConicProgram, OpfFormulation)> {
    let farm = problem.farm;
    let net = &farm.network;
    let p_total: f64 = problem.p.iter().sum();
    if problem.p.len() != farm.n_wt() {
        return Err(Error::InvalidParameter(format!(
            "expected {} turbine outputs, got {}",
            farm.n_wt(),
            problem.p.len()
        )));
    }
    if (problem.demand_line.p_anchor - p_total).abs() > ANCHOR_TOL * p_total.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "demand line anchored at {} but turbines sum to {p_total}",
            problem.demand_line.p_anchor
        )));
    }
    let root = net.dru_bus();
    let root_bus = &net.buses[root];
    if options.u_dru < root_bus.v_min || options.u_dru > root_bus.v_max {
        return Err(Error::InfeasibleBounds(format!(
            "rectifier voltage {} outside [{}, {}] at \"{}\"",
            options.u_dru, root_bus.v_min, root_bus.v_max, root_bus.id
        )));
    }
    let adm = build_admittance(net, options.omega)?;
    let filter = farm.filter_shunt();

    let mut prog = ConicProgram::new();
    let w_diag: Vec<usize> = net.buses.iter().map(|b| prog.add_var(format!("W_{}", b.id))).collect();
    let branches: Vec<BranchVars> = net
        .branches
        .iter()
        .map(|br| {
            let name = format!("{}_{}", net.buses[br.from].id, net.buses[br.to].id);
            BranchVars {
                re_w: prog.add_var(format!("ReW_{name}")),
                im_w: prog.add_var(format!("ImW_{name}")),
                p_ij: prog.add_var(format!("P_{name}")),
                q_ij: prog.add_var(format!("Q_{name}")),
                p_ji: prog.add_var(format!("Pr_{name}")),
                q_ji: prog.add_var(format!("Qr_{name}")),
            }
        })
        .collect();
    let q_turbine: Vec<usize> = farm
        .turbines
        .iter()
        .map(|t| prog.add_var(format!("Qg_{}", net.buses[t.bus].id)))
        .collect();
    let omega = prog.add_var("omega");

    // voltage magnitudes
    for (i, b) in net.buses.iter().enumerate() {
        if i == root {
            let u2 = options.u_dru * options.u_dru;
            prog.add_row(LinExpr::var(w_diag[i]), Relation::Eq, u2, Tag::VoltageBounds);
        } else {
            prog.add_range(LinExpr::var(w_diag[i]), b.v_min * b.v_min, b.v_max * b.v_max, Tag::VoltageBounds);
        }
    }

    // branch flows, relaxed rank constraint, flow limits
    for (k, (br, a)) in net.branches.iter().zip(&adm.branches).enumerate() {
        let v = branches[k];
        let (g, b) = (a.series.re, a.series.im);
        let bsh = a.shunt_half.im;
        let (wi, wj) = (w_diag[br.from], w_diag[br.to]);
        let rows = [
            LinExpr::var(v.p_ij).term(wi, -g).term(v.re_w, g).term(v.im_w, b),
            LinExpr::var(v.q_ij).term(v.im_w, g).term(wi, b + bsh).term(v.re_w, -b),
            LinExpr::var(v.p_ji).term(wj, -g).term(v.re_w, g).term(v.im_w, -b),
            LinExpr::var(v.q_ji).term(v.im_w, -g).term(wj, b + bsh).term(v.re_w, -b),
        ];
        for e in rows {
            prog.add_row(e, Relation::Eq, 0.0, Tag::BranchFlow);
        }
        prog.add_cone(
            LinExpr::var(wi).term(wj, 1.0),
            vec![
                LinExpr::constant(0.0).term(v.re_w, 2.0),
                LinExpr::constant(0.0).term(v.im_w, 2.0),
                LinExpr::var(wi).term(wj, -1.0),
            ],
            Tag::WCone,
        );
        for (pp, qq) in [(v.p_ij, v.q_ij), (v.p_ji, v.q_ji)] {
            prog.add_cone(LinExpr::constant(br.s_max), vec![LinExpr::var(pp), LinExpr::var(qq)], Tag::FlowLimit);
        }
    }

    // turbine capability
    for (t, turb) in farm.turbines.iter().enumerate() {
        let p = problem.p[t];
        if !(p >= 0.0) || p > turb.s_rating {
            return Err(Error::InfeasibleBounds(format!(
                "turbine {t}: P={p} outside [0, s_rating={}]",
                turb.s_rating
            )));
        }
        prog.add_cone(LinExpr::constant(turb.q_capability(p)), vec![LinExpr::var(q_turbine[t])], Tag::Capability);
    }

    // nodal balance away from the rectifier
    let incidence = net.incidence();
    for (i, bus) in net.buses.iter().enumerate() {
        if i == root {
            continue;
        }
        let mut p_row = LinExpr::default();
        let mut q_row = LinExpr::default();
        for &k in &incidence[i] {
            let v = branches[k];
            let (pp, qq) = if net.branches[k].from == i { (v.p_ij, v.q_ij) } else { (v.p_ji, v.q_ji) };
            p_row = p_row.term(pp, 1.0);
            q_row = q_row.term(qq, 1.0);
        }
        let mut p_inj = 0.0;
        for (t, turb) in farm.turbines.iter().enumerate() {
            if turb.bus == i {
                p_inj += problem.p[t];
                q_row = q_row.term(q_turbine[t], -1.0);
            }
        }
        let shunt = options.omega * (bus.shunt_c + filter[i]);
        q_row = q_row.term(w_diag[i], -shunt);
        prog.add_row(p_row, Relation::Eq, p_inj, Tag::NodalBalance);
        prog.add_row(q_row, Relation::Eq, 0.0, Tag::NodalBalance);
    }

    // aggregate reactive balance and frequency band
    let mut demand = LinExpr::constant(0.0).term(omega, -problem.demand_line.d1);
    for &q in &q_turbine {
        demand = demand.term(q, 1.0);
    }
    prog.add_row(demand, Relation::Eq, problem.demand_line.d2, Tag::ReactiveDemand);
    if options.pin_omega {
        if !problem.band.contains(options.omega) {
            return Err(Error::InfeasibleBounds(format!("omega {} outside the band", options.omega)));
        }
        prog.add_row(LinExpr::var(omega), Relation::Eq, options.omega, Tag::FrequencyBand);
    } else {
        prog.add_range(LinExpr::var(omega), problem.band.omega_min_h, problem.band.omega_max_h, Tag::FrequencyBand);
    }

    let mut objective = LinExpr::default();
    for v in &branches {
        objective = objective.term(v.p_ij, 1.0).term(v.p_ji, 1.0);
    }
    let reg = if problem.regularize {
        // sum Q^2 <= t  <=>  ||(2Q, t - 1)|| <= t + 1
        let t = prog.add_var("reg");
        let mut vector: Vec<LinExpr> = q_turbine.iter().map(|&q| LinExpr::constant(0.0).term(q, 2.0)).collect();
        vector.push(LinExpr::var(t).plus(-1.0));
        prog.add_cone(LinExpr::var(t).plus(1.0), vector, Tag::Regularization);
        objective = objective.term(t, REGULARIZATION_EPS);
        Some(t)
    } else {
        None
    };
    prog.objective = objective;

    Ok((prog, OpfFormulation { w_diag, branches, q_turbine, omega, reg, options }))
}

/// Bus voltages from a (near) rank-one W, angles propagated from the dru-ac
/// bus along a spanning tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub v: Vec<Complex64>,
    pub rank1_residual: f64,
}

pub fn recover_voltages(w_diag: &[f64], w_offdiag: &[Complex64], net: &NetworkModel) -> Result<Recovery> {
    if let Some(i) = w_diag.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::NonpositiveVoltage(i));
    }
    let tree = net.spanning_tree(net.dru_bus());
    let mut theta = vec![0.0; w_diag.len()];
    for &i in &tree.order {
        let Some((p, k)) = tree.parent[i] else { continue };
        let w = w_offdiag[k];
        if w.norm() == 0.0 {
            return Err(Error::DegenerateCoupling(k));
        }
        // W_ij = V_i conj(V_j): arg is theta_i - theta_j
        theta[i] = if net.branches[k].from == p { theta[p] - w.arg() } else { theta[p] + w.arg() };
    }
    let v = w_diag
        .iter()
        .zip(&theta)
        .map(|(&w, &th)| Complex64::from_polar(w.sqrt(), th))
        .collect();
    let mut rank1_residual: f64 = 0.0;
    for (k, br) in net.branches.iter().enumerate() {
        let prod = w_diag[br.from] * w_diag[br.to];
        rank1_residual = rank1_residual.max((w_offdiag[k].norm_sqr() - prod).abs() / prod);
    }
    Ok(Recovery { v, rank1_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub per_branch: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

/// Slack of the relaxed rank constraint on each branch.
pub fn relaxation_gap(w_diag: &[f64], w_offdiag: &[Complex64], net: &NetworkModel) -> GapReport {
    let per_branch: Vec<f64> = net
        .branches
        .iter()
        .zip(w_offdiag)
        .map(|(br, w)| {
            let (wi, wj) = (w_diag[br.from], w_diag[br.to]);
            let norm = (4.0 * w.norm_sqr() + (wi - wj) * (wi - wj)).sqrt();
            wi + wj - norm
        })
        .collect();
    if per_branch.is_empty() {
        return GapReport { per_branch, max: 0.0, mean: 0.0 };
    }
    let max = per_branch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = per_branch.iter().sum::<f64>() / per_branch.len() as f64;
    GapReport { per_branch, max, mean }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpfSolution {
    pub status: SolveStatus,
    pub omega_star: f64,
    pub q_turbine: Vec<f64>,
    pub w_diag: Vec<f64>,
    pub w_offdiag: Vec<Complex64>,
    pub s_flows: Vec<(Complex64, Complex64)>,
    /// Total branch loss from the flow variables.
    pub losses_total: f64,
    /// Solver objective, including any regularization term.
    pub objective: f64,
    pub cone_residuals: Vec<f64>,
    pub recovered_v: Vec<Complex64>,
    pub rank1_residual: f64,
    /// Active power arriving at the dru-ac bus.
    pub p_dru: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub max_violation: f64,
    pub options: OpfOptions,
}

/// Builds and solves one inner problem.
pub fn solve_opf(problem: &OpfProblem, options: OpfOptions, settings: &SolverSettings) -> Result<OpfSolution> {
    let (prog, form) = build_opf(problem, options)?;
    let res = solve(&prog, settings)?;
    let net = &problem.farm.network;
    let x = &res.primal;
    let w_diag: Vec<f64> = form.w_diag.iter().map(|&i| x[i]).collect();
    let w_offdiag = form.w_offdiag(x);
    let s_flows = form.flows(x);
    let root = net.dru_bus();
    let p_dru = net
        .branches
        .iter()
        .zip(&s_flows)
        .map(|(br, (a, b))| if br.from == root { -a.re } else if br.to == root { -b.re } else { 0.0 })
        .sum();
    let gap = relaxation_gap(&w_diag, &w_offdiag, net);
    let (recovered_v, rank1_residual) = match (res.status, recover_voltages(&w_diag, &w_offdiag, net)) {
        (SolveStatus::Optimal, Ok(r)) => (r.v, r.rank1_residual),
        _ => (Vec::new(), f64::NAN),
    };
    Ok(OpfSolution {
        status: res.status,
        omega_star: x[form.omega],
        q_turbine: form.q_turbine.iter().map(|&i| x[i]).collect(),
        losses_total: form.losses(x),
        objective: res.objective,
        cone_residuals: gap.per_branch,
        w_diag,
        w_offdiag,
        s_flows,
        recovered_v,
        rank1_residual,
        p_dru,
        iterations: res.iterations,
        solve_time: res.solve_time,
        max_violation: res.max_violation,
        options,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyRun {
    pub solution: OpfSolution,
    pub omega_trace: Vec<f64>,
    pub u_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn outer_loop(
    problem: &OpfProblem,
    start: (f64, f64),
    pin_omega: bool,
    tol: f64,
    max_iter: usize,
    settings: &SolverSettings,
) -> Result<FrequencyRun> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidParameter("outer iteration needs tol > 0 and max_iter >= 1".into()));
    }
    let dru = &problem.farm.dru;
    let (mut omega, mut u) = start;
    let mut omega_trace = vec![omega];
    let mut u_trace = vec![u];
    let mut last = None;
    let mut converged = false;
    for _ in 0..max_iter {
        let options = OpfOptions { regularize: problem.regularize, omega, u_dru: u, pin_omega };
        let sol = solve_opf(problem, options, settings)?;
        if !sol.status.is_optimal() {
            last = Some(sol);
            break;
        }
        let omega_next = if pin_omega { omega } else { sol.omega_star };
        let u_next = dru.ac_voltage_for_power(sol.p_dru, omega_next);
        omega_trace.push(omega_next);
        u_trace.push(u_next);
        let done = (omega_next - omega).abs() <= tol && (u_next - u).abs() <= tol;
        last = Some(sol);
        if done {
            converged = true;
            break;
        }
        omega = omega_next;
        u = u_next;
    }
    let solution = last.expect("max_iter >= 1");
    Ok(FrequencyRun { iterations: omega_trace.len() - 1, solution, omega_trace, u_trace, converged })
}

fn initial_voltage(problem: &OpfProblem, omega: f64) -> f64 {
    problem.farm.dru.ac_voltage_for_power(problem.p.iter().sum(), omega)
}

/// Outer fixed point on the frequency (admittances and shunts) and the
/// rectifier voltage, with the frequency free inside each solve. Stops when
/// both move less than `tol`.
pub fn frequency_iteration(
    problem: &OpfProblem,
    start: Option<(f64, f64)>,
    tol: f64,
    max_iter: usize,
    settings: &SolverSettings,
) -> Result<FrequencyRun> {
    let start = start.unwrap_or_else(|| {
        let w = problem.band.omega_0;
        (w, initial_voltage(problem, w))
    });
    outer_loop(problem, start, false, tol, max_iter, settings)
}

/// Relaxation at a fixed frequency, iterating only the rectifier voltage.
pub fn solve_at_frequency(
    problem: &OpfProblem,
    omega: f64,
    u_start: Option<f64>,
    tol: f64,
    max_iter: usize,
    settings: &SolverSettings,
) -> Result<FrequencyRun> {
    let u = u_start.unwrap_or_else(|| initial_voltage(problem, omega));
    outer_loop(problem, (omega, u), true, tol, max_iter, settings)
}

pub const SEARCH_SCAN_POINTS: usize = 11;
pub const SEARCH_OMEGA_TOL: f64 = 1e-7;
pub const OUTER_TOL: f64 = 1e-9;
pub const OUTER_MAX_ITER: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct DispatchRun {
    pub run: FrequencyRun,
    /// `(omega, objective)` of every frequency evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
    pub solves: usize,
}

/// Minimizes the relaxation over the band: a coarse scan of the frequency,
/// then golden-section refinement around the best scan point. Each
/// evaluation holds the frequency fixed, so admittances, shunts and the
/// aggregate reactive balance all see the same value.
pub fn frequency_search(problem: &OpfProblem, settings: &SolverSettings) -> Result<DispatchRun> {
    let band = problem.band;
    let mut evaluations = Vec::new();
    let mut solves = 0;
    let mut best: Option<FrequencyRun> = None;
    let mut last_u = None;
    let mut eval = |omega: f64, best: &mut Option<FrequencyRun>| -> Result<f64> {
        let omega = omega.clamp(band.omega_min_h, band.omega_max_h);
        let run = solve_at_frequency(problem, omega, last_u, OUTER_TOL, OUTER_MAX_ITER, settings)?;
        solves += run.iterations.max(1);
        let ok = run.solution.status.is_optimal();
        let value = if ok { run.solution.objective } else { f64::INFINITY };
        evaluations.push((omega, value));
        if ok {
            last_u = run.u_trace.last().copied();
        }
        let better = match best {
            None => true,
            Some(b) => ok && (!b.solution.status.is_optimal() || value < b.solution.objective),
        };
        if better {
            *best = Some(run);
        }
        Ok(value)
    };

    if band.width() == 0.0 {
        eval(band.omega_0, &mut best)?;
    } else {
        let grid = crate::devices::linspace(band.omega_min_h, band.omega_max_h, SEARCH_SCAN_POINTS);
        let values = grid.iter().map(|&w| eval(w, &mut best)).collect::<Result<Vec<_>>>()?;
        let (k, _) = values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if values[k].is_finite() {
            let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            let mut c = b - r * (b - a);
            let mut d = a + r * (b - a);
            let mut fc = eval(c, &mut best)?;
            let mut fd = eval(d, &mut best)?;
            while b - a > SEARCH_OMEGA_TOL {
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - r * (b - a);
                    fc = eval(c, &mut best)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + r * (b - a);
                    fd = eval(d, &mut best)?;
                }
            }
        }
    }
    let run = best.expect("at least one evaluation");
    Ok(DispatchRun { run, evaluations, solves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, BusKind, PerUnitBase};

    fn two_bus() -> NetworkModel {
        let bus = |id: &str, kind| Bus { id: id.into(), kind, level: "main".into(), v_min: 0.9, v_max: 1.1, shunt_c: 0.0 };
        NetworkModel::new(
            PerUnitBase::single_level(100.0, 66.0, 50.0),
            vec![bus("dru", BusKind::DruAc), bus("wt", BusKind::TurbineLv)],
            vec![Branch { from: 1, to: 0, r: 0.01, l: 0.05, c_half: 0.0, s_max: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn rank_one_recovery() {
        let net = two_bus();
        let v = [Complex64::from_polar(1.02, 0.0), Complex64::from_polar(0.97, 0.3)];
        let wd = [v[0].norm_sqr(), v[1].norm_sqr()];
        let wo = [v[1] * v[0].conj()];
        let r = recover_voltages(&wd, &wo, &net).unwrap();
        assert!(r.rank1_residual <= 1e-12);
        for (a, b) in r.v.iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(relaxation_gap(&wd, &wo, &net).max.abs() <= 1e-12);
    }

    #[test]
    fn degenerate_and_gap() {
        let net = two_bus();
        let zero = [Complex64::new(0.0, 0.0)];
        assert!(matches!(recover_voltages(&[1.0, 1.0], &zero, &net), Err(Error::DegenerateCoupling(0))));
        assert!(matches!(recover_voltages(&[1.0, 0.0], &zero, &net), Err(Error::NonpositiveVoltage(1))));
        let gap = relaxation_gap(&[1.0, 1.0], &zero, &net);
        assert_eq!(gap.per_branch, vec![2.0]);
    }
}
