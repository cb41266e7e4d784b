//! AC power flow used to check dispatch results, loss accounting, and the
//! uniform reactive-power comparator.
//!
//! The dru-ac bus is the reference (angle zero). Its voltage magnitude is
//! found by an outer fixed point: the rectifier characteristic maps the
//! active power arriving at the bus to the AC voltage that lets exactly that
//! power through into the stiff onshore DC bus. The reactive power the
//! network delivers to the bus is reported next to what the rectifier
//! actually draws; the difference is the reactive imbalance.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::devices::{DruOperatingPoint, ReactiveDemand};
use crate::error::{Error, Result};
use crate::farm::Farm;
use crate::network::{build_admittance, AdmittanceTable, BranchKind, NetworkModel, Topology};

pub const MISMATCH_TOL: f64 = 1e-10;
const INNER_TOL: f64 = 1e-12;
const INNER_MAX_ITER: usize = 100;
pub const OUTER_MAX_ITER: usize = 50;
const CAPABILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PfMethod {
    /// Sweep on radial networks, Newton otherwise.
    Auto,
    Sweep,
    Newton,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub cables: f64,
    pub transformers: f64,
    /// Filter capacitors are lossless in this model.
    pub filter: f64,
    pub dru_ac: f64,
    pub dc_cable: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.cables + self.transformers + self.filter + self.dru_ac + self.dc_cable
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerFlowResult {
    pub converged: bool,
    pub method: PfMethod,
    pub omega: f64,
    pub bus_v: Vec<Complex64>,
    /// `(S_from_to, S_to_from)` per branch, measured at the sending end.
    pub branch_s: Vec<(Complex64, Complex64)>,
    pub losses: LossBreakdown,
    pub losses_total: f64,
    /// Branch losses only, excluding the DC cable.
    pub ac_losses: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub max_mismatch: f64,
    pub dru: DruOperatingPoint,
    pub dru_blocked: bool,
    /// Power the network delivers into the dru-ac bus.
    pub s_dru_ac: Complex64,
    /// Rectifier draw minus delivered active power (what the reference bus
    /// has to make up; nonzero only while blocked or not yet converged).
    pub p_root_balance: f64,
    /// Delivered reactive power minus what the rectifier draws.
    pub q_imbalance: f64,
    pub p_injected: f64,
    pub p_delivered: f64,
}

impl PowerFlowResult {
    /// `P_injected + p_root_balance - P_delivered - losses_total`.
    pub fn conservation_residual(&self) -> f64 {
        self.p_injected + self.p_root_balance - self.p_delivered - self.losses_total
    }

    /// Largest excursion above a voltage or flow limit (zero when within).
    pub fn limit_violation(&self, net: &NetworkModel) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, b) in self.bus_v.iter().zip(&net.buses) {
            let m = v.norm();
            worst = worst.max(b.v_min - m).max(m - b.v_max);
        }
        for ((s_ij, s_ji), br) in self.branch_s.iter().zip(&net.branches) {
            worst = worst.max(s_ij.norm() - br.s_max).max(s_ji.norm() - br.s_max);
        }
        worst.max(0.0)
    }

    pub fn bus_csv(&self, net: &NetworkModel) -> String {
        let mut out = String::from("bus,v_re,v_im,v_mag,v_ang_deg\n");
        for (b, v) in net.buses.iter().zip(&self.bus_v) {
            let _ = writeln!(out, "{},{:.12},{:.12},{:.12},{:.9}", b.id, v.re, v.im, v.norm(), v.arg().to_degrees());
        }
        out
    }

    pub fn branch_csv(&self, net: &NetworkModel) -> String {
        let mut out = String::from("from,to,p_from,q_from,p_to,q_to,loss\n");
        for (br, (a, b)) in net.branches.iter().zip(&self.branch_s) {
            let _ = writeln!(
                out,
                "{},{},{:.12},{:.12},{:.12},{:.12},{:.12}",
                net.buses[br.from].id,
                net.buses[br.to].id,
                a.re,
                a.im,
                b.re,
                b.im,
                a.re + b.re
            );
        }
        out
    }

    pub fn loss_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "category,loss\ncables,{:.12}\ntransformers,{:.12}\nfilter,{:.12}\ndru_ac,{:.12}\ndc_cable,{:.12}\ntotal,{:.12}\n",
            l.cables, l.transformers, l.filter, l.dru_ac, l.dc_cable, self.losses_total
        )
    }
}

/// Per-category losses of a solved state.
pub fn loss_breakdown(pf: &PowerFlowResult, farm: &Farm) -> LossBreakdown {
    let net = &farm.network;
    let mut out = LossBreakdown::default();
    for (k, (a, b)) in pf.branch_s.iter().enumerate() {
        let loss = a.re + b.re;
        match net.branch_kind(k) {
            BranchKind::Cable => out.cables += loss,
            BranchKind::TurbineTransformer => out.transformers += loss,
            BranchKind::DruLink => out.dru_ac += loss,
        }
    }
    out.dc_cable = pf.dru.dc_cable_loss(&farm.dru);
    out
}

struct Inner {
    v: Vec<Complex64>,
    iterations: usize,
    mismatch: f64,
}

/// Solves the network with the reference bus held at `u_root` and fixed
/// complex injections at the other buses.
struct NetworkSolver<'a> {
    net: &'a NetworkModel,
    adm: AdmittanceTable,
    ybus: DMatrix<Complex64>,
    shunt: Vec<Complex64>,
    /// Bus and filter shunts without the branch end shunts.
    bus_shunt: Vec<Complex64>,
    s_inj: Vec<Complex64>,
    root: usize,
    method: PfMethod,
}

impl<'a> NetworkSolver<'a> {
    fn new(farm: &'a Farm, s_inj: Vec<Complex64>, omega: f64, method: PfMethod) -> Result<Self> {
        let net = &farm.network;
        let adm = build_admittance(net, omega)?;
        let filter: Vec<Complex64> = farm
            .filter_shunt()
            .iter()
            .map(|&c| Complex64::new(0.0, omega * c))
            .collect();
        let ybus = adm.ybus(net, Some(&filter));
        let bus_shunt: Vec<Complex64> = (0..net.buses.len()).map(|i| adm.bus_shunt[i] + filter[i]).collect();
        let mut shunt = bus_shunt.clone();
        for (br, a) in net.branches.iter().zip(&adm.branches) {
            shunt[br.from] += a.shunt_half;
            shunt[br.to] += a.shunt_half;
        }
        let method = match method {
            PfMethod::Auto if net.topology == Topology::Radial => PfMethod::Sweep,
            PfMethod::Auto => PfMethod::Newton,
            PfMethod::Sweep => {
                net.require_radial()?;
                PfMethod::Sweep
            }
            PfMethod::Newton => PfMethod::Newton,
        };
        Ok(Self { net, adm, ybus, shunt, bus_shunt, s_inj, root: net.dru_bus(), method })
    }

    fn mismatch(&self, v: &[Complex64]) -> f64 {
        let vv = DVector::from_column_slice(v);
        let i = &self.ybus * &vv;
        (0..v.len())
            .filter(|&k| k != self.root)
            .map(|k| (v[k] * i[k].conj() - self.s_inj[k]).norm())
            .fold(0.0, f64::max)
    }

    fn solve(&self, u_root: f64, start: &[Complex64]) -> Result<Inner> {
        match self.method {
            PfMethod::Newton => self.newton(u_root, start),
            _ => self.sweep(u_root, start),
        }
    }

    fn sweep(&self, u_root: f64, start: &[Complex64]) -> Result<Inner> {
        let tree = self.net.spanning_tree(self.root);
        let z: Vec<Complex64> = self.adm.branches.iter().map(|a| a.series.inv()).collect();
        let mut v = start.to_vec();
        v[self.root] = Complex64::new(u_root, 0.0);
        let mut current = vec![Complex64::new(0.0, 0.0); v.len()];
        for it in 1..=INNER_MAX_ITER {
            // backward: current drawn by each subtree through its parent branch
            for &i in &tree.order {
                current[i] = self.shunt[i] * v[i] - (self.s_inj[i] / v[i]).conj();
            }
            for &i in tree.order.iter().rev() {
                if let Some((p, _)) = tree.parent[i] {
                    let ci = current[i];
                    current[p] += ci;
                }
            }
            // forward: voltage drop along each branch
            for &i in &tree.order {
                if let Some((p, k)) = tree.parent[i] {
                    v[i] = v[p] - z[k] * current[i];
                }
            }
            if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite() || x.norm() == 0.0) {
                return Err(Error::PowerFlowDiverged { iterations: it, mismatch: f64::INFINITY });
            }
            let mismatch = self.mismatch(&v);
            if mismatch <= INNER_TOL {
                return Ok(Inner { v, iterations: it, mismatch });
            }
        }
        let mismatch = self.mismatch(&v);
        if mismatch <= MISMATCH_TOL {
            return Ok(Inner { v, iterations: INNER_MAX_ITER, mismatch });
        }
        Err(Error::PowerFlowDiverged { iterations: INNER_MAX_ITER, mismatch })
    }

    fn newton(&self, u_root: f64, start: &[Complex64]) -> Result<Inner> {
        let n = start.len();
        let pq: Vec<usize> = (0..n).filter(|&k| k != self.root).collect();
        let m = pq.len();
        let mut vm: Vec<f64> = start.iter().map(|x| x.norm()).collect();
        let mut va: Vec<f64> = start.iter().map(|x| x.arg()).collect();
        vm[self.root] = u_root;
        va[self.root] = 0.0;
        let build = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
            vm.iter().zip(va).map(|(&r, &a)| Complex64::from_polar(r, a)).collect()
        };
        let mut v = build(&vm, &va);
        for it in 1..=INNER_MAX_ITER {
            let vv = DVector::from_column_slice(&v);
            let ibus = &self.ybus * &vv;
            let f: Vec<Complex64> = pq.iter().map(|&k| v[k] * ibus[k].conj() - self.s_inj[k]).collect();
            let mismatch = f.iter().map(|x| x.norm()).fold(0.0, f64::max);
            if mismatch <= INNER_TOL {
                return Ok(Inner { v, iterations: it - 1, mismatch });
            }
            // dS/dVa and dS/dVm
            let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
            let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
            for (r, &i) in pq.iter().enumerate() {
                for (c, &k) in pq.iter().enumerate() {
                    let y = self.ybus[(i, k)];
                    let mut ds_da = -Complex64::i() * v[i] * (y * v[k]).conj();
                    let mut ds_dm = v[i] * (y * vnorm[k]).conj();
                    if i == k {
                        ds_da += Complex64::i() * v[i] * ibus[i].conj();
                        ds_dm += ibus[i].conj() * vnorm[i];
                    }
                    jac[(r, c)] = ds_da.re;
                    jac[(r, m + c)] = ds_dm.re;
                    jac[(m + r, c)] = ds_da.im;
                    jac[(m + r, m + c)] = ds_dm.im;
                }
            }
            let rhs = DVector::from_iterator(2 * m, f.iter().map(|x| -x.re).chain(f.iter().map(|x| -x.im)));
            let dx = jac
                .lu()
                .solve(&rhs)
                .ok_or(Error::PowerFlowDiverged { iterations: it, mismatch })?;
            for (r, &i) in pq.iter().enumerate() {
                va[i] += dx[r];
                vm[i] += dx[m + r];
            }
            v = build(&vm, &va);
            if vm.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::PowerFlowDiverged { iterations: it, mismatch: f64::INFINITY });
            }
        }
        let mismatch = self.mismatch(&v);
        if mismatch <= MISMATCH_TOL {
            return Ok(Inner { v, iterations: INNER_MAX_ITER, mismatch });
        }
        Err(Error::PowerFlowDiverged { iterations: INNER_MAX_ITER, mismatch })
    }

    fn flows(&self, v: &[Complex64]) -> Vec<(Complex64, Complex64)> {
        self.net
            .branches
            .iter()
            .zip(&self.adm.branches)
            .map(|(br, a)| {
                let (vi, vj) = (v[br.from], v[br.to]);
                let s_ij = vi * (a.series * (vi - vj) + a.shunt_half * vi).conj();
                let s_ji = vj * (a.series * (vj - vi) + a.shunt_half * vj).conj();
                (s_ij, s_ji)
            })
            .collect()
    }
}

fn check_setpoints(farm: &Farm, p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != farm.n_wt() || q.len() != farm.n_wt() {
        return Err(Error::InvalidParameter(format!(
            "expected {} turbine setpoints, got P={} Q={}",
            farm.n_wt(),
            p.len(),
            q.len()
        )));
    }
    for (t, turb) in farm.turbines.iter().enumerate() {
        if !(p[t] >= 0.0) || !q[t].is_finite() || p[t] > turb.p_max * (1.0 + CAPABILITY_TOL) {
            return Err(Error::InvalidParameter(format!("turbine {t}: P={} outside [0, {}]", p[t], turb.p_max)));
        }
        let available = turb.q_capability(p[t]);
        if q[t].abs() > available + CAPABILITY_TOL * turb.s_rating {
            return Err(Error::Capability { turbine: t, needed: q[t].abs(), available });
        }
    }
    Ok(())
}

pub fn ac_power_flow(farm: &Farm, p: &[f64], q: &[f64], omega: f64) -> Result<PowerFlowResult> {
    ac_power_flow_with(farm, p, q, omega, PfMethod::Auto)
}

pub fn ac_power_flow_with(farm: &Farm, p: &[f64], q: &[f64], omega: f64, method: PfMethod) -> Result<PowerFlowResult> {
    check_setpoints(farm, p, q)?;
    let net = &farm.network;
    let mut s_inj = vec![Complex64::new(0.0, 0.0); net.buses.len()];
    for (t, turb) in farm.turbines.iter().enumerate() {
        s_inj[turb.bus] += Complex64::new(p[t], q[t]);
    }
    let solver = NetworkSolver::new(farm, s_inj, omega, method)?;
    let root = solver.root;
    let p_injected: f64 = p.iter().sum();

    let mut u = farm.dru.ac_voltage_for_power(p_injected, omega);
    let mut v = vec![Complex64::new(u, 0.0); net.buses.len()];
    let mut iterations = 0;
    let mut converged = false;
    let mut outer = 0;
    let mut inner = None;
    while outer < OUTER_MAX_ITER {
        outer += 1;
        let sol = solver.solve(u, &v)?;
        iterations += sol.iterations;
        v = sol.v.clone();
        let flows = solver.flows(&v);
        let s_arr = delivered(net, root, &flows, v[root], solver.bus_shunt[root]);
        let u_next = farm.dru.ac_voltage_for_power(s_arr.re, omega);
        inner = Some(sol);
        if (u_next - u).abs() <= INNER_TOL {
            converged = true;
            break;
        }
        u = u_next;
    }
    let sol = inner.expect("at least one outer iteration");
    let branch_s = solver.flows(&sol.v);
    let s_dru_ac = delivered(net, root, &branch_s, sol.v[root], solver.bus_shunt[root]);
    let dru = farm.dru.dc_link(sol.v[root].norm(), omega)?;
    let mut pf = PowerFlowResult {
        converged: converged && sol.mismatch <= MISMATCH_TOL,
        method: solver.method,
        omega,
        bus_v: sol.v,
        branch_s,
        losses: LossBreakdown::default(),
        losses_total: 0.0,
        ac_losses: 0.0,
        iterations,
        outer_iterations: outer,
        max_mismatch: sol.mismatch,
        dru_blocked: dru.is_blocked(),
        s_dru_ac,
        p_root_balance: dru.p - s_dru_ac.re,
        q_imbalance: s_dru_ac.im - dru.q_dr,
        p_injected,
        p_delivered: dru.p_onshore(&farm.dru),
        dru,
    };
    pf.losses = loss_breakdown(&pf, farm);
    pf.ac_losses = pf.branch_s.iter().map(|(a, b)| a.re + b.re).sum();
    pf.losses_total = pf.ac_losses + pf.losses.dc_cable;
    Ok(pf)
}

/// Complex power the network delivers into the reference bus, net of the
/// bus's own shunts (branch end shunts are inside the flows already).
fn delivered(
    net: &NetworkModel,
    root: usize,
    flows: &[(Complex64, Complex64)],
    v_root: Complex64,
    bus_shunt_root: Complex64,
) -> Complex64 {
    let mut out = -bus_shunt_root.conj() * v_root.norm_sqr();
    for (br, (s_ij, s_ji)) in net.branches.iter().zip(flows) {
        if br.from == root {
            out -= s_ij;
        } else if br.to == root {
            out -= s_ji;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineResult {
    pub q_uniform: f64,
    pub omega: f64,
    pub q_turbine: Vec<f64>,
    pub power_flow: PowerFlowResult,
}

/// Every turbine supplies an equal share of the farm demand at nominal
/// frequency.
pub fn baseline_uniform(
    farm: &Farm,
    p: &[f64],
    demand: &impl ReactiveDemand,
    omega_0: f64,
) -> Result<BaselineResult> {
    let n = farm.n_wt();
    if n == 0 {
        return Err(Error::InvalidParameter("farm has no turbines".into()));
    }
    let q_uniform = demand.demand(omega_0, p.iter().sum())? / n as f64;
    for (t, turb) in farm.turbines.iter().enumerate() {
        let available = turb.q_capability(p.get(t).copied().unwrap_or(0.0));
        if q_uniform.abs() > available {
            return Err(Error::Capability { turbine: t, needed: q_uniform.abs(), available });
        }
    }
    let q_turbine = vec![q_uniform; n];
    let power_flow = ac_power_flow(farm, p, &q_turbine, omega_0)?;
    Ok(BaselineResult { q_uniform, omega: omega_0, q_turbine, power_flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farm::load_farm;

    fn one_cable(r: f64, c_half: f64) -> Farm {
        load_farm(&format!(
            r#"{{
  "base": {{"s_mva": 100.0, "v_kv": {{"mv": 66.0}}, "f_hz": 50.0}},
  "buses": [
    {{"id": "dru", "kind": "dru-ac", "level": "mv", "v_min": 0.9, "v_max": 1.1}},
    {{"id": "WT1", "kind": "turbine-lv", "level": "mv", "v_min": 0.9, "v_max": 1.1}}
  ],
  "branches": [{{"from": "WT1", "to": "dru", "r": {r}, "l": 8.0, "c_half": {c_half}, "s_max": 100.0}}],
  "turbines": [{{"bus": "WT1", "c_f": 0.0, "n_tf": 1.0, "p_max": 40.0, "s_rating": 45.0}}],
  "dru": {{"bus": "dru", "n_bridge": 2, "l_c": 6.25, "r_dc": 0.6566, "v_dc_onshore": 75.36, "v_valve": 30.0}}
}}"#
        ))
        .unwrap()
    }

    #[test]
    fn series_loss_matches_current() {
        let farm = one_cable(2.0, 0.0);
        let pf = ac_power_flow(&farm, &[0.3], &[0.02], 1.0).unwrap();
        assert!(pf.converged);
        let br = &farm.network.branches[0];
        let (v1, v0) = (pf.bus_v[br.from], pf.bus_v[br.to]);
        let z = Complex64::new(br.r, br.l);
        let i = (v1 - v0) / z;
        assert!((pf.ac_losses - i.norm_sqr() * br.r).abs() < 1e-12);
        // injection at the turbine bus equals V conj(I)
        let s = v1 * i.conj();
        assert!((s - Complex64::new(0.3, 0.02)).norm() < 1e-10);
        assert!(pf.conservation_residual().abs() < 1e-10);
    }

    #[test]
    fn lossless_cable() {
        let farm = one_cable(0.0, 0.5);
        let pf = ac_power_flow(&farm, &[0.25], &[0.0], 1.0).unwrap();
        assert!(pf.converged);
        assert!(pf.ac_losses.abs() < 1e-12);
        assert!((pf.s_dru_ac.re - 0.25).abs() < 1e-10);
    }

    #[test]
    fn sweep_and_newton_agree() {
        let farm = one_cable(1.0, 1.0);
        let a = ac_power_flow_with(&farm, &[0.2], &[-0.05], 1.003, PfMethod::Sweep).unwrap();
        let b = ac_power_flow_with(&farm, &[0.2], &[-0.05], 1.003, PfMethod::Newton).unwrap();
        for (x, y) in a.bus_v.iter().zip(&b.bus_v) {
            assert!((x - y).norm() < 1e-10);
        }
        assert_eq!(a.method, PfMethod::Sweep);
        assert_eq!(b.method, PfMethod::Newton);
    }

    #[test]
    fn rejects_setpoints_outside_capability() {
        let farm = one_cable(1.0, 0.0);
        assert!(matches!(ac_power_flow(&farm, &[0.4], &[0.3], 1.0), Err(Error::Capability { turbine: 0, .. })));
        assert!(matches!(ac_power_flow(&farm, &[-0.1], &[0.0], 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(ac_power_flow(&farm, &[0.1, 0.1], &[0.0], 1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn baseline_shares_demand_equally() {
        struct Flat(f64);
        impl ReactiveDemand for Flat {
            fn demand(&self, _: f64, _: f64) -> Result<f64> {
                Ok(self.0)
            }
        }
        let farm = one_cable(1.0, 0.0);
        let b = baseline_uniform(&farm, &[0.3], &Flat(0.05), 1.0).unwrap();
        assert_eq!(b.q_turbine, vec![0.05]);
        assert!(matches!(baseline_uniform(&farm, &[0.3], &Flat(5.0), 1.0), Err(Error::Capability { .. })));
    }

    #[test]
    fn csv_headers() {
        let farm = one_cable(1.0, 0.2);
        let pf = ac_power_flow(&farm, &[0.2], &[0.0], 1.0).unwrap();
        assert!(pf.bus_csv(&farm.network).starts_with("bus,v_re"));
        assert_eq!(pf.branch_csv(&farm.network).lines().count(), 2);
        assert!(pf.loss_csv().contains("dc_cable"));
    }
}
