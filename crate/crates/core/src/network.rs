//! Per-unit collection network: buses, pi-model branches and the attachment
//! points of turbines and the rectifier station.
//!
//! Everything stored here is per unit. Engineering units only exist in the
//! JSON document handled by [`crate::farm`].

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base quantities. `omega_base` is the angular frequency that corresponds
/// to a normalized frequency of 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct PerUnitBase {
    pub s_base_mva: f64,
    pub v_base_kv: BTreeMap<String, f64>,
    pub f_hz: f64,
}

impl PerUnitBase {
    pub fn new(s_base_mva: f64, v_base_kv: BTreeMap<String, f64>, f_hz: f64) -> Result<Self> {
        if !(s_base_mva > 0.0) || !(f_hz > 0.0) {
            return Err(Error::InvalidNetwork("bases must be strictly positive".into()));
        }
        if let Some((level, _)) = v_base_kv.iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::InvalidNetwork(format!(
                "voltage base of level \"{level}\" must be strictly positive"
            )));
        }
        Ok(Self { s_base_mva, v_base_kv, f_hz })
    }

    /// Single-level base, convenient for synthetic networks.
    pub fn single_level(s_base_mva: f64, v_kv: f64, f_hz: f64) -> Self {
        let mut levels = BTreeMap::new();
        levels.insert("main".to_string(), v_kv);
        Self { s_base_mva, v_base_kv: levels, f_hz }
    }

    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_hz
    }

    pub fn v_base(&self, level: &str) -> Option<f64> {
        self.v_base_kv.get(level).copied()
    }

    /// Impedance base in ohm for a voltage level.
    pub fn z_base(&self, level: &str) -> Option<f64> {
        self.v_base(level).map(|v| v * v / self.s_base_mva)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    TurbineLv,
    TurbineHv,
    Collector,
    Pcc,
    DruAc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    pub level: String,
    pub v_min: f64,
    pub v_max: f64,
    /// Shunt capacitance, p.u. susceptance at normalized frequency 1.
    pub shunt_c: f64,
}

/// Series R-L element with half the line charging at each end.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    /// Series inductance; reactance is `omega * l`.
    pub l: f64,
    pub c_half: f64,
    pub s_max: f64,
}

/// Role of a branch, derived from the kinds of its end buses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchKind {
    Cable,
    TurbineTransformer,
    /// Any branch touching the rectifier AC bus.
    DruLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Radial,
    Meshed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub base: PerUnitBase,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub n_wt: usize,
    pub topology: Topology,
}

impl NetworkModel {
    /// Validates every structural invariant and derives `n_wt` and the
    /// topology kind.
    pub fn new(base: PerUnitBase, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, bus) in buses.iter().enumerate() {
            if seen.insert(bus.id.as_str(), i).is_some() {
                return Err(Error::DuplicateId(bus.id.clone()));
            }
            if base.v_base(&bus.level).is_none() {
                return Err(Error::Schema(format!(
                    "bus \"{}\" references unknown voltage level \"{}\"",
                    bus.id, bus.level
                )));
            }
            if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max) {
                return Err(Error::InvalidNetwork(format!(
                    "bus \"{}\": voltage bounds must satisfy 0 < v_min <= v_max",
                    bus.id
                )));
            }
            if !(bus.shunt_c >= 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "bus \"{}\": negative shunt capacitance",
                    bus.id
                )));
            }
        }
        let count = |k: BusKind| buses.iter().filter(|b| b.kind == k).count();
        if count(BusKind::DruAc) != 1 {
            return Err(Error::InvalidNetwork(
                "exactly one bus must have kind dru-ac".into(),
            ));
        }
        if count(BusKind::Pcc) > 1 {
            return Err(Error::InvalidNetwork("more than one pcc bus".into()));
        }
        for br in &branches {
            if br.from >= buses.len() || br.to >= buses.len() {
                return Err(Error::UnknownEndpoint(format!("#{}", br.from.max(br.to))));
            }
            let name = || format!("{}-{}", buses[br.from].id, buses[br.to].id);
            if br.from == br.to {
                return Err(Error::InvalidNetwork(format!("branch {} is a self loop", name())));
            }
            if !(br.r >= 0.0 && br.l >= 0.0 && br.c_half >= 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "branch {}: r, l, c_half must be nonnegative",
                    name()
                )));
            }
            if !(br.s_max > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "branch {}: s_max must be positive",
                    name()
                )));
            }
        }

        let n_wt = count(BusKind::TurbineLv);
        let topology = if branches.len() + 1 == buses.len() {
            Topology::Radial
        } else {
            Topology::Meshed
        };
        let net = Self { base, buses, branches, n_wt, topology };

        let root = net.dru_bus();
        let tree = net.spanning_tree(root);
        if let Some(i) = tree.parent.iter().enumerate().position(|(i, p)| p.is_none() && i != root) {
            return Err(Error::Disconnected(net.buses[i].id.clone()));
        }
        Ok(net)
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn dru_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::DruAc)
            .expect("validated network has a dru-ac bus")
    }

    pub fn pcc_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Pcc)
    }

    /// Indices of turbine-lv buses in bus order.
    pub fn turbine_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::TurbineLv)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn branch_kind(&self, k: usize) -> BranchKind {
        let br = &self.branches[k];
        let (a, b) = (self.buses[br.from].kind, self.buses[br.to].kind);
        if a == BusKind::DruAc || b == BusKind::DruAc {
            BranchKind::DruLink
        } else if matches!(
            (a, b),
            (BusKind::TurbineLv, BusKind::TurbineHv) | (BusKind::TurbineHv, BusKind::TurbineLv)
        ) {
            BranchKind::TurbineTransformer
        } else {
            BranchKind::Cable
        }
    }

    /// Branch indices incident to each bus.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            inc[br.from].push(k);
            inc[br.to].push(k);
        }
        inc
    }

    /// Breadth-first spanning tree. Ties follow branch order, so the result
    /// is deterministic.
    pub fn spanning_tree(&self, root: usize) -> SpanningTree {
        let inc = self.incidence();
        let n = self.buses.len();
        let mut parent = vec![None; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &k in &inc[i] {
                let br = &self.branches[k];
                let j = if br.from == i { br.to } else { br.from };
                if !visited[j] {
                    visited[j] = true;
                    parent[j] = Some((i, k));
                    queue.push_back(j);
                }
            }
        }
        SpanningTree { root, order, parent }
    }

    pub fn require_radial(&self) -> Result<()> {
        match self.topology {
            Topology::Radial => Ok(()),
            Topology::Meshed => Err(Error::MeshedTopology),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub root: usize,
    /// Buses in breadth-first order, root first.
    pub order: Vec<usize>,
    /// `(parent bus, branch index)` for every non-root bus.
    pub parent: Vec<Option<(usize, usize)>>,
}

impl SpanningTree {
    /// Number of turbine buses in the subtree of every bus (inclusive).
    pub fn downstream_count(&self, is_counted: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut count: Vec<usize> = (0..self.parent.len()).map(|i| usize::from(is_counted(i))).collect();
        for &i in self.order.iter().rev() {
            if let Some((p, _)) = self.parent[i] {
                count[p] += count[i];
            }
        }
        count
    }
}

/// Series and end-shunt admittances of one branch at a given frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub series: Complex64,
    /// `j * omega * c_half`, identical at both ends.
    pub shunt_half: Complex64,
}

#[derive(Debug, Clone)]
pub struct AdmittanceTable {
    pub omega: f64,
    pub branches: Vec<BranchAdmittance>,
    /// Bus shunt admittances from `Bus::shunt_c` only.
    pub bus_shunt: Vec<Complex64>,
}

impl AdmittanceTable {
    /// Dense bus admittance matrix, optionally with extra bus shunts
    /// (turbine filters) folded into the diagonal.
    pub fn ybus(&self, net: &NetworkModel, extra_shunt: Option<&[Complex64]>) -> DMatrix<Complex64> {
        let n = net.buses.len();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (br, adm) in net.branches.iter().zip(&self.branches) {
            let (i, j) = (br.from, br.to);
            y[(i, i)] += adm.series + adm.shunt_half;
            y[(j, j)] += adm.series + adm.shunt_half;
            y[(i, j)] -= adm.series;
            y[(j, i)] -= adm.series;
        }
        for i in 0..n {
            y[(i, i)] += self.bus_shunt[i];
            if let Some(extra) = extra_shunt {
                y[(i, i)] += extra[i];
            }
        }
        y
    }
}

pub fn build_admittance(net: &NetworkModel, omega: f64) -> Result<AdmittanceTable> {
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
    }
    let branches = net
        .branches
        .iter()
        .map(|br| {
            let z = Complex64::new(br.r, omega * br.l);
            if z.norm() == 0.0 {
                return Err(Error::SingularBranch {
                    from: net.buses[br.from].id.clone(),
                    to: net.buses[br.to].id.clone(),
                });
            }
            Ok(BranchAdmittance {
                series: z.inv(),
                shunt_half: Complex64::new(0.0, omega * br.c_half),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bus_shunt = net
        .buses
        .iter()
        .map(|b| Complex64::new(0.0, omega * b.shunt_c))
        .collect();
    Ok(AdmittanceTable { omega, branches, bus_shunt })
}

/// Lumped collection-network inductance and capacitance.
///
/// Each non-transformer branch contributes `l * f^2`, where `f` is the share
/// of the farm current it carries when every turbine injects the same
/// current. Capacitance is the total of all branch and bus shunts.
pub fn aggregate_equivalents(net: &NetworkModel) -> Result<(f64, f64)> {
    net.require_radial()?;
    let tree = net.spanning_tree(net.dru_bus());
    let downstream = tree.downstream_count(|i| net.buses[i].kind == BusKind::TurbineLv);
    let n_wt = net.n_wt.max(1) as f64;

    let mut l_net = 0.0;
    for (child, link) in tree.parent.iter().enumerate() {
        let Some((_, k)) = *link else { continue };
        if net.branch_kind(k) == BranchKind::TurbineTransformer {
            continue;
        }
        let share = downstream[child] as f64 / n_wt;
        l_net += net.branches[k].l * share * share;
    }
    let c_net = net.branches.iter().map(|b| 2.0 * b.c_half).sum::<f64>()
        + net.buses.iter().map(|b| b.shunt_c).sum::<f64>();
    Ok((l_net, c_net))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bus(id: &str, kind: BusKind) -> Bus {
        Bus {
            id: id.into(),
            kind,
            level: "main".into(),
            v_min: 0.9,
            v_max: 1.1,
            shunt_c: 0.0,
        }
    }

    fn branch(from: usize, to: usize, r: f64, l: f64, c_half: f64) -> Branch {
        Branch { from, to, r, l, c_half, s_max: 1.0 }
    }

    fn base() -> PerUnitBase {
        PerUnitBase::single_level(100.0, 66.0, 50.0)
    }

    #[test]
    fn resistive_and_reactive_branches() {
        let net = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("b", BusKind::DruAc), bus("c", BusKind::Collector)],
            vec![branch(0, 1, 0.01, 0.0, 0.0), branch(0, 2, 0.0, 0.1, 0.0)],
        )
        .unwrap();
        let y = build_admittance(&net, 1.0).unwrap();
        assert!((y.branches[0].series - Complex64::new(100.0, 0.0)).norm() < 1e-12);
        assert!((y.branches[1].series - Complex64::new(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn series_admittance_at_off_nominal_frequency() {
        // 1/(a + jb) = (a - jb)/(a^2 + b^2), evaluated by hand
        let (a, b) = (0.01_f64, 0.105_f64);
        let den = a * a + b * b;
        let expected = Complex64::new(a / den, -b / den);
        let net = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("b", BusKind::DruAc)],
            vec![branch(0, 1, 0.01, 0.1, 0.0)],
        )
        .unwrap();
        let y = build_admittance(&net, 1.05).unwrap();
        assert!((y.branches[0].series - expected).norm() < 1e-10);
    }

    #[test]
    fn singular_branch_is_rejected() {
        let net = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("b", BusKind::DruAc)],
            vec![branch(0, 1, 0.0, 0.0, 0.0)],
        )
        .unwrap();
        assert!(matches!(build_admittance(&net, 1.0), Err(Error::SingularBranch { .. })));
        assert!(build_admittance(&net, 0.0).is_err());
    }

    #[test]
    fn single_branch_equivalents() {
        let net = NetworkModel::new(
            base(),
            vec![bus("t", BusKind::TurbineLv), bus("d", BusKind::DruAc)],
            vec![branch(0, 1, 0.01, 0.1, 0.02)],
        )
        .unwrap();
        let (l, c) = aggregate_equivalents(&net).unwrap();
        assert!((l - 0.1).abs() < 1e-15);
        assert!((c - 0.04).abs() < 1e-15);
    }

    #[test]
    fn parallel_feeders_halve_inductance() {
        let net = NetworkModel::new(
            base(),
            vec![
                bus("pcc", BusKind::Pcc),
                bus("dru", BusKind::DruAc),
                bus("t1", BusKind::TurbineLv),
                bus("t2", BusKind::TurbineLv),
            ],
            vec![
                branch(0, 1, 0.01, 0.0, 0.0),
                branch(0, 2, 0.01, 0.1, 0.0),
                branch(0, 3, 0.01, 0.1, 0.0),
            ],
        )
        .unwrap();
        let (l, c) = aggregate_equivalents(&net).unwrap();
        assert!((l - 0.05).abs() < 1e-15);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn meshed_is_rejected_by_aggregation() {
        let net = NetworkModel::new(
            base(),
            vec![bus("pcc", BusKind::Pcc), bus("dru", BusKind::DruAc), bus("c", BusKind::Collector)],
            vec![branch(0, 1, 0.01, 0.1, 0.0), branch(1, 2, 0.01, 0.1, 0.0), branch(2, 0, 0.01, 0.1, 0.0)],
        )
        .unwrap();
        assert_eq!(net.topology, Topology::Meshed);
        assert!(matches!(aggregate_equivalents(&net), Err(Error::MeshedTopology)));
    }

    #[test]
    fn structural_errors() {
        let dup = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("a", BusKind::DruAc)],
            vec![branch(0, 1, 0.01, 0.0, 0.0)],
        );
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
        let disconnected = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("b", BusKind::DruAc), bus("c", BusKind::Collector)],
            vec![branch(0, 1, 0.01, 0.0, 0.0)],
        );
        assert!(matches!(disconnected, Err(Error::Disconnected(id)) if id == "c"));
        let no_dru = NetworkModel::new(
            base(),
            vec![bus("a", BusKind::Pcc), bus("b", BusKind::Collector)],
            vec![branch(0, 1, 0.01, 0.0, 0.0)],
        );
        assert!(no_dru.is_err());
    }
}
