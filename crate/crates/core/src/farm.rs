//! JSON farm document: network, turbines and rectifier station in
//! engineering units, converted to per unit on load.
//!
//! Units in the document:
//!
//! | field | unit |
//! |-------|------|
//! | `base.s_mva`, `branches[].s_max`, `turbines[].s_rating` | MVA |
//! | `base.v_kv.*`, `dru.v_dc_onshore`, `dru.v_valve` | kV |
//! | `branches[].r`, `dru.r_dc` | ohm |
//! | `branches[].l`, `dru.l_c` | mH |
//! | `branches[].c_half`, `buses[].shunt_c`, `turbines[].c_f` | uF |
//! | `turbines[].p_max` | MW |
//! | `buses[].v_min`, `buses[].v_max` | p.u. |
//!
//! Branch impedances are referred to the voltage level of the `from` bus.
//! Turbine transformers are ordinary branches between a turbine-lv and a
//! turbine-hv bus; their leakage inductance becomes the turbine's `l_tf`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::devices::{DruStation, TurbineUnit};
use crate::error::{Error, Result};
use crate::network::{Branch, BranchKind, Bus, BusKind, NetworkModel, PerUnitBase};

const RATIO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDoc {
    pub s_mva: f64,
    pub v_kv: BTreeMap<String, f64>,
    pub f_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub id: String,
    pub kind: BusKind,
    pub level: String,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub shunt_c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDoc {
    pub from: String,
    pub to: String,
    pub r: f64,
    pub l: f64,
    #[serde(default)]
    pub c_half: f64,
    pub s_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbineDoc {
    pub bus: String,
    pub c_f: f64,
    /// Nameplate high-to-low voltage ratio of the turbine transformer.
    pub n_tf: f64,
    pub p_max: f64,
    pub s_rating: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DruDoc {
    pub bus: String,
    pub n_bridge: u32,
    pub l_c: f64,
    pub r_dc: f64,
    pub v_dc_onshore: f64,
    pub v_valve: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmDoc {
    pub base: BaseDoc,
    pub buses: Vec<BusDoc>,
    pub branches: Vec<BranchDoc>,
    #[serde(default)]
    pub turbines: Vec<TurbineDoc>,
    pub dru: Option<DruDoc>,
}

/// Network plus the devices attached to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Farm {
    pub network: NetworkModel,
    pub turbines: Vec<TurbineUnit>,
    pub dru: DruStation,
}

impl Farm {
    pub fn new(network: NetworkModel, turbines: Vec<TurbineUnit>, dru: DruStation) -> Result<Self> {
        if dru.bus != network.dru_bus() {
            return Err(Error::InvalidNetwork("rectifier must sit on the dru-ac bus".into()));
        }
        let lv = network.turbine_buses();
        if turbines.len() != lv.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} turbine-lv buses but {} turbines",
                lv.len(),
                turbines.len()
            )));
        }
        for t in &turbines {
            if network.buses.get(t.bus).map(|b| b.kind) != Some(BusKind::TurbineLv) {
                return Err(Error::InvalidNetwork("turbine attached to a non turbine-lv bus".into()));
            }
        }
        let mut used: Vec<usize> = turbines.iter().map(|t| t.bus).collect();
        used.sort_unstable();
        used.dedup();
        if used.len() != turbines.len() {
            return Err(Error::InvalidNetwork("two turbines share a bus".into()));
        }
        Ok(Self { network, turbines, dru })
    }

    pub fn n_wt(&self) -> usize {
        self.turbines.len()
    }

    /// Rated farm output (sum of turbine ratings).
    pub fn p_rated(&self) -> f64 {
        self.turbines.iter().map(|t| t.p_max).sum()
    }

    /// Turbine filter capacitance per bus.
    pub fn filter_shunt(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.network.buses.len()];
        for t in &self.turbines {
            c[t.bus] += t.c_f;
        }
        c
    }

    pub fn turbine_id(&self, t: usize) -> &str {
        &self.network.buses[self.turbines[t].bus].id
    }

    pub fn turbine_index(&self, bus_id: &str) -> Option<usize> {
        self.turbines.iter().position(|t| self.network.buses[t.bus].id == bus_id)
    }

    pub fn to_document(&self) -> FarmDoc {
        let net = &self.network;
        let base = &net.base;
        let wb = base.omega_base();
        let z = |level: &str| base.z_base(level).expect("validated level");
        let buses = net
            .buses
            .iter()
            .map(|b| BusDoc {
                id: b.id.clone(),
                kind: b.kind,
                level: b.level.clone(),
                v_min: b.v_min,
                v_max: b.v_max,
                shunt_c: b.shunt_c / (wb * z(&b.level)) * 1e6,
            })
            .collect();
        let branches = net
            .branches
            .iter()
            .map(|br| {
                let zb = z(&net.buses[br.from].level);
                BranchDoc {
                    from: net.buses[br.from].id.clone(),
                    to: net.buses[br.to].id.clone(),
                    r: br.r * zb,
                    l: br.l * zb / wb * 1e3,
                    c_half: br.c_half / (wb * zb) * 1e6,
                    s_max: br.s_max * base.s_base_mva,
                }
            })
            .collect();
        let turbines = self
            .turbines
            .iter()
            .map(|t| {
                let lv = &net.buses[t.bus];
                let hv_level = transformer_of(net, t.bus)
                    .map(|(_, hv)| net.buses[hv].level.clone())
                    .unwrap_or_else(|| lv.level.clone());
                let v_lv = base.v_base(&lv.level).unwrap();
                let v_hv = base.v_base(&hv_level).unwrap();
                TurbineDoc {
                    bus: lv.id.clone(),
                    c_f: t.c_f / (wb * z(&lv.level)) * 1e6,
                    n_tf: t.n_tf * v_hv / v_lv,
                    p_max: t.p_max * base.s_base_mva,
                    s_rating: t.s_rating * base.s_base_mva,
                }
            })
            .collect();
        let dc = DcBase::new(self.dru.n_bridge, self.dru.v_valve_kv, base.s_base_mva);
        let dru = DruDoc {
            bus: net.buses[self.dru.bus].id.clone(),
            n_bridge: self.dru.n_bridge,
            l_c: self.dru.l_c * SQRT_2 * self.dru.v_valve_kv / (wb * dc.i_ka) * 1e3,
            r_dc: self.dru.r_dc * dc.z_ohm(),
            v_dc_onshore: self.dru.v_dc_onshore * dc.v_kv,
            v_valve: self.dru.v_valve_kv,
        };
        FarmDoc {
            base: BaseDoc {
                s_mva: base.s_base_mva,
                v_kv: base.v_base_kv.clone(),
                f_hz: base.f_hz,
            },
            buses,
            branches,
            turbines,
            dru: Some(dru),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("farm document serializes")
    }
}

/// DC base quantities: voltage is the total no-load DC voltage of all
/// series bridges at nominal valve voltage.
struct DcBase {
    v_kv: f64,
    i_ka: f64,
}

impl DcBase {
    fn new(n_bridge: u32, v_valve_kv: f64, s_mva: f64) -> Self {
        let v_kv = n_bridge as f64 * 3.0 * SQRT_2 / PI * v_valve_kv;
        Self { v_kv, i_ka: s_mva / v_kv }
    }

    fn z_ohm(&self) -> f64 {
        self.v_kv / self.i_ka
    }
}

/// `(branch, hv bus)` of the transformer feeding a turbine-lv bus.
fn transformer_of(net: &NetworkModel, lv_bus: usize) -> Option<(usize, usize)> {
    net.branches.iter().enumerate().find_map(|(k, br)| {
        if net.branch_kind(k) != BranchKind::TurbineTransformer {
            return None;
        }
        if br.from == lv_bus {
            Some((k, br.to))
        } else if br.to == lv_bus {
            Some((k, br.from))
        } else {
            None
        }
    })
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Schema(format!("{name} must be a finite number")))
    }
}

fn network_from_doc(doc: &FarmDoc) -> Result<NetworkModel> {
    let base = PerUnitBase::new(finite("base.s_mva", doc.base.s_mva)?, doc.base.v_kv.clone(), doc.base.f_hz)?;
    let wb = base.omega_base();
    let mut buses = Vec::with_capacity(doc.buses.len());
    for b in &doc.buses {
        let zb = base
            .z_base(&b.level)
            .ok_or_else(|| Error::Schema(format!("bus \"{}\" references unknown level \"{}\"", b.id, b.level)))?;
        buses.push(Bus {
            id: b.id.clone(),
            kind: b.kind,
            level: b.level.clone(),
            v_min: finite("v_min", b.v_min)?,
            v_max: finite("v_max", b.v_max)?,
            shunt_c: wb * finite("shunt_c", b.shunt_c)? * 1e-6 * zb,
        });
    }
    let index = |id: &str| {
        buses
            .iter()
            .position(|b: &Bus| b.id == id)
            .ok_or_else(|| Error::UnknownEndpoint(id.to_string()))
    };
    // duplicate ids would make `index` ambiguous; let the model constructor report them first
    let mut ids: Vec<&str> = buses.iter().map(|b| b.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0].to_string()));
    }
    let mut branches = Vec::with_capacity(doc.branches.len());
    for br in &doc.branches {
        let from = index(&br.from)?;
        let to = index(&br.to)?;
        let zb = base.z_base(&buses[from].level).expect("checked above");
        branches.push(Branch {
            from,
            to,
            r: finite("r", br.r)? / zb,
            l: wb * finite("l", br.l)? * 1e-3 / zb,
            c_half: wb * finite("c_half", br.c_half)? * 1e-6 * zb,
            s_max: finite("s_max", br.s_max)? / base.s_base_mva,
        });
    }
    NetworkModel::new(base, buses, branches)
}

pub fn load_network(text: &str) -> Result<NetworkModel> {
    let doc: FarmDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    network_from_doc(&doc)
}

pub fn load_farm(text: &str) -> Result<Farm> {
    let doc: FarmDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    farm_from_doc(&doc)
}

pub fn load_farm_file(path: impl AsRef<std::path::Path>) -> Result<Farm> {
    load_farm(&std::fs::read_to_string(path)?)
}

pub fn farm_from_doc(doc: &FarmDoc) -> Result<Farm> {
    let network = network_from_doc(doc)?;
    let base = &network.base;
    let wb = base.omega_base();

    let mut turbines = Vec::with_capacity(doc.turbines.len());
    for t in &doc.turbines {
        let bus = network
            .bus_index(&t.bus)
            .ok_or_else(|| Error::UnknownEndpoint(t.bus.clone()))?;
        let lv = &network.buses[bus];
        let v_lv = base.v_base(&lv.level).unwrap();
        let (l_tf, v_hv) = match transformer_of(&network, bus) {
            Some((k, hv)) => (network.branches[k].l, base.v_base(&network.buses[hv].level).unwrap()),
            None => (0.0, v_lv),
        };
        let n_tf = finite("n_tf", t.n_tf)? * v_lv / v_hv;
        if (n_tf - 1.0).abs() > RATIO_TOL {
            return Err(Error::InvalidNetwork(format!(
                "turbine \"{}\": transformer ratio {} does not match the voltage bases (off-nominal ratio {n_tf})",
                t.bus, t.n_tf
            )));
        }
        turbines.push(TurbineUnit::new(
            bus,
            wb * finite("c_f", t.c_f)? * 1e-6 * base.z_base(&lv.level).unwrap(),
            n_tf,
            l_tf,
            finite("p_max", t.p_max)? / base.s_base_mva,
            finite("s_rating", t.s_rating)? / base.s_base_mva,
        )?);
    }

    let d = doc
        .dru
        .as_ref()
        .ok_or_else(|| Error::Schema("missing field `dru`".into()))?;
    let bus = network
        .bus_index(&d.bus)
        .ok_or_else(|| Error::UnknownEndpoint(d.bus.clone()))?;
    if !(d.v_valve > 0.0) || d.n_bridge == 0 {
        return Err(Error::Schema("dru needs v_valve > 0 and n_bridge >= 1".into()));
    }
    let dc = DcBase::new(d.n_bridge, d.v_valve, base.s_base_mva);
    let dru = DruStation::new(
        bus,
        d.n_bridge,
        wb * finite("l_c", d.l_c)? * 1e-3 * dc.i_ka / (SQRT_2 * d.v_valve),
        finite("r_dc", d.r_dc)? / dc.z_ohm(),
        finite("v_dc_onshore", d.v_dc_onshore)? / dc.v_kv,
        d.v_valve,
    )?;
    Farm::new(network, turbines, dru)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "base": {"s_mva": 100, "v_kv": {"mv": 66}, "f_hz": 50},
        "buses": [
            {"id": "pcc", "kind": "pcc", "level": "mv", "v_min": 0.9, "v_max": 1.1},
            {"id": "dru", "kind": "dru-ac", "level": "mv", "v_min": 0.9, "v_max": 1.1}
        ],
        "branches": [{"from": "pcc", "to": "dru", "r": 0.4356, "l": 0, "s_max": 100}]
    }"#;

    #[test]
    fn minimal_network() {
        let net = load_network(MINIMAL).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.topology, crate::network::Topology::Radial);
        assert!((net.branches[0].r - 0.01).abs() < 1e-15);
        assert_eq!(net.n_wt, 0);
    }

    #[test]
    fn unknown_endpoint() {
        let doc = MINIMAL.replace(r#""to": "dru""#, r#""to": "b99""#);
        let err = load_network(&doc).unwrap_err();
        assert!(matches!(&err, Error::UnknownEndpoint(id) if id == "b99"));
        assert!(err.to_string().contains("unknown endpoint"));
    }

    #[test]
    fn schema_errors() {
        let missing = MINIMAL.replace(r#""s_max": 100"#, r#""s_mx": 100"#);
        assert!(matches!(load_network(&missing), Err(Error::Schema(_))));
        let typed = MINIMAL.replace(r#""r": 0.4356"#, r#""r": "small""#);
        assert!(matches!(load_network(&typed), Err(Error::Schema(_))));
        let dup = MINIMAL.replace(r#""id": "dru""#, r#""id": "pcc""#);
        assert!(matches!(load_network(&dup), Err(Error::DuplicateId(_))));
        assert!(matches!(load_farm(MINIMAL), Err(Error::Schema(_))));
    }
}
