#![allow(dead_code)]

use std::path::PathBuf;

use druopf::farm::{farm_from_doc, load_farm_file, Farm, FarmDoc};
use proptest::prelude::*;
use serde_json::json;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load_fixture(name: &str) -> Farm {
    load_farm_file(fixture(name)).unwrap()
}

#[derive(Debug, Clone)]
pub struct CableShape {
    pub parent: usize,
    pub r: f64,
    pub x_ratio: f64,
    pub c_half: f64,
}

/// Small single-level farm: node 0 is the dru-ac bus, node 1 an optional pcc,
/// then one bus per turbine hung off an earlier node.
#[derive(Debug, Clone)]
pub struct FarmShape {
    pub with_pcc: bool,
    pub cables: Vec<CableShape>,
    pub c_f: Vec<f64>,
    /// Extra branch between two turbine buses (makes the network meshed).
    pub mesh: Option<(usize, usize, f64)>,
}

impl FarmShape {
    pub fn n_wt(&self) -> usize {
        self.c_f.len()
    }

    pub fn build(&self) -> Farm {
        let mut ids = vec!["dru".to_string()];
        let mut buses = vec![json!({"id": "dru", "kind": "dru-ac", "level": "mv", "v_min": 0.8, "v_max": 1.2})];
        let mut branches = Vec::new();
        if self.with_pcc {
            ids.push("pcc".into());
            buses.push(json!({"id": "pcc", "kind": "pcc", "level": "mv", "v_min": 0.8, "v_max": 1.2}));
            branches.push(json!({"from": "pcc", "to": "dru", "r": 0.05, "l": 0.2, "c_half": 0.05, "s_max": 500.0}));
        }
        let mut turbines = Vec::new();
        for (t, cable) in self.cables.iter().enumerate() {
            let id = format!("WT{}", t + 1);
            buses.push(json!({"id": id, "kind": "turbine-lv", "level": "mv", "v_min": 0.8, "v_max": 1.2}));
            let parent = ids[cable.parent % ids.len()].clone();
            branches.push(json!({
                "from": id, "to": parent, "r": cable.r, "l": cable.r * cable.x_ratio,
                "c_half": cable.c_half, "s_max": 500.0
            }));
            turbines.push(json!({"bus": id, "c_f": self.c_f[t], "n_tf": 1.0, "p_max": 40.0, "s_rating": 45.0}));
            ids.push(id);
        }
        if let Some((a, b, r)) = self.mesh {
            let n = self.cables.len();
            let (a, b) = (a % n, b % n);
            if a != b {
                branches.push(json!({
                    "from": format!("WT{}", a + 1), "to": format!("WT{}", b + 1),
                    "r": r, "l": 4.0 * r, "c_half": 0.5, "s_max": 500.0
                }));
            }
        }
        let doc = json!({
            "base": {"s_mva": 100.0, "v_kv": {"mv": 66.0}, "f_hz": 50.0},
            "buses": buses,
            "branches": branches,
            "turbines": turbines,
            "dru": {"bus": "dru", "n_bridge": 2, "l_c": 6.25, "r_dc": 0.6566, "v_dc_onshore": 75.36, "v_valve": 30.0}
        });
        let doc: FarmDoc = serde_json::from_value(doc).unwrap();
        farm_from_doc(&doc).unwrap()
    }
}

pub fn farm_shape(max_wt: usize, meshed: bool) -> impl Strategy<Value = FarmShape> {
    (1..=max_wt, any::<bool>()).prop_flat_map(move |(n, with_pcc)| {
        let first = if with_pcc { 1 } else { 0 };
        let cables = (0..n)
            .map(|t| {
                // parents come from the nodes that already exist
                (first..=first + t, 0.1f64..2.0, 2.0f64..6.0, 0.0f64..2.0)
                    .prop_map(|(parent, r, x_ratio, c_half)| CableShape { parent, r, x_ratio, c_half })
            })
            .collect::<Vec<_>>();
        let mesh = if meshed && n >= 3 {
            (0..n, 0..n, 0.2f64..2.0).prop_map(Some).boxed()
        } else {
            Just(None).boxed()
        };
        (cables, proptest::collection::vec(0.0f64..2.0, n), mesh)
            .prop_map(move |(cables, c_f, mesh)| FarmShape { with_pcc, cables, c_f, mesh })
    })
}

/// Per-unit setpoints: P in [0.05, 1] of rating, Q within half the capability.
pub fn setpoints(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (proptest::collection::vec(0.05f64..1.0, n), proptest::collection::vec(-0.5f64..0.5, n))
}

pub fn scaled_setpoints(farm: &Farm, load: &[f64], qfrac: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = farm.turbines.iter().zip(load).map(|(t, l)| l * t.p_max).collect();
    let q = farm.turbines.iter().zip(&p).zip(qfrac).map(|((t, &pi), f)| f * t.q_capability(pi)).collect();
    (p, q)
}
