//! Acceptance suite. Runs without the libtest harness so the verdict lines
//! always reach stdout; exits nonzero if any criterion fails.

mod common;

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use common::{farm_shape, load_fixture, scaled_setpoints, setpoints, FarmShape};
use druopf::devices::{
    compute_droop_params, fit_demand_line, linspace, static_operating_point, FarmReactiveModel, FrequencyBand,
    ReactiveDemand, LINE_FIT_SAMPLES, RESIDUAL_SCAN_POINTS,
};
use druopf::farm::Farm;
use druopf::opf::{frequency_search, recover_voltages, solve_opf, OpfOptions, OpfProblem};
use druopf::oracle::{grid_search_oracle, OracleSettings};
use druopf::powerflow::ac_power_flow;
use druopf::solver::SolverSettings;
use druopf::study::{run_day, DayProfile, StudyOptions, REFERENCE_REDUCTION};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Verdict = Result<String, String>;

fn model(farm: &Farm) -> FarmReactiveModel {
    FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru).unwrap()
}

fn problem(farm: &Farm, loading: f64, band: FrequencyBand) -> OpfProblem<'_> {
    let p: Vec<f64> = farm.turbines.iter().map(|t| loading * t.p_max).collect();
    let range = (band.omega_min_h, band.omega_max_h);
    let line = fit_demand_line(p.iter().sum(), range, LINE_FIT_SAMPLES, &model(farm)).unwrap();
    OpfProblem { farm, p, demand_line: line, band, regularize: false }
}

fn tightness() -> Verdict {
    let farm = load_fixture("farm12.json");
    let settings = SolverSettings::default();
    let mut worst_rank1: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for loading in linspace(0.1, 0.8, 10) {
        let pr = problem(&farm, loading, FrequencyBand::default());
        let t = Instant::now();
        let sol = frequency_search(&pr, &settings).map_err(|e| format!("loading {loading:.2}: {e}"))?.run.solution;
        slowest = slowest.max(t.elapsed());
        if !sol.status.is_optimal() {
            return Err(format!("loading {loading:.2}: {:?}", sol.status));
        }
        let pf = ac_power_flow(&farm, &pr.p, &sol.q_turbine, sol.omega_star).map_err(|e| e.to_string())?;
        let rel = (pf.ac_losses - sol.objective).abs() / sol.objective;
        worst_rank1 = worst_rank1.max(sol.rank1_residual);
        worst_rel = worst_rel.max(rel);
        if sol.rank1_residual > 1e-6 || rel > 5e-3 || !pf.converged {
            return Err(format!("loading {loading:.2}: rank1 {:.2e}, objective mismatch {rel:.2e}", sol.rank1_residual));
        }
    }
    if slowest >= Duration::from_secs(5) {
        return Err(format!("slowest dispatch {:.2} s", slowest.as_secs_f64()));
    }
    Ok(format!(
        "max rank1 residual {worst_rank1:.1e}, max objective mismatch {:.1e}%, slowest dispatch {:.2} s",
        100.0 * worst_rel,
        slowest.as_secs_f64()
    ))
}

fn oracle_equivalence() -> Verdict {
    let settings = SolverSettings::default();
    let oracle = OracleSettings { resolution: 21, rounds: 3, seed: 7 };
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for name in ["farm1.json", "farm2.json"] {
        let farm = load_fixture(name);
        for loading in [0.1, 0.3, 0.5, 0.7, 0.8] {
            let pr = problem(&farm, loading, FrequencyBand::default());
            let sol = frequency_search(&pr, &settings).map_err(|e| e.to_string())?.run.solution;
            let orc = grid_search_oracle(&farm, &pr.band, &pr.p, &pr.demand_line, &oracle).map_err(|e| e.to_string())?;
            let rel = (orc.losses - sol.objective).abs() / sol.objective;
            worst = worst.max(rel);
            cases += 1;
            if orc.losses < sol.objective - 10.0 * settings.gap_tol {
                return Err(format!("{name} at {loading}: oracle {} undercuts relaxation {}", orc.losses, sol.objective));
            }
            if rel > 5e-3 {
                return Err(format!("{name} at {loading}: relative gap {rel:.2e}"));
            }
        }
    }
    let elapsed = t.elapsed();
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {:.1} s", elapsed.as_secs_f64()));
    }
    Ok(format!("{cases} cases, max relative gap {:.2e}%, {:.1} s", 100.0 * worst, elapsed.as_secs_f64()))
}

fn line_quality() -> Verdict {
    let farm = load_fixture("farm12.json");
    let m = model(&farm);
    let rated = farm.p_rated();
    let (lo, hi) = (0.9, 1.1);
    let levels = linspace(0.01 * rated, 0.8 * rated, 80);
    // demand range of the whole family over the frequency window
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    for &p in &levels {
        for w in linspace(lo, hi, RESIDUAL_SCAN_POINTS) {
            let q = m.demand(w, p).map_err(|e| e.to_string())?;
            q_min = q_min.min(q);
            q_max = q_max.max(q);
        }
    }
    let range = q_max - q_min;
    let mut worst: f64 = 0.0;
    for &p in &levels {
        let line = fit_demand_line(p, (lo, hi), LINE_FIT_SAMPLES, &m).map_err(|e| e.to_string())?;
        worst = worst.max(line.max_abs_err);
    }
    let ratio = worst / range;
    if ratio > 0.01 {
        return Err(format!("max fit error {:.3}% of the demand range", 100.0 * ratio));
    }
    Ok(format!("max fit error {:.3}% of the demand range ({} levels)", 100.0 * ratio, levels.len()))
}

fn slope_signs() -> Verdict {
    let farm = load_fixture("farm12.json");
    let m = model(&farm);
    let band = FrequencyBand::default();
    let rated = farm.p_rated();
    let d1 = |f: f64| fit_demand_line(f * rated, (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, &m).map(|l| l.d1);
    let low = d1(0.01).map_err(|e| e.to_string())?;
    let high = d1(0.8).map_err(|e| e.to_string())?;
    let msg = format!("d1 = {low:.4e} at 1% and {high:.4e} at 80% of rating");
    if low < 0.0 && high > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn droop_round_trip() -> Verdict {
    let farm = load_fixture("farm12.json");
    let m = model(&farm);
    let band = FrequencyBand::default();
    let p_max = farm.p_rated();
    let droop = compute_droop_params(&band, &m, farm.n_wt(), p_max).map_err(|e| e.to_string())?;
    let at_zero = static_operating_point(&droop, 0.0, &m, farm.n_wt(), &band).map_err(|e| e.to_string())?;
    let at_max = static_operating_point(&droop, p_max, &m, farm.n_wt(), &band).map_err(|e| e.to_string())?;
    let e0 = (at_zero - band.omega_min_h).abs();
    let e1 = (at_max - band.omega_max_h).abs();
    let msg = format!("endpoint errors {e0:.1e} and {e1:.1e}");
    if e0 <= 1e-6 && e1 <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dispatch_study() -> Verdict {
    let farm = load_fixture("farm12.json");
    let text = std::fs::read_to_string(common::fixture("profile24.csv")).map_err(|e| e.to_string())?;
    let profile = DayProfile::from_csv(&text, &farm).map_err(|e| e.to_string())?;
    let opts = StudyOptions::default();
    let t = Instant::now();
    let (day, _) = run_day(&farm, &profile, &opts, None).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let mut window = 0;
    for r in &day.intervals {
        if !(0.5..=0.7).contains(&r.loading) {
            continue;
        }
        window += 1;
        match (r.converged_both, r.optimized_losses_mw, r.baseline_losses_mw) {
            (true, Some(opt), Some(base)) if opt < base => {}
            _ => return Err(format!("hour {}: optimized {:?} vs baseline {:?}", r.hour, r.optimized_losses_mw, r.baseline_losses_mw)),
        }
    }
    if window == 0 {
        return Err("no interval in the loading window".into());
    }
    if !day.summary.omega_within_band {
        return Err(format!("frequency left the band: {:?}", day.summary.omega_range));
    }
    if elapsed >= Duration::from_secs(120) {
        return Err(format!("day run took {:.1} s", elapsed.as_secs_f64()));
    }
    let mean = day.summary.mean_loss_reduction.unwrap_or(f64::NAN);
    Ok(format!(
        "{window} window intervals all improved, mean reduction {:.3}% (reference {:.1}%), day run {:.1} s",
        100.0 * mean,
        100.0 * REFERENCE_REDUCTION,
        elapsed.as_secs_f64()
    ))
}

fn contracts() -> Verdict {
    const CASES: u32 = 256;
    let solved = AtomicU32::new(0);
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    let strategy = farm_shape(4, true).prop_flat_map(|s| {
        let n = s.n_wt();
        (Just(s), setpoints(n), 0.995f64..1.005)
    });
    runner
        .run(&strategy, |(shape, (load, qfrac), omega)| {
            let farm = shape.build();
            let (p, q) = scaled_setpoints(&farm, &load, &qfrac);
            let pf = ac_power_flow(&farm, &p, &q, omega).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(pf.max_mismatch <= 1e-10, "nodal mismatch {:e}", pf.max_mismatch);
            prop_assert!(pf.conservation_residual().abs() <= 1e-9, "loss identity {:e}", pf.conservation_residual());

            let net = &farm.network;
            let w_diag: Vec<f64> = pf.bus_v.iter().map(|v| v.norm_sqr()).collect();
            let w_off: Vec<Complex64> = net.branches.iter().map(|b| pf.bus_v[b.from] * pf.bus_v[b.to].conj()).collect();
            let rec = recover_voltages(&w_diag, &w_off, net).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for (a, b) in rec.v.iter().zip(&pf.bus_v) {
                prop_assert!((a - b).norm() <= 1e-10, "recovery {a} vs {b}");
            }

            // the relaxation targets radial farms
            let farm = FarmShape { mesh: None, ..shape.clone() }.build();
            let band = FrequencyBand::default();
            let p_total: f64 = p.iter().sum();
            let line = fit_demand_line(p_total, (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, &model(&farm))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let pr = OpfProblem { farm: &farm, p: p.clone(), demand_line: line, band, regularize: false };
            let settings = SolverSettings::default();
            let u = farm.dru.ac_voltage_for_power(p_total, omega);
            let opts = OpfOptions { regularize: false, omega, u_dru: u, pin_omega: true };
            let sol = solve_opf(&pr, opts, &settings).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if sol.status.is_optimal() {
                solved.fetch_add(1, Ordering::Relaxed);
                prop_assert!(sol.max_violation <= 10.0 * settings.feas_tol, "solver residual {:e}", sol.max_violation);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let solved = solved.into_inner();
    if solved < CASES * 9 / 10 {
        return Err(format!("only {solved} of {CASES} relaxations solved"));
    }
    Ok(format!("{CASES} random networks ({solved} relaxations solved): mismatch, loss identity, solver residual, recovery"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("relaxation tightness", tightness),
        ("oracle equivalence", oracle_equivalence),
        ("demand line quality", line_quality),
        ("demand slope signs", slope_signs),
        ("droop round trip", droop_round_trip),
        ("dispatch study", dispatch_study),
        ("conservation and contracts", contracts),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("acceptance {}: PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {}: FAIL {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
