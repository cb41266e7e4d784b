mod common;

use common::load_fixture;
use druopf::conic::Tag;
use druopf::devices::{fit_demand_line, FarmReactiveModel, FrequencyBand, LINE_FIT_SAMPLES};
use druopf::farm::Farm;
use druopf::opf::{build_opf, frequency_iteration, frequency_search, solve_at_frequency, OpfOptions, OpfProblem};
use druopf::oracle::{grid_search_oracle, OracleSettings};
use druopf::powerflow::ac_power_flow;
use druopf::solver::SolverSettings;
use druopf::Error;

fn problem(farm: &Farm, loading: f64, band: FrequencyBand) -> OpfProblem<'_> {
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru).unwrap();
    let p: Vec<f64> = farm.turbines.iter().map(|t| loading * t.p_max).collect();
    let line = fit_demand_line(p.iter().sum(), (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, &model).unwrap();
    OpfProblem { farm, p, demand_line: line, band, regularize: false }
}

fn options(reg: bool) -> OpfOptions {
    OpfOptions { regularize: reg, omega: 1.0, u_dru: 1.0, pin_omega: false }
}

#[test]
fn two_bus_structure() {
    let farm = load_fixture("farm1.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    // W_dd, W_tt, Re/Im W_td, Q_t, omega, and the four end flows
    let (prog, _) = build_opf(&pr, options(false)).unwrap();
    assert_eq!(prog.n_vars(), 10);
    let expected: std::collections::BTreeSet<Tag> = [
        Tag::VoltageBounds,
        Tag::Capability,
        Tag::FlowLimit,
        Tag::NodalBalance,
        Tag::BranchFlow,
        Tag::FrequencyBand,
        Tag::ReactiveDemand,
        Tag::WCone,
        Tag::Objective,
    ]
    .into();
    assert_eq!(prog.tags(), expected);

    let reg = OpfProblem { regularize: true, ..pr.clone() };
    let (prog, _) = build_opf(&reg, options(true)).unwrap();
    assert_eq!(prog.n_vars(), 11);
    assert!(prog.tags().contains(&Tag::Regularization));
    prog.validate().unwrap();
}

#[test]
fn dump_is_deterministic() {
    let farm = load_fixture("farm12.json");
    let pr = problem(&farm, 0.6, FrequencyBand::default());
    let a = build_opf(&pr, options(false)).unwrap().0.to_text();
    let b = build_opf(&pr, options(false)).unwrap().0.to_text();
    assert_eq!(a, b);
    let back = druopf::conic::ConicProgram::from_text(&a).unwrap();
    assert_eq!(back.to_text(), a);
}

#[test]
fn out_of_range_voltage_is_infeasible() {
    let farm = load_fixture("farm1.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let opts = OpfOptions { u_dru: 1.5, ..options(false) };
    assert!(matches!(build_opf(&pr, opts), Err(Error::InfeasibleBounds(_))));
}

#[test]
fn fixed_point_start_stops_after_one_solve() {
    let farm = load_fixture("farm1.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let s = SolverSettings::default();
    let first = frequency_iteration(&pr, None, 1e-5, 50, &s).unwrap();
    assert!(first.converged);
    let start = (*first.omega_trace.last().unwrap(), *first.u_trace.last().unwrap());
    let again = frequency_iteration(&pr, Some(start), 1e-5, 50, &s).unwrap();
    assert!(again.converged);
    assert_eq!(again.iterations, 1);
}

#[test]
fn collapsed_band_holds_nominal_frequency() {
    let farm = load_fixture("farm2.json");
    let band = FrequencyBand::new(1.0, 1.0, 1.0).unwrap();
    let pr = problem(&farm, 0.6, band);
    assert_eq!(pr.demand_line.d1, 0.0);
    let run = frequency_iteration(&pr, None, 1e-9, 50, &SolverSettings::default()).unwrap();
    assert!(run.converged);
    assert!(run.omega_trace.iter().all(|&w| (w - 1.0).abs() < 1e-9));
    // the rectifier voltage still needs a few passes
    assert!(run.iterations >= 1);
}

#[test]
fn voltage_iteration_contracts() {
    let farm = load_fixture("farm12.json");
    let pr = problem(&farm, 0.7, FrequencyBand::default());
    let run = solve_at_frequency(&pr, 1.002, None, 1e-10, 20, &SolverSettings::default()).unwrap();
    assert!(run.converged);
    let steps: Vec<f64> = run.u_trace.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for pair in steps.windows(2) {
        if pair[0] > 1e-9 {
            assert!(pair[1] <= 0.5 * pair[0], "steps {steps:?}");
        }
    }
}

#[test]
fn search_is_no_worse_than_nominal() {
    let farm = load_fixture("farm2.json");
    let pr = problem(&farm, 0.4, FrequencyBand::default());
    let s = SolverSettings::default();
    let best = frequency_search(&pr, &s).unwrap();
    let nominal = solve_at_frequency(&pr, 1.0, None, 1e-9, 20, &s).unwrap();
    let sol = &best.run.solution;
    assert!(sol.status.is_optimal());
    assert!(pr.band.contains(sol.omega_star));
    assert!(sol.objective <= nominal.solution.objective + 1e-9);
    assert!(best.evaluations.len() >= 11);
}

#[test]
fn relaxation_is_exact_on_radial_farm() {
    let farm = load_fixture("farm12.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let sol = frequency_search(&pr, &SolverSettings::default()).unwrap().run.solution;
    assert!(sol.rank1_residual <= 1e-6);
    let pf = ac_power_flow(&farm, &pr.p, &sol.q_turbine, sol.omega_star).unwrap();
    for (a, b) in sol.recovered_v.iter().zip(&pf.bus_v) {
        assert!((a.norm() - b.norm()).abs() < 1e-4);
    }
}

#[test]
fn oracle_argument_checks() {
    let farm = load_fixture("farm12.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let r = grid_search_oracle(&farm, &pr.band, &pr.p, &pr.demand_line, &OracleSettings::default());
    assert!(matches!(r, Err(Error::OracleDimension(12))));

    let farm = load_fixture("farm2.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let coarse = OracleSettings { resolution: 10, rounds: 0, seed: 0 };
    let r = grid_search_oracle(&farm, &pr.band, &pr.p, &pr.demand_line, &coarse);
    assert!(matches!(r, Err(Error::InvalidParameter(_))));
}

#[test]
fn oracle_refines_monotonically_and_ignores_seed() {
    let farm = load_fixture("farm2.json");
    let pr = problem(&farm, 0.5, FrequencyBand::default());
    let run = |resolution, seed| {
        let s = OracleSettings { resolution, rounds: 0, seed };
        grid_search_oracle(&farm, &pr.band, &pr.p, &pr.demand_line, &s).unwrap()
    };
    // the 21-point grid contains every 11-point node
    let a = run(11, 0);
    let b = run(21, 0);
    assert!(b.losses <= a.losses);
    let c = run(21, 99);
    assert_eq!(b.losses, c.losses);
    assert_eq!(b.q_turbine, c.q_turbine);
    assert_eq!(b.evaluated, 21 * 21);
}
