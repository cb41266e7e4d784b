use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use druopf::devices::{
    demand_curves, fit_demand_line, fit_quadratic_surface, linspace, FarmReactiveModel, FrequencyBand, LINE_FIT_SAMPLES,
};
use druopf::farm::{load_farm_file, Farm};
use druopf::opf::{frequency_search, OpfProblem};
use druopf::oracle::{grid_search_oracle, OracleSettings};
use druopf::report;
use druopf::solver::{Scaling, SolverSettings};
use druopf::study::{run_day, solve_interval, DayProfile, Interval, IntervalRecord, IntervalStatus, StudyOptions};
use druopf::Error;

const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_FAILED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "druopf", version, about = "Loss-minimizing frequency and reactive dispatch for DRU-connected wind farms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the farm reactive demand over frequency and loading.
    Curves(CommonArgs),
    /// Fit the linear demand approximation at one loading.
    Linefit(PointArgs),
    /// Optimize a single interval.
    Solve(PointArgs),
    /// Optimize every interval of a profile and write the day report.
    Day(DayArgs),
    /// Grid-search reference for small farms.
    Oracle(OracleArgs),
    /// Load and check a network file.
    ValidateNetwork(NetworkArgs),
}

#[derive(Args, Debug)]
struct NetworkArgs {
    #[arg(long)]
    network: PathBuf,
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long)]
    network: PathBuf,
    /// Frequency band as lo,hi,nominal (per unit).
    #[arg(long, value_parser = parse_band, default_value = "0.995,1.005,1.0")]
    band: FrequencyBand,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long)]
    regularize: bool,
    #[arg(long)]
    solver_feas_tol: Option<f64>,
    #[arg(long)]
    solver_gap_tol: Option<f64>,
    #[arg(long)]
    solver_max_iter: Option<u32>,
    /// none or ruiz
    #[arg(long)]
    solver_scaling: Option<String>,
}

#[derive(Args, Debug)]
struct PointArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    hour: Option<u32>,
    /// Uniform loading (fraction of rated) used when no profile is given.
    #[arg(long, default_value_t = 0.6)]
    loading: f64,
    #[arg(long)]
    dump_conic: bool,
}

#[derive(Args, Debug)]
struct DayArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    dump_conic: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Schema(_)
                | Error::UnknownEndpoint(_)
                | Error::DuplicateId(_)
                | Error::Disconnected(_)
                | Error::InvalidNetwork(_)
                | Error::SingularBranch { .. }
                | Error::InvalidParameter(_)
                | Error::Profile(_)
                | Error::OracleDimension(_)
                | Error::Json(_)
                | Error::Io(_) => EXIT_USAGE,
                _ => EXIT_FAILED,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn parse_band(s: &str) -> Result<FrequencyBand, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}")))
        .collect::<Result<_, _>>()?;
    let [lo, hi, nom] = v[..] else {
        return Err("expected lo,hi,nominal".into());
    };
    FrequencyBand::new(lo, hi, nom).map_err(|e| e.to_string())
}

fn solver_settings(a: &SolverArgs) -> CliResult<SolverSettings> {
    let mut s = SolverSettings::from_env()?;
    if let Some(v) = a.solver_feas_tol {
        s.feas_tol = v;
    }
    if let Some(v) = a.solver_gap_tol {
        s.gap_tol = v;
    }
    if let Some(v) = a.solver_max_iter {
        s.max_iter = v;
    }
    if let Some(v) = &a.solver_scaling {
        s.scaling = match v.to_ascii_lowercase().as_str() {
            "none" => Scaling::None,
            "ruiz" => Scaling::Ruiz,
            _ => return Err(CliError::Usage(format!("unknown scaling {v:?}"))),
        };
    }
    s.validate()?;
    Ok(s)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, contents).map_err(Error::from)?;
    Ok(())
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn read_profile(farm: &Farm, path: &Path) -> CliResult<DayProfile> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    Ok(DayProfile::from_csv(&text, farm)?)
}

/// The interval named by `--profile`/`--hour`, or a uniform loading.
fn pick_interval(farm: &Farm, a: &PointArgs) -> CliResult<Interval> {
    match (&a.profile, a.hour) {
        (Some(path), hour) => {
            let profile = read_profile(farm, path)?;
            let hour = hour.unwrap_or(profile.intervals[0].hour);
            profile
                .interval(hour)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("profile has no hour {hour}")))
        }
        (None, Some(_)) => Err(CliError::Usage("--hour needs --profile".into())),
        (None, None) => {
            if !(0.0..=1.0).contains(&a.loading) {
                return Err(CliError::Usage("--loading must lie in [0, 1]".into()));
            }
            let s_base = farm.network.base.s_base_mva;
            let p_mw = farm.turbines.iter().map(|t| a.loading * t.p_max * s_base).collect();
            Ok(Interval { hour: 0, p_mw })
        }
    }
}

fn exit_for(records: &[IntervalRecord]) -> u8 {
    let ok = records.iter().filter(|r| r.converged_both).count();
    if ok == records.len() {
        0
    } else if ok == 0 {
        EXIT_FAILED
    } else {
        EXIT_PARTIAL
    }
}

fn cmd_validate(a: &NetworkArgs) -> CliResult<u8> {
    let farm = load_farm_file(&a.network)?;
    let net = &farm.network;
    let summary = json!({
        "buses": net.buses.len(),
        "branches": net.branches.len(),
        "turbines": farm.n_wt(),
        "topology": format!("{:?}", net.topology).to_lowercase(),
        "p_rated_mw": farm.p_rated() * net.base.s_base_mva,
    });
    print!("{}", to_json(&summary));
    Ok(0)
}

fn cmd_curves(a: &CommonArgs) -> CliResult<u8> {
    let farm = load_farm_file(&a.network)?;
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru)?;
    let s_base = farm.network.base.s_base_mva;
    let p_levels = linspace(0.1 * farm.p_rated(), farm.p_rated(), 10);
    let omegas = linspace(a.band.omega_min_h, a.band.omega_max_h, LINE_FIT_SAMPLES);
    let rows: Vec<_> = demand_curves(&model, &p_levels, &omegas)?
        .into_iter()
        .map(|(w, p, q)| (w, p * s_base, q * s_base))
        .collect();
    write(&a.out.join("curves.csv"), report::curves_csv(&rows))?;
    write(&a.out.join("plots").join("curves.svg"), report::curves_plot(&rows))?;
    println!("wrote {} samples to {}", rows.len(), a.out.display());
    Ok(0)
}

fn cmd_linefit(a: &PointArgs) -> CliResult<u8> {
    let farm = load_farm_file(&a.common.network)?;
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru)?;
    let interval = pick_interval(&farm, a)?;
    let s_base = farm.network.base.s_base_mva;
    let p_total = interval.p_mw.iter().sum::<f64>() / s_base;
    let band = a.common.band;
    let range = (band.omega_min_h, band.omega_max_h);
    let line = fit_demand_line(p_total, range, LINE_FIT_SAMPLES, &model)?;
    let quad = fit_quadratic_surface(&linspace(0.1 * farm.p_rated(), farm.p_rated(), 10), range, &model).ok();
    let doc = json!({
        "hour": interval.hour,
        "p_total_mw": p_total * s_base,
        "line_pu": line,
        "d1_mvar": line.d1 * s_base,
        "d2_mvar": line.d2 * s_base,
        "max_abs_err_mvar": line.max_abs_err * s_base,
        "quadratic_pu": quad,
    });
    write(&a.common.out.join("linefit.json"), to_json(&doc))?;
    print!("{}", to_json(&doc));
    Ok(0)
}

fn cmd_solve(a: &PointArgs) -> CliResult<u8> {
    let farm = load_farm_file(&a.common.network)?;
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru)?;
    let interval = pick_interval(&farm, a)?;
    let opts = StudyOptions { band: a.common.band, regularize: a.solver.regularize, solver: solver_settings(&a.solver)? };
    let outcome = solve_interval(&farm, &model, &interval, &opts);
    let out = &a.common.out;
    write(&out.join(format!("interval_{:03}.json", interval.hour)), to_json(&outcome.record))?;
    if a.dump_conic {
        if let Some(text) = &outcome.program {
            write(&out.join("conic").join(format!("interval_{:03}.txt", interval.hour)), text)?;
        }
    }
    print_record(&outcome.record);
    Ok(exit_for(std::slice::from_ref(&outcome.record)))
}

fn print_record(r: &IntervalRecord) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!(
        "hour {:3} loading {:.3} {:<18} omega {} optimized {} MW baseline {} MW",
        r.hour,
        r.loading,
        format!("{:?}", r.status),
        f(r.omega_star),
        f(r.optimized_losses_mw),
        f(r.baseline_losses_mw)
    );
    if r.status != IntervalStatus::Converged {
        if let Some(m) = &r.message {
            println!("  {m}");
        }
    }
}

fn cmd_day(a: &DayArgs) -> CliResult<u8> {
    let farm = load_farm_file(&a.common.network)?;
    let profile = read_profile(&farm, &a.profile)?;
    if a.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let opts = StudyOptions { band: a.common.band, regularize: a.solver.regularize, solver: solver_settings(&a.solver)? };
    let (day, programs) = run_day(&farm, &profile, &opts, a.jobs)?;
    let out = &a.common.out;
    for (rec, prog) in day.intervals.iter().zip(&programs) {
        write(&out.join(format!("interval_{:03}.json", rec.hour)), to_json(rec))?;
        if let (true, Some(text)) = (a.dump_conic, prog) {
            write(&out.join("conic").join(format!("interval_{:03}.txt", rec.hour)), text)?;
        }
        print_record(rec);
    }
    write(&out.join("day_report.json"), to_json(&day))?;
    write(&out.join("day_report.csv"), report::day_csv(&day))?;
    for (name, svg) in report::day_plots(&day) {
        write(&out.join("plots").join(format!("{name}.svg")), svg)?;
    }
    let s = &day.summary;
    match s.mean_loss_reduction {
        Some(m) => println!(
            "{}/{} intervals converged; mean loss reduction {:.4}% over {} intervals at loading {:.1}-{:.1} (reference {:.1}%)",
            s.converged_both,
            s.intervals,
            100.0 * m,
            s.window_intervals,
            s.summary_window.0,
            s.summary_window.1,
            100.0 * s.reference_loss_reduction
        ),
        None => println!("{}/{} intervals converged; no intervals in the summary window", s.converged_both, s.intervals),
    }
    Ok(exit_for(&day.intervals))
}

fn cmd_oracle(a: &OracleArgs) -> CliResult<u8> {
    let p = &a.point;
    let farm = load_farm_file(&p.common.network)?;
    let model = FarmReactiveModel::from_parts(&farm.network, &farm.turbines, &farm.dru)?;
    let interval = pick_interval(&farm, p)?;
    let s_base = farm.network.base.s_base_mva;
    let pu: Vec<f64> = interval.p_mw.iter().map(|v| v / s_base).collect();
    let band = p.common.band;
    let line = fit_demand_line(pu.iter().sum(), (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, &model)?;
    let settings = OracleSettings { resolution: a.resolution, rounds: a.rounds, seed: a.seed };
    let oracle = grid_search_oracle(&farm, &band, &pu, &line, &settings)?;

    let problem = OpfProblem { farm: &farm, p: pu, demand_line: line, band, regularize: p.solver.regularize };
    let dispatch = frequency_search(&problem, &solver_settings(&p.solver)?)?;
    let sol = &dispatch.run.solution;
    let optimal = sol.status.is_optimal();
    let rel_gap = (optimal && oracle.losses > 0.0).then(|| (oracle.losses - sol.objective) / oracle.losses);
    let doc = json!({
        "hour": interval.hour,
        "oracle": {
            "omega": oracle.omega,
            "q_turbine_mvar": oracle.q_turbine.iter().map(|q| q * s_base).collect::<Vec<_>>(),
            "losses_mw": oracle.losses * s_base,
            "evaluated": oracle.evaluated,
            "feasible": oracle.feasible,
            "cell": oracle.cell,
        },
        "relaxation": {
            "status": sol.status,
            "omega": sol.omega_star,
            "q_turbine_mvar": sol.q_turbine.iter().map(|q| q * s_base).collect::<Vec<_>>(),
            "losses_mw": sol.objective * s_base,
        },
        "relative_gap": rel_gap,
        "settings": settings,
    });
    write(&p.common.out.join(format!("oracle_{:03}.json", interval.hour)), to_json(&doc))?;
    print!("{}", to_json(&doc));
    Ok(if optimal { 0 } else { EXIT_FAILED })
}

fn run(cli: Cli) -> CliResult<u8> {
    match &cli.command {
        Command::Curves(a) => cmd_curves(a),
        Command::Linefit(a) => cmd_linefit(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Day(a) => cmd_day(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::ValidateNetwork(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
