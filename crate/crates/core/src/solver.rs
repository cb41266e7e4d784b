//! Conic solver contract and the interior-point backend.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::Serialize;

use crate::conic::{ConicProgram, Relation};
use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "DRUOPF_SOLVER_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    Ruiz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub scaling: Scaling,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { feas_tol: 1e-8, gap_tol: 1e-8, max_iter: 200, scaling: Scaling::Ruiz }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("solver max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Defaults overridden by `DRUOPF_SOLVER_{FEAS_TOL,GAP_TOL,MAX_ITER,SCALING}`.
    pub fn from_env() -> Result<Self> {
        Self::default().with_overrides(|k| std::env::var(k).ok())
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |name: &str| lookup(&format!("{ENV_PREFIX}{name}"));
        let bad = |name: &str, v: &str| Error::InvalidParameter(format!("{ENV_PREFIX}{name}: cannot parse {v:?}"));
        if let Some(v) = get("FEAS_TOL") {
            self.feas_tol = v.trim().parse().map_err(|_| bad("FEAS_TOL", &v))?;
        }
        if let Some(v) = get("GAP_TOL") {
            self.gap_tol = v.trim().parse().map_err(|_| bad("GAP_TOL", &v))?;
        }
        if let Some(v) = get("MAX_ITER") {
            self.max_iter = v.trim().parse().map_err(|_| bad("MAX_ITER", &v))?;
        }
        if let Some(v) = get("SCALING") {
            self.scaling = match v.trim().to_ascii_lowercase().as_str() {
                "none" => Scaling::None,
                "ruiz" => Scaling::Ruiz,
                _ => return Err(bad("SCALING", &v)),
            };
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalError,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverResult {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// Multipliers in program order: rows first, then cone blocks.
    pub dual: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// Largest relative row or cone violation of `primal`.
    pub max_violation: f64,
}

pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<SolverResult>;
}

/// Primal-dual interior-point method on the homogeneous embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

impl ConicSolver for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<SolverResult> {
        program.validate()?;
        settings.validate()?;
        let start = Instant::now();
        let n = program.n_vars();

        // A x + s = b with s in the cone product
        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let push_cone = |cones: &mut Vec<SupportedConeT<f64>>, cone: SupportedConeT<f64>| {
            match (cones.last_mut(), &cone) {
                (Some(SupportedConeT::ZeroConeT(k)), SupportedConeT::ZeroConeT(1)) => *k += 1,
                (Some(SupportedConeT::NonnegativeConeT(k)), SupportedConeT::NonnegativeConeT(1)) => *k += 1,
                _ => cones.push(cone),
            }
        };
        for row in &program.rows {
            let r = b.len();
            for &(j, c) in &row.expr.terms {
                ai.push(r);
                aj.push(j);
                av.push(c);
            }
            b.push(row.rhs - row.expr.constant);
            let cone = match row.relation {
                Relation::Eq => SupportedConeT::ZeroConeT(1),
                Relation::Le => SupportedConeT::NonnegativeConeT(1),
            };
            push_cone(&mut cones, cone);
        }
        for cone in &program.cones {
            for e in std::iter::once(&cone.scalar).chain(&cone.vector) {
                let r = b.len();
                for &(j, c) in &e.terms {
                    ai.push(r);
                    aj.push(j);
                    av.push(-c);
                }
                b.push(e.constant);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + cone.vector.len()));
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(j, c) in &program.objective.terms {
            q[j] += c;
        }

        let cl_settings = DefaultSettings {
            tol_feas: settings.feas_tol,
            tol_gap_abs: settings.gap_tol,
            tol_gap_rel: settings.gap_tol,
            max_iter: settings.max_iter,
            equilibrate_enable: settings.scaling == Scaling::Ruiz,
            verbose: false,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, cl_settings)
            .map_err(|e| Error::Solver(e.to_string()))?;
        solver.solve();
        let sol = &solver.solution;
        let primal = sol.x.clone();
        let max_violation = if primal.iter().all(|v| v.is_finite()) {
            program.max_violation(&primal)
        } else {
            f64::INFINITY
        };
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                if max_violation <= 10.0 * settings.feas_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalError
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
            _ => SolveStatus::NumericalError,
        };
        Ok(SolverResult {
            status,
            objective: program.objective_value(&primal),
            dual: Some(sol.z.clone()),
            primal,
            iterations: sol.iterations,
            solve_time: start.elapsed().as_secs_f64(),
            max_violation,
        })
    }
}

/// Solves with the default backend.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<SolverResult> {
    ClarabelBackend.solve(program, settings)
}
