use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown endpoint \"{0}\"")]
    UnknownEndpoint(String),

    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),

    #[error("network is disconnected: bus \"{0}\" is unreachable")]
    Disconnected(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("branch {from}-{to} has zero series impedance")]
    SingularBranch { from: String, to: String },

    #[error("operation requires a radial network")]
    MeshedTopology,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("commutation overlap {mu:.4} rad leaves the single-overlap mode (< pi/3)")]
    OverlapLimit { mu: f64 },

    #[error("no equilibrium on the frequency band: droop supply minus demand keeps one sign")]
    NoEquilibrium,

    #[error("degenerate droop: demand is flat across the band (k_h = 0)")]
    DegenerateDroop,

    #[error("rank-deficient sample set for least-squares fit")]
    RankDeficient,

    #[error("degenerate coupling on branch {0}: |W_ij| is zero")]
    DegenerateCoupling(usize),

    #[error("nonpositive squared voltage at bus {0}")]
    NonpositiveVoltage(usize),

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("capability violation: turbine {turbine} needs {needed:.6} p.u. reactive but can supply {available:.6}")]
    Capability {
        turbine: usize,
        needed: f64,
        available: f64,
    },

    #[error("no feasible candidate at this resolution")]
    NoFeasibleCandidate,

    #[error("dimensionality too high for the grid-search oracle ({0} > 3)")]
    OracleDimension(usize),

    #[error("conic format: line {line}: {msg}")]
    ConicFormat { line: usize, msg: String },

    #[error("solver backend: {0}")]
    Solver(String),

    #[error("profile: {0}")]
    Profile(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
