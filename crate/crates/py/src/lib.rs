//! Python bindings. Results come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use druopf::devices::{self, FarmReactiveModel, FrequencyBand, LINE_FIT_SAMPLES};
use druopf::farm;
use druopf::oracle::{self, OracleSettings};
use druopf::powerflow;
use druopf::solver::SolverSettings;
use druopf::study::{self, DayProfile, Interval, StudyOptions};
use druopf::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Schema(_)
        | Error::UnknownEndpoint(_)
        | Error::DuplicateId(_)
        | Error::Disconnected(_)
        | Error::InvalidNetwork(_)
        | Error::InvalidParameter(_)
        | Error::Profile(_)
        | Error::Json(_)
        | Error::OracleDimension(_)
        | Error::Capability { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &value)
}

fn band_of(band: (f64, f64, f64)) -> PyResult<FrequencyBand> {
    FrequencyBand::new(band.0, band.1, band.2).map_err(py_err)
}

/// A wind farm: collection network, turbines and the rectifier station.
#[pyclass(name = "Farm", frozen)]
struct PyFarm {
    inner: farm::Farm,
    model: FarmReactiveModel,
}

impl PyFarm {
    fn wrap(inner: farm::Farm) -> PyResult<Self> {
        let model = FarmReactiveModel::from_parts(&inner.network, &inner.turbines, &inner.dru).map_err(py_err)?;
        Ok(Self { inner, model })
    }

    fn s_base(&self) -> f64 {
        self.inner.network.base.s_base_mva
    }
}

#[pymethods]
impl PyFarm {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::wrap(farm::load_farm(text).map_err(py_err)?)
    }

    #[getter]
    fn n_wt(&self) -> usize {
        self.inner.n_wt()
    }

    #[getter]
    fn s_base_mva(&self) -> f64 {
        self.s_base()
    }

    #[getter]
    fn p_rated_mw(&self) -> f64 {
        self.inner.p_rated() * self.s_base()
    }

    #[getter]
    fn turbine_ids(&self) -> Vec<String> {
        (0..self.inner.n_wt()).map(|t| self.inner.turbine_id(t).to_string()).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Farm reactive demand in per unit at frequency `omega` and total
    /// active power `p_farm` (per unit).
    fn demand(&self, omega: f64, p_farm: f64) -> PyResult<f64> {
        self.model.farm_demand(omega, p_farm).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Farm(buses={}, branches={}, turbines={})",
            self.inner.network.buses.len(),
            self.inner.network.branches.len(),
            self.inner.n_wt()
        )
    }
}

#[pyfunction]
fn load_farm(path: &str) -> PyResult<PyFarm> {
    PyFarm::wrap(farm::load_farm_file(path).map_err(py_err)?)
}

/// Rows `(omega, p_farm, q_farm)` in per unit.
#[pyfunction]
fn demand_curves(farm: &PyFarm, p_levels: Vec<f64>, omegas: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
    devices::demand_curves(&farm.model, &p_levels, &omegas).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (farm, p_total, omega_lo=0.995, omega_hi=1.005))]
fn fit_demand_line<'py>(
    py: Python<'py>,
    farm: &PyFarm,
    p_total: f64,
    omega_lo: f64,
    omega_hi: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let line = devices::fit_demand_line(p_total, (omega_lo, omega_hi), LINE_FIT_SAMPLES, &farm.model).map_err(py_err)?;
    serialize(py, &line)
}

/// AC power flow at per-unit turbine setpoints.
#[pyfunction]
#[pyo3(signature = (farm, p, q, omega=1.0))]
fn power_flow<'py>(py: Python<'py>, farm: &PyFarm, p: Vec<f64>, q: Vec<f64>, omega: f64) -> PyResult<Bound<'py, PyAny>> {
    let pf = py.detach(|| powerflow::ac_power_flow(&farm.inner, &p, &q, omega)).map_err(py_err)?;
    let out = serialize(py, &pf)?;
    out.set_item("conservation_residual", pf.conservation_residual())?;
    Ok(out)
}

/// Optimizes one interval given per-turbine output in MW.
#[pyfunction]
#[pyo3(signature = (farm, p_mw, band=(0.995, 1.005, 1.0), regularize=false, hour=0))]
fn solve_interval<'py>(
    py: Python<'py>,
    farm: &PyFarm,
    p_mw: Vec<f64>,
    band: (f64, f64, f64),
    regularize: bool,
    hour: u32,
) -> PyResult<Bound<'py, PyAny>> {
    if p_mw.len() != farm.inner.n_wt() {
        return Err(PyValueError::new_err(format!("expected {} turbine outputs", farm.inner.n_wt())));
    }
    let opts = StudyOptions { band: band_of(band)?, regularize, solver: SolverSettings::from_env().map_err(py_err)? };
    let interval = Interval { hour, p_mw };
    let outcome = py.detach(|| study::solve_interval(&farm.inner, &farm.model, &interval, &opts));
    serialize(py, &outcome.record)
}

/// Grid-search reference at per-unit turbine outputs (small farms only).
#[pyfunction]
#[pyo3(signature = (farm, p, band=(0.995, 1.005, 1.0), resolution=21, rounds=3, seed=0))]
fn grid_search_oracle<'py>(
    py: Python<'py>,
    farm: &PyFarm,
    p: Vec<f64>,
    band: (f64, f64, f64),
    resolution: usize,
    rounds: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let band = band_of(band)?;
    let p_total: f64 = p.iter().sum();
    let line = devices::fit_demand_line(p_total, (band.omega_min_h, band.omega_max_h), LINE_FIT_SAMPLES, &farm.model)
        .map_err(py_err)?;
    let settings = OracleSettings { resolution, rounds, seed };
    let res = py.detach(|| oracle::grid_search_oracle(&farm.inner, &band, &p, &line, &settings)).map_err(py_err)?;
    serialize(py, &res)
}

/// Runs a day study from `hour,turbine_id,p_mw` CSV text.
#[pyfunction]
#[pyo3(signature = (farm, profile_csv, band=(0.995, 1.005, 1.0), regularize=false, jobs=None))]
fn run_day<'py>(
    py: Python<'py>,
    farm: &PyFarm,
    profile_csv: &str,
    band: (f64, f64, f64),
    regularize: bool,
    jobs: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let profile = DayProfile::from_csv(profile_csv, &farm.inner).map_err(py_err)?;
    let opts = StudyOptions { band: band_of(band)?, regularize, solver: SolverSettings::from_env().map_err(py_err)? };
    let (report, _) = py.detach(|| study::run_day(&farm.inner, &profile, &opts, jobs)).map_err(py_err)?;
    serialize(py, &report)
}

#[pymodule]
fn druopf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFarm>()?;
    m.add_function(wrap_pyfunction!(load_farm, m)?)?;
    m.add_function(wrap_pyfunction!(demand_curves, m)?)?;
    m.add_function(wrap_pyfunction!(fit_demand_line, m)?)?;
    m.add_function(wrap_pyfunction!(power_flow, m)?)?;
    m.add_function(wrap_pyfunction!(solve_interval, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_day, m)?)?;
    Ok(())
}
