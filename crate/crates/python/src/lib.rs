//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the stdlib `json` module, so Python sees plain dicts/lists.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use ::ptcache::designs::{self, DesignError, DesignSpec, DpdaMode, SpecialKind, Theorem1Variant};
use ::ptcache::engine::{
    self, DeliverySession, DemandSet, EngineError, PlanError, SchemePlan, SimulationConfig,
};
use ::ptcache::fscalc::TxRule;
use ::ptcache::search::{self, Family, SearchConfig, SearchError};
use ::ptcache::typing::TypeVector;

create_exception!(ptcache, InfeasibleDesign, PyValueError, "A plan failed validation; args are (stage, message).");

fn plan_err(e: PlanError) -> PyErr {
    InfeasibleDesign::new_err((e.stage(), e.to_string()))
}

fn design_err(e: DesignError) -> PyErr {
    match e {
        DesignError::Plan(p) => plan_err(p),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::Plan(p) => plan_err(p),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn search_err(e: SearchError) -> PyErr {
    match e {
        SearchError::Plan(p) => plan_err(p),
        SearchError::Design(d) => design_err(d),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_rules(rules: &Bound<'_, PyDict>) -> PyResult<BTreeMap<TypeVector, TxRule>> {
    let mut out = BTreeMap::new();
    for (key, value) in rules.iter() {
        let key: String = key.extract()?;
        let v: TypeVector = key
            .parse()
            .map_err(|e: ::ptcache::typing::TypingError| PyValueError::new_err(e.to_string()))?;
        let rule = if let Ok(text) = value.extract::<String>() {
            if text != "skip" {
                return Err(PyValueError::new_err(format!("rule for {key}: expected a list or \"skip\"")));
            }
            TxRule::Skip
        } else {
            TxRule::Transmit(value.extract::<Vec<usize>>()?)
        };
        out.insert(v, rule);
    }
    Ok(out)
}

/// A validated scheme plan.
#[pyclass(name = "Plan", module = "ptcache", frozen)]
struct PyPlan {
    inner: SchemePlan,
}

fn finish(spec: DesignSpec, files: Option<usize>, memory: Option<usize>) -> PyResult<PyPlan> {
    let plan = match (files, memory) {
        (Some(n), Some(m)) => {
            let params = engine::SystemParams::new(spec.users(), n, m).map_err(plan_err)?;
            spec.plan_with(params)
        }
        (None, None) => spec.plan(),
        _ => return Err(PyValueError::new_err("give both N and M or neither")),
    }
    .map_err(plan_err)?;
    Ok(PyPlan { inner: plan })
}

#[pymethods]
impl PyPlan {
    /// Builds and validates a plan from explicit transmitter rules.
    #[new]
    #[pyo3(signature = (K, N, M, grouping, tx_rules))]
    #[allow(non_snake_case)]
    fn new(K: usize, N: usize, M: usize, grouping: Vec<usize>, tx_rules: &Bound<'_, PyDict>) -> PyResult<Self> {
        let params = engine::SystemParams::new(K, N, M).map_err(plan_err)?;
        let rules = parse_rules(tx_rules)?;
        let plan = engine::build_plan(params, &grouping, &rules).map_err(plan_err)?;
        Ok(Self { inner: plan })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: SchemePlan::from_json(&doc).map_err(plan_err)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner.to_json()).expect("plan serializes")
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.to_json())
    }

    #[getter(K)]
    fn users(&self) -> usize {
        self.inner.params.users
    }

    #[getter(N)]
    fn files(&self) -> usize {
        self.inner.params.files
    }

    #[getter(M)]
    fn memory(&self) -> usize {
        self.inner.params.memory
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.t
    }

    #[getter]
    fn grouping(&self) -> Vec<usize> {
        self.inner.grouping.sizes().to_vec()
    }

    #[getter(F_PT)]
    fn f_pt(&self) -> u64 {
        self.inner.f_pt
    }

    #[getter(F_JCM)]
    fn f_jcm(&self) -> u64 {
        self.inner.f_jcm()
    }

    /// Delivery rate as an exact fraction string such as "1/2".
    #[getter]
    fn rate(&self) -> String {
        self.inner.rate.to_string()
    }

    #[getter]
    fn subfile_types(&self) -> Vec<String> {
        self.inner.columns().iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn subfile_counts(&self) -> Vec<u64> {
        self.inner.subfile_counts.clone()
    }

    #[getter]
    fn global_fs(&self) -> Vec<u64> {
        self.inner.global.factors.clone()
    }

    /// Runs every selected demand vector; `demands` is "auto", "all", a count
    /// of random vectors, or a list of explicit vectors.
    #[pyo3(signature = (seed = 1, bytes_per_packet = 2, demands = None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        bytes_per_packet: usize,
        demands: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let demands = match demands {
            None => DemandSet::Auto,
            Some(d) => {
                if let Ok(text) = d.extract::<String>() {
                    match text.as_str() {
                        "auto" => DemandSet::Auto,
                        "all" => DemandSet::All,
                        _ => return Err(PyValueError::new_err("demands must be 'auto', 'all', a count or a list")),
                    }
                } else if let Ok(n) = d.extract::<usize>() {
                    DemandSet::Random(n)
                } else {
                    DemandSet::Explicit(d.extract::<Vec<Vec<usize>>>()?)
                }
            }
        };
        let config = SimulationConfig {
            packet_bytes: bytes_per_packet,
            seed,
            demands,
        };
        let plan = &self.inner;
        let report = py
            .detach(|| engine::simulate(plan, &config))
            .map_err(engine_err)?;
        let mut doc = serde_json::to_value(&report).expect("report serializes");
        doc["all_decoded"] = serde_json::Value::Bool(report.failures.is_empty());
        doc["passed"] = serde_json::Value::Bool(report.passed() && report.rate == plan.rate);
        to_py(py, &doc)
    }

    /// Places `files`, delivers for `demand` and decodes. Returns the
    /// transcript records plus the verdict and measurements.
    fn run<'py>(&self, py: Python<'py>, files: Vec<Vec<u8>>, demand: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
        let mut session = DeliverySession::new(&self.inner, files, demand).map_err(engine_err)?;
        session.place();
        let records: Vec<serde_json::Value> = session
            .deliver()
            .map_err(engine_err)?
            .iter()
            .map(|m| m.to_record())
            .collect();
        let report = session.decode_and_verify().map_err(engine_err)?;
        let measured = session.measure().map_err(engine_err)?;
        let doc = serde_json::json!({
            "all_decoded": report.all_ok(),
            "users": report.users,
            "measurements": measured,
            "transcript": records,
        });
        to_py(py, &doc)
    }

    /// Pseudorandom file contents determined by `seed`.
    #[pyo3(signature = (bytes_per_packet = 2, seed = 1))]
    fn random_files<'py>(&self, py: Python<'py>, bytes_per_packet: usize, seed: u64) -> PyResult<Bound<'py, PyList>> {
        let files = engine::random_files(&self.inner, bytes_per_packet, seed);
        PyList::new(py, files.iter().map(|f| PyBytes::new(py, f)))
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "Plan(K={}, N={}, M={}, grouping={:?}, F_PT={}, F_JCM={})",
            p.params.users,
            p.params.files,
            p.params.memory,
            p.grouping.sizes(),
            p.f_pt,
            p.f_jcm()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (K, tbar, variant = "orderwise", N = None, M = None))]
#[allow(non_snake_case)]
fn theorem1(K: usize, tbar: usize, variant: &str, N: Option<usize>, M: Option<usize>) -> PyResult<PyPlan> {
    let variant = match variant {
        "orderwise" => Theorem1Variant::OrderWise,
        "fallback" => Theorem1Variant::Fallback,
        other => return Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    };
    finish(designs::theorem1_design(K, tbar, variant).map_err(design_err)?, N, M)
}

#[pyfunction]
#[pyo3(signature = (K, t, N = None, M = None))]
#[allow(non_snake_case)]
fn theorem2(K: usize, t: usize, N: Option<usize>, M: Option<usize>) -> PyResult<PyPlan> {
    finish(designs::theorem2_design(K, t).map_err(design_err)?, N, M)
}

#[pyfunction]
#[pyo3(signature = (m, q, t, N = None, M = None))]
#[allow(non_snake_case)]
fn theorem3(m: usize, q: usize, t: usize, N: Option<usize>, M: Option<usize>) -> PyResult<PyPlan> {
    finish(designs::theorem3_design(m, q, t).map_err(design_err)?, N, M)
}

#[pyfunction]
#[pyo3(signature = (K, t, N = None, M = None))]
#[allow(non_snake_case)]
fn jcm(K: usize, t: usize, N: Option<usize>, M: Option<usize>) -> PyResult<PyPlan> {
    finish(designs::jcm_design(K, t).map_err(design_err)?, N, M)
}

/// `kind` is one of lemma2 (needs q), odd-k, tbar3, t3-halves, k5-t3.
#[pyfunction]
#[pyo3(signature = (kind, K, q = None, N = None, M = None))]
#[allow(non_snake_case)]
fn special(kind: &str, K: usize, q: Option<usize>, N: Option<usize>, M: Option<usize>) -> PyResult<PyPlan> {
    let kind = match kind {
        "lemma2" => SpecialKind::Lemma2 {
            q: q.ok_or_else(|| PyValueError::new_err("lemma2 needs q"))?,
        },
        "odd-k" => SpecialKind::OddKTbar2,
        "tbar3" => SpecialKind::Tbar3,
        "t3-halves" => SpecialKind::T3HalfSplit,
        "k5-t3" => SpecialKind::K5T3,
        other => return Err(PyValueError::new_err(format!("unknown design {other:?}"))),
    };
    finish(designs::special_design(kind, K).map_err(design_err)?, N, M)
}

/// `mode` is "t2" or "tkm2".
#[pyfunction]
#[pyo3(signature = (mode, K))]
#[allow(non_snake_case)]
fn dpda(mode: &str, K: usize) -> PyResult<PyPlan> {
    let mode = match mode {
        "t2" => DpdaMode::T2,
        "tkm2" => DpdaMode::TKm2,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    finish(designs::dpda_design(mode, K).map_err(design_err)?, None, None)
}

/// Exhaustive search; returns a dict with the best candidate and counters.
#[pyfunction(name = "search")]
#[pyo3(signature = (K, t, groupings = None, max_candidates = None, prune = true))]
#[allow(non_snake_case)]
fn run_search<'py>(
    py: Python<'py>,
    K: usize,
    t: usize,
    groupings: Option<Vec<Vec<usize>>>,
    max_candidates: Option<u64>,
    prune: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = SearchConfig {
        max_candidates,
        prune,
        ..SearchConfig::default()
    };
    let result = py
        .detach(|| match &groupings {
            None => search::exhaustive_search(K, t, &config),
            Some(g) => engine::SystemParams::from_t(K, t)
                .map_err(SearchError::from)
                .and_then(|params| search::search_groupings(params, t, g, &config)),
        })
        .map_err(search_err)?;
    let feasible: Vec<serde_json::Value> = result
        .feasible
        .iter()
        .map(|f| {
            serde_json::json!({
                "grouping": f.candidate.grouping,
                "tx_rules": f.candidate.tx_rules,
                "global_fs": f.global_fs,
                "F_PT": f.f_pt,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "K": result.users,
        "t": result.t,
        "F_JCM": result.f_jcm,
        "best": feasible.first(),
        "feasible": feasible,
        "explored": result.explored,
        "pruned_subtrees": result.pruned_subtrees,
        "infeasible": result.infeasible,
        "partial": result.partial,
    });
    to_py(py, &doc)
}

/// Ratio sweep; `family` is thm1, thm2, thm3 (needs m) or t3-halves.
#[pyfunction]
#[pyo3(signature = (family, params, K_min = 4, K_max = 40, m = None))]
#[allow(non_snake_case)]
fn sweep<'py>(
    py: Python<'py>,
    family: &str,
    params: Vec<usize>,
    K_min: usize,
    K_max: usize,
    m: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let family = match family {
        "thm1" => Family::Thm1,
        "thm2" => Family::Thm2,
        "thm3" => Family::Thm3 {
            m: m.ok_or_else(|| PyValueError::new_err("thm3 needs m"))?,
        },
        "t3-halves" => Family::T3HalfSplit,
        other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    };
    let sweep = py
        .detach(|| search::sweep_ratios(family, K_min..=K_max, &params))
        .map_err(search_err)?;
    let rows: Vec<serde_json::Value> = sweep
        .rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "family": r.family,
                "param": r.param,
                "K": r.users,
                "t": r.t,
                "variant": r.variant,
                "F_PT": r.f_pt,
                "F_JCM": r.f_jcm,
                "ratio": r.ratio.to_string(),
                "bound": r.bound.map(|b| b.to_string()),
            })
        })
        .collect();
    to_py(py, &serde_json::json!({"rows": rows, "notes": sweep.notes}))
}

#[pymodule(name = "ptcache")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlan>()?;
    m.add("InfeasibleDesign", m.py().get_type::<InfeasibleDesign>())?;
    m.add_function(wrap_pyfunction!(theorem1, m)?)?;
    m.add_function(wrap_pyfunction!(theorem2, m)?)?;
    m.add_function(wrap_pyfunction!(theorem3, m)?)?;
    m.add_function(wrap_pyfunction!(jcm, m)?)?;
    m.add_function(wrap_pyfunction!(special, m)?)?;
    m.add_function(wrap_pyfunction!(dpda, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_functions_round_trip_through_python() {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "ptcache").unwrap();
            init_module(&m).unwrap();
            let plan = m.getattr("theorem1").unwrap().call1((6, 2)).unwrap();
            assert_eq!(plan.getattr("F_PT").unwrap().extract::<u64>().unwrap(), 12);
            let sim = plan.call_method0("simulate").unwrap();
            assert!(sim.get_item("passed").unwrap().extract::<bool>().unwrap());
            let err = m.getattr("special").unwrap().call1(("tbar3", 8)).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
        });
    }

    #[test]
    fn infeasible_rules_raise_with_stage() {
        Python::initialize();
        Python::attach(|py| {
            let rules = PyDict::new(py);
            rules.set_item("3|0", vec![0usize]).unwrap();
            rules.set_item("2|1", vec![0usize]).unwrap();
            let err = PyPlan::new(4, 2, 1, vec![3, 1], &rules).err().unwrap();
            assert!(err.is_instance_of::<InfeasibleDesign>(py));
            let stage: String = err.value(py).getattr("args").unwrap().get_item(0).unwrap().extract().unwrap();
            assert_eq!(stage, "memory_constraint");
            rules.set_item("2|1", "sometimes").unwrap();
            assert!(PyPlan::new(4, 2, 1, vec![3, 1], &rules).is_err());
        });
    }
}
