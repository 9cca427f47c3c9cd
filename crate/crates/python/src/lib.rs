//! Python bindings: programs, expressions, type inference, counting and the verifier.

use std::collections::HashMap;
use std::time::Duration;

use masq_core::counting::Counter;
use masq_core::verifier::{pm_check, qms_compute, EngineConfig, EngineKind};
use masq_core::{infer, make_domain, parse_expr, DomainConfig, VarClass};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Finite domain of n-bit values with GF(2^n) multiplication.
#[pyclass(name = "Domain", frozen, from_py_object)]
#[derive(Clone)]
struct PyDomain {
    inner: DomainConfig,
}

#[pymethods]
impl PyDomain {
    #[new]
    #[pyo3(signature = (bits = 8, poly = None))]
    fn new(bits: u32, poly: Option<u32>) -> PyResult<Self> {
        Ok(PyDomain { inner: make_domain(bits, poly).map_err(value_err)? })
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.inner.bits()
    }

    #[getter]
    fn poly(&self) -> u32 {
        self.inner.poly()
    }

    #[getter]
    fn size(&self) -> u32 {
        self.inner.size()
    }

    fn gf_mul(&self, a: u32, b: u32) -> PyResult<u32> {
        if !self.inner.contains(a) || !self.inner.contains(b) {
            return Err(value_err(format!("operands must be below {}", self.inner.size())));
        }
        Ok(self.inner.gf_mul(a, b))
    }

    fn __repr__(&self) -> String {
        format!("Domain(bits={}, poly={:#x})", self.inner.bits(), self.inner.poly())
    }
}

fn domain_or_default(d: Option<&PyDomain>) -> PyResult<DomainConfig> {
    match d {
        Some(d) => Ok(d.inner.clone()),
        None => make_domain(8, None).map_err(value_err),
    }
}

/// Expression over public, secret and random variables.
#[pyclass(name = "Expr", frozen)]
struct PyExpr {
    inner: masq_core::Expr,
}

#[pymethods]
impl PyExpr {
    /// Names not listed in `secrets` or `randoms` are public.
    #[new]
    #[pyo3(signature = (text, secrets = Vec::new(), randoms = Vec::new()))]
    fn new(text: &str, secrets: Vec<String>, randoms: Vec<String>) -> PyResult<Self> {
        let class_of = |name: &str| {
            Some(if secrets.iter().any(|s| s == name) {
                VarClass::Secret
            } else if randoms.iter().any(|r| r == name) {
                VarClass::Random
            } else {
                VarClass::Public
            })
        };
        Ok(PyExpr { inner: parse_expr(text, class_of).map_err(value_err)? })
    }

    /// Distribution type and rule trace from the type system alone.
    fn infer(&self) -> (String, Vec<String>) {
        let j = infer(&self.inner);
        (j.ty.to_string(), j.rule_trace.iter().map(|r| r.to_string()).collect())
    }

    #[pyo3(signature = (domain = None))]
    fn simplify(&self, domain: Option<&PyDomain>) -> PyResult<PyExpr> {
        Ok(PyExpr { inner: masq_core::simplify(&self.inner, &domain_or_default(domain)?) })
    }

    /// Exact QMS as `(num, den)`.
    #[pyo3(signature = (domain = None, jobs = 1))]
    fn qms(&self, py: Python<'_>, domain: Option<&PyDomain>, jobs: usize) -> PyResult<(u64, u64)> {
        let d = domain_or_default(domain)?;
        let q = py
            .detach(|| Counter::new(&d).with_jobs(jobs).qms_exact(&self.inner))
            .map_err(runtime_err)?;
        Ok((q.num, q.den))
    }

    #[pyo3(signature = (domain = None))]
    fn is_uniform(&self, py: Python<'_>, domain: Option<&PyDomain>) -> PyResult<bool> {
        let d = domain_or_default(domain)?;
        py.detach(|| Counter::new(&d).check_uniform(&self.inner)).map_err(runtime_err)
    }

    #[pyo3(signature = (domain = None))]
    fn is_si(&self, py: Python<'_>, domain: Option<&PyDomain>) -> PyResult<bool> {
        let d = domain_or_default(domain)?;
        let (si, _) = py.detach(|| Counter::new(&d).check_si(&self.inner)).map_err(runtime_err)?;
        Ok(si)
    }

    /// Output distribution for fixed public and secret values.
    #[pyo3(signature = (sigma, domain = None))]
    fn distribution(&self, sigma: HashMap<String, u32>, domain: Option<&PyDomain>) -> PyResult<Vec<u64>> {
        let d = domain_or_default(domain)?;
        let sigma = self
            .inner
            .vars()
            .into_iter()
            .filter(|v| !v.is_random())
            .map(|v| match sigma.get(v.name()) {
                Some(&x) => Ok((v, x)),
                None => Err(value_err(format!("no value for {}", v.name()))),
            })
            .collect::<PyResult<HashMap<_, _>>>()?;
        Ok(Counter::new(&d).distribution(&self.inner, &sigma).map_err(runtime_err)?.counts)
    }

    #[getter]
    fn size(&self) -> u64 {
        self.inner.size()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr({:?})", self.inner.to_string())
    }
}

/// Straight-line masked program.
#[pyclass(name = "Program", frozen)]
struct PyProgram {
    inner: masq_core::Program,
}

#[pymethods]
impl PyProgram {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyProgram { inner: masq_core::Program::parse(text).map_err(value_err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn internals(&self) -> Vec<String> {
        self.inner.internals().map(str::to_string).collect()
    }

    /// Expanded expression computed by internal variable `x`.
    fn expr(&self, x: &str) -> PyResult<PyExpr> {
        Ok(PyExpr { inner: self.inner.expr_of(x).map_err(value_err)?.clone() })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }
}

/// Verification report.
#[pyclass(name = "Report", frozen)]
struct PyReport {
    inner: masq_core::Report,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn perfectly_masked(&self) -> bool {
        self.inner.perfectly_masked
    }

    #[getter]
    fn exit_code(&self) -> i32 {
        self.inner.exit_code()
    }

    #[getter]
    fn program_qms(&self) -> Option<(u64, u64)> {
        self.inner.program_qms.map(|q| (q.num, q.den))
    }

    /// `{name: type}` in program order.
    fn types(&self) -> Vec<(String, String)> {
        self.inner.variables.iter().map(|v| (v.name.clone(), v.ty.to_string())).collect()
    }

    /// `{name: method}` in program order.
    fn methods(&self) -> Vec<(String, String)> {
        self.inner.variables.iter().map(|v| (v.name.clone(), v.method.to_string())).collect()
    }

    fn qms(&self, name: &str) -> Option<(u64, u64)> {
        self.inner.verdict(name).and_then(|v| v.qms).map(|q| (q.num, q.den))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<PyReport> {
        Ok(PyReport { inner: masq_core::Report::from_json(text).map_err(value_err)? })
    }

    fn __str__(&self) -> String {
        self.inner.to_text()
    }
}

/// Run the verifier on a program.
#[pyfunction]
#[pyo3(signature = (program, domain = None, engine = "bruteforce", qms = false, jobs = 1, budget = None, timeout = 60.0))]
#[allow(clippy::too_many_arguments)]
fn check(
    py: Python<'_>,
    program: &PyProgram,
    domain: Option<&PyDomain>,
    engine: &str,
    qms: bool,
    jobs: usize,
    budget: Option<u64>,
    timeout: f64,
) -> PyResult<PyReport> {
    let kind = EngineKind::parse(engine).ok_or_else(|| value_err(format!("unknown engine {engine:?}")))?;
    let mut cfg = EngineConfig::new(domain_or_default(domain)?, kind);
    cfg.jobs = jobs.max(1);
    if let Some(b) = budget {
        cfg.budget = b;
    }
    cfg.timeout = (timeout > 0.0).then(|| Duration::from_secs_f64(timeout));
    if kind == EngineKind::Smt {
        let cmd = masq_core::smt::find_solver().ok_or_else(|| value_err("engine smt needs z3 or cvc5 on PATH"))?;
        cfg.solver = Some(masq_core::SolverConfig::new(cmd));
    }
    let report = py.detach(|| if qms { qms_compute(&program.inner, &cfg) } else { pm_check(&program.inner, &cfg) });
    Ok(PyReport { inner: report })
}

#[pymodule]
fn masq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_class::<PyExpr>()?;
    m.add_class::<PyProgram>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
