//! Python bindings for `lorgee`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lorgee::association::ResponseScale;
use lorgee::design::parse_terms;
use lorgee::{
    build_dataset, compare_nested, local_or_of_table, matrix_lor as core_matrix_lor,
    null_model_test, solve_gee, summarize, DesignSpec, Error, GeeConfig, GeeFit, IpfConfig,
    LinkKind, LongDataset, LorKind, LorMethod, LorStructure, RawTable,
};
use nalgebra::DMatrix;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. }
        | Error::InitialFit(_)
        | Error::IpfNonConvergence { .. }
        | Error::AssociationFit { .. }
        | Error::Singular(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Long-format repeated multinomial responses.
#[pyclass(name = "Dataset", module = "lorgee", frozen)]
struct PyDataset {
    inner: LongDataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn n_times(&self) -> usize {
        self.inner.n_times()
    }

    #[getter]
    fn n_categories(&self) -> usize {
        self.inner.n_categories()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(subjects={}, times={}, categories={}, covariates={:?})",
            self.inner.n_subjects(),
            self.inner.n_times(),
            self.inner.n_categories(),
            self.inner.covariate_names()
        )
    }
}

/// Load a CSV file; `covariates` uses `factor:col`, `numeric:col` or `col` terms.
#[pyfunction]
#[pyo3(signature = (path, response, id, time=None, covariates="", delimiter=","))]
fn load_csv(
    path: &str,
    response: &str,
    id: &str,
    time: Option<&str>,
    covariates: &str,
    delimiter: &str,
) -> PyResult<PyDataset> {
    let delim = match delimiter.as_bytes() {
        [b] => *b,
        _ => return Err(PyValueError::new_err("delimiter must be a single byte")),
    };
    let file = std::fs::File::open(path).map_err(|e| py_err(e.into()))?;
    let table = RawTable::from_reader(file, delim).map_err(py_err)?;
    let spec = DesignSpec {
        response: response.to_string(),
        id: id.to_string(),
        time: time.map(str::to_string),
        terms: parse_terms(covariates).map_err(py_err)?,
    };
    Ok(PyDataset {
        inner: build_dataset(&table, &spec).map_err(py_err)?,
    })
}

/// A fitted GEE model.
#[pyclass(name = "Fit", module = "lorgee", frozen)]
struct PyFit {
    inner: GeeFit,
    call: String,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn coefficient_names(&self) -> Vec<String> {
        self.inner.coefficient_names.clone()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.beta.0.clone()
    }

    #[getter]
    fn standard_errors(&self) -> Vec<f64> {
        self.inner.standard_errors()
    }

    #[getter]
    fn naive_standard_errors(&self) -> Vec<f64> {
        self.inner.naive_standard_errors()
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.sandwich_cov)
    }

    #[getter]
    fn naive_covariance(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.naive_cov)
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn link(&self) -> &'static str {
        self.inner.model.link.short_name()
    }

    /// Block matrix of estimated local odds ratios.
    #[getter]
    fn local_odds_ratios(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.alpha.theta_block_matrix(self.inner.n_times))
    }

    fn coef<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (n, b) in self.inner.coefficient_names.iter().zip(self.inner.beta.iter()) {
            d.set_item(n, *b)?;
        }
        Ok(d)
    }

    /// Wald test that all covariate coefficients are zero: (statistic, df, p-value).
    fn null_test(&self) -> PyResult<(f64, usize, f64)> {
        let t = null_model_test(&self.inner).map_err(py_err)?;
        Ok((t.statistic, t.df, t.p_value))
    }

    fn summary(&self) -> String {
        summarize(&self.inner, &self.call).to_string()
    }

    /// Flat key-value report as a JSON string.
    fn to_json(&self) -> String {
        summarize(&self.inner, &self.call).to_json().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(link={}, structure={}, coefficients={})",
            self.inner.model.link.short_name(),
            self.inner.alpha.kind,
            self.inner.beta.len()
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_with(
    data: &PyDataset,
    link: LinkKind,
    structure: &str,
    homogeneous: bool,
    method: &str,
    add: Option<f64>,
    tolerance: f64,
    max_iterations: usize,
    call: String,
) -> PyResult<PyFit> {
    let kind: LorKind = structure.parse().map_err(py_err)?;
    let method: LorMethod = method.parse().map_err(py_err)?;
    let mut cfg = GeeConfig::new(
        link,
        LorStructure::new(kind)
            .with_homogeneous(homogeneous)
            .with_method(method),
    );
    cfg.add = add;
    cfg.control.tolerance = tolerance;
    cfg.control.max_iterations = max_iterations;
    let inner = solve_gee(&data.inner, &cfg).map_err(py_err)?;
    Ok(PyFit { inner, call })
}

/// Cumulative link (logit, probit, cauchit, cloglog) or adjacent-categories (acl) fit.
#[pyfunction]
#[pyo3(signature = (data, link="logit", structure="uniform", homogeneous=true, method="3way", add=None, tolerance=1e-3, max_iterations=15))]
#[allow(clippy::too_many_arguments)]
fn fit_ordinal(
    data: &PyDataset,
    link: &str,
    structure: &str,
    homogeneous: bool,
    method: &str,
    add: Option<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> PyResult<PyFit> {
    let l: LinkKind = link.parse().map_err(py_err)?;
    if !l.is_ordinal() {
        return Err(PyValueError::new_err(format!("`{link}` is not an ordinal link")));
    }
    let call = format!("fit_ordinal(link={link}, structure={structure}, method={method})");
    fit_with(data, l, structure, homogeneous, method, add, tolerance, max_iterations, call)
}

/// Baseline-category logit fit.
#[pyfunction]
#[pyo3(signature = (data, structure="time.exch", homogeneous=true, method="3way", add=None, tolerance=1e-3, max_iterations=15))]
fn fit_nominal(
    data: &PyDataset,
    structure: &str,
    homogeneous: bool,
    method: &str,
    add: Option<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> PyResult<PyFit> {
    let call = format!("fit_nominal(structure={structure}, method={method})");
    fit_with(
        data,
        LinkKind::BaselineCategoryLogit,
        structure,
        homogeneous,
        method,
        add,
        tolerance,
        max_iterations,
        call,
    )
}

/// Wald test of `smaller` against the nested `larger` fit.
#[pyfunction]
fn wald<'py>(py: Python<'py>, smaller: &PyFit, larger: &PyFit) -> PyResult<Bound<'py, PyDict>> {
    let r = compare_nested(&smaller.inner, &larger.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("statistic", r.statistic)?;
    d.set_item("df", r.df)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("tested", r.tested)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (data, scale="ordinal", add=None))]
fn intrinsic_pars(data: &PyDataset, scale: &str, add: Option<f64>) -> PyResult<Vec<f64>> {
    let scale: ResponseScale = scale.parse().map_err(py_err)?;
    lorgee::intrinsic_pars(&data.inner, scale, add).map_err(py_err)
}

/// Probability table with the given (J-1) x (J-1) local odds ratios.
#[pyfunction]
fn matrix_lor(target: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&core_matrix_lor(&to_matrix(target)?).map_err(py_err)?))
}

#[pyfunction]
fn local_odds_ratios(table: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&local_or_of_table(&to_matrix(table)?).map_err(py_err)?))
}

/// Rake `seed` to the given row and column margins.
#[pyfunction]
#[pyo3(signature = (seed, rows, cols, tolerance=1e-6, max_iterations=200))]
fn ipf(
    seed: Vec<Vec<f64>>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = IpfConfig {
        tolerance,
        max_iterations,
    };
    let t = lorgee::ipf_adjust(&to_matrix(seed)?, &rows, &cols, &cfg).map_err(py_err)?;
    Ok(to_rows(&t))
}

#[pymodule]
fn lorgee_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ordinal, m)?)?;
    m.add_function(wrap_pyfunction!(fit_nominal, m)?)?;
    m.add_function(wrap_pyfunction!(wald, m)?)?;
    m.add_function(wrap_pyfunction!(intrinsic_pars, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_lor, m)?)?;
    m.add_function(wrap_pyfunction!(local_odds_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(ipf, m)?)?;
    Ok(())
}
