use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ridgefuse::alignment::{ga_align as core_ga_align, GAConfig, RefineMode};
use ridgefuse::evaluation::{
    evaluate as core_evaluate, ingest_db, match_score as core_match_score, GenuineMode, Protocol,
};
use ridgefuse::geometry::{ParamEntry, SimilarityTransform};
use ridgefuse::pnm;
use ridgefuse::store;
use ridgefuse::synthesis::{
    synthesize as core_synthesize, FingerprintTemplate, MeanFingerprint, PreprocessParams,
};
use ridgefuse::synthgen::{
    gen_db as core_gen_db, gen_impression as core_gen_impression, gen_master as core_gen_master,
    DbParams, NoiseParams,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_refine(mode: &str) -> PyResult<RefineMode> {
    match mode {
        "paper" => Ok(RefineMode::Paper),
        "exact" => Ok(RefineMode::Exact),
        other => Err(value_err(format!("refine_mode must be paper|exact, got {other:?}"))),
    }
}

fn ga_config(pop: usize, gens: usize, seed: u64) -> GAConfig {
    GAConfig { population: pop, generations: gens, seed, ..GAConfig::default() }
}

/// Similarity transform y = s * R(theta) * x + t in pixel coordinates.
#[pyclass(name = "Transform", from_py_object)]
#[derive(Clone)]
struct PyTransform {
    inner: SimilarityTransform,
}

#[pymethods]
impl PyTransform {
    #[new]
    fn new(s: f64, theta_deg: f64, tx: f64, ty: f64) -> Self {
        PyTransform { inner: SimilarityTransform { s, theta_deg, tx, ty } }
    }

    #[staticmethod]
    fn identity() -> Self {
        PyTransform { inner: SimilarityTransform::identity() }
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s
    }

    #[getter]
    fn theta_deg(&self) -> f64 {
        self.inner.theta_deg
    }

    #[getter]
    fn tx(&self) -> f64 {
        self.inner.tx
    }

    #[getter]
    fn ty(&self) -> f64 {
        self.inner.ty
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        self.inner.apply(x, y)
    }

    fn apply_round(&self, x: f64, y: f64) -> (i64, i64) {
        self.inner.apply_round(x, y)
    }

    fn invert(&self) -> PyResult<Self> {
        Ok(PyTransform { inner: self.inner.invert().map_err(value_err)? })
    }

    fn compose(&self, other: &PyTransform) -> Self {
        PyTransform { inner: self.inner.compose(&other.inner) }
    }

    fn in_range(&self) -> bool {
        self.inner.validate_range().is_ok()
    }

    fn __repr__(&self) -> String {
        format!(
            "Transform(s={}, theta_deg={}, tx={}, ty={})",
            self.inner.s, self.inner.theta_deg, self.inner.tx, self.inner.ty
        )
    }
}

/// One preprocessed impression: id, ridge skeleton, and minutiae.
#[pyclass(name = "Template", from_py_object)]
#[derive(Clone)]
struct PyTemplate {
    inner: FingerprintTemplate,
}

fn minutiae_tuples(set: &ridgefuse::minutiae::MinutiaeSet) -> Vec<(i64, i64, String, f64)> {
    set.iter().map(|m| (m.x, m.y, m.kind.letter().to_string(), m.angle_deg)).collect()
}

#[pymethods]
impl PyTemplate {
    /// Load a PGM image and run segmentation, binarization, thinning, and
    /// minutiae extraction.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let img = pnm::read_pgm(&path).map_err(value_err)?;
        let id = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
        Ok(PyTemplate {
            inner: FingerprintTemplate::from_image(&id, &img, &PreprocessParams::default()),
        })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.skeleton.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.skeleton.height()
    }

    #[getter]
    fn ridge_pixels(&self) -> usize {
        self.inner.skeleton.count_ones()
    }

    /// Minutiae as (x, y, kind, angle_deg) tuples; kind is "T" or "B".
    fn minutiae(&self) -> Vec<(i64, i64, String, f64)> {
        minutiae_tuples(&self.inner.minutiae)
    }

    #[getter]
    fn minutiae_count(&self) -> usize {
        self.inner.minutiae.len()
    }

    fn save_skeleton(&self, path: PathBuf) -> PyResult<()> {
        pnm::write_pbm(&path, &self.inner.skeleton).map_err(io_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Template(id={:?}, {}x{}, {} minutiae)",
            self.inner.id,
            self.inner.skeleton.width(),
            self.inner.skeleton.height(),
            self.inner.minutiae.len()
        )
    }
}

/// The fused mean fingerprint with its per-impression alignment list.
#[pyclass(name = "MeanF")]
struct PyMeanF {
    inner: MeanFingerprint,
}

#[pymethods]
impl PyMeanF {
    #[getter]
    fn base_id(&self) -> &str {
        &self.inner.base_id
    }

    #[getter]
    fn minutiae_count(&self) -> usize {
        self.inner.minutiae.len()
    }

    fn minutiae(&self) -> Vec<(i64, i64, String, f64)> {
        minutiae_tuples(&self.inner.minutiae)
    }

    /// Aligned entries as (id, Transform, fitness); failed ones as
    /// (id, None, reason).
    fn alignments(&self, py: Python<'_>) -> Vec<(String, Py<PyAny>, Py<PyAny>)> {
        self.inner
            .params
            .entries
            .iter()
            .map(|e| match e {
                ParamEntry::Aligned { id, transform, fitness } => {
                    let t = PyTransform { inner: *transform }
                        .into_pyobject(py)
                        .expect("transform converts")
                        .into_any()
                        .unbind();
                    let f = fitness.into_pyobject(py).expect("u32 converts").into_any().unbind();
                    (id.clone(), t, f)
                }
                ParamEntry::Failed { id, reason } => {
                    let r = reason
                        .clone()
                        .into_pyobject(py)
                        .expect("string converts")
                        .into_any()
                        .unbind();
                    (id.clone(), py.None(), r)
                }
            })
            .collect()
    }

    /// Write the bundle (skeleton.pbm, minutiae.txt, params.txt,
    /// manifest.txt) into a directory.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        store::write_meanf(&dir, &self.inner).map_err(io_err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyMeanF { inner: store::read_meanf(&dir).map_err(value_err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "MeanF(base_id={:?}, {} minutiae, {} alignments)",
            self.inner.base_id,
            self.inner.minutiae.len(),
            self.inner.params.entries.len()
        )
    }
}

/// Procedural master print with at least 20 terminations and bifurcations.
#[pyfunction]
#[pyo3(signature = (width=288, height=384, period=10, seed=42))]
fn gen_master(width: usize, height: usize, period: u32, seed: u64) -> PyResult<PyTemplate> {
    Ok(PyTemplate { inner: core_gen_master(width, height, period, seed).map_err(value_err)? })
}

/// Transport a master through a transform and damage it with noise.
#[pyfunction]
#[pyo3(signature = (master, transform, dropout=0.0, ridge_breaks=0, seed=0))]
fn gen_impression(
    master: &PyTemplate,
    transform: &PyTransform,
    dropout: f64,
    ridge_breaks: usize,
    seed: u64,
) -> PyResult<PyTemplate> {
    let noise = NoiseParams { dropout, ridge_breaks, crop: None };
    Ok(PyTemplate {
        inner: core_gen_impression(&master.inner, &transform.inner, &noise, seed)
            .map_err(value_err)?,
    })
}

/// Write a synthetic `<finger>_<impression>.pgm` database with truth files.
#[pyfunction]
#[pyo3(signature = (dir, fingers=10, impressions=8, dropout=0.0, ridge_breaks=0, seed=42))]
fn gen_db(
    dir: PathBuf,
    fingers: u32,
    impressions: u32,
    dropout: f64,
    ridge_breaks: usize,
    seed: u64,
) -> PyResult<()> {
    let params = DbParams {
        fingers,
        impressions,
        noise: NoiseParams { dropout, ridge_breaks, crop: None },
        seed,
        ..DbParams::default()
    };
    core_gen_db(Path::new(&dir), &params).map_err(value_err)
}

/// GA search for the transform mapping `query` minutiae onto `reference`.
/// Returns (Transform, matched_count).
#[pyfunction]
#[pyo3(signature = (query, reference, seed=42, pop=500, gens=15))]
fn ga_align(
    query: &PyTemplate,
    reference: &PyTemplate,
    seed: u64,
    pop: usize,
    gens: usize,
) -> PyResult<(PyTransform, u32)> {
    let res = core_ga_align(&query.inner.minutiae, &reference.inner.minutiae, &ga_config(pop, gens, seed))
        .map_err(value_err)?;
    Ok((PyTransform { inner: res.transform }, res.fitness))
}

/// Fuse impressions of one finger into a mean fingerprint.
#[pyfunction]
#[pyo3(signature = (templates, seed=42, pop=500, gens=15, r=3.0, refine_mode="exact"))]
fn synthesize(
    templates: Vec<PyTemplate>,
    seed: u64,
    pop: usize,
    gens: usize,
    r: f64,
    refine_mode: &str,
) -> PyResult<PyMeanF> {
    let mode = parse_refine(refine_mode)?;
    let inner: Vec<FingerprintTemplate> = templates.into_iter().map(|t| t.inner).collect();
    Ok(PyMeanF {
        inner: core_synthesize(&inner, &ga_config(pop, gens, seed), r, mode).map_err(value_err)?,
    })
}

/// Match a query template against a mean fingerprint.
#[pyfunction]
#[pyo3(signature = (meanf, query, seed=42, pop=500, gens=15))]
fn match_score(
    py: Python<'_>,
    meanf: &PyMeanF,
    query: &PyTemplate,
    seed: u64,
    pop: usize,
    gens: usize,
) -> PyResult<Py<PyAny>> {
    let ms = core_match_score(&meanf.inner, &query.inner, &ga_config(pop, gens, seed));
    let out = PyDict::new(py);
    out.set_item("score", ms.score)?;
    out.set_item("matched", ms.matched)?;
    out.set_item("query_size", ms.query_size)?;
    out.set_item("ref_size", ms.ref_size)?;
    match ms.transform {
        Some(t) => out.set_item("transform", PyTransform { inner: t })?,
        None => out.set_item("transform", py.None())?,
    }
    Ok(out.into_any().unbind())
}

/// Run the genuine/impostor protocol over a database directory. Returns a
/// dict with genuine, impostor, and (threshold, gar, far) rows.
#[pyfunction]
#[pyo3(signature = (dir, impostors=1000, seed=42, genuine_mode="meanf", refine_mode="exact", pop=500, gens=15, r=3.0))]
#[allow(clippy::too_many_arguments)]
fn evaluate_db(
    py: Python<'_>,
    dir: PathBuf,
    impostors: usize,
    seed: u64,
    genuine_mode: &str,
    refine_mode: &str,
    pop: usize,
    gens: usize,
    r: f64,
) -> PyResult<Py<PyAny>> {
    let genuine_mode = match genuine_mode {
        "meanf" => GenuineMode::MeanF,
        "pairs" => GenuineMode::Pairs,
        other => return Err(value_err(format!("genuine_mode must be meanf|pairs, got {other:?}"))),
    };
    let (entries, warnings) = ingest_db(Path::new(&dir)).map_err(value_err)?;
    let protocol = Protocol {
        genuine_mode,
        impostor_pairs: impostors,
        r,
        refine_mode: parse_refine(refine_mode)?,
        seed,
    };
    let report =
        core_evaluate(&entries, &ga_config(pop, gens, seed), &protocol).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("genuine", report.genuine.clone())?;
    out.set_item("impostor", report.impostor.clone())?;
    out.set_item(
        "rows",
        report.rows.iter().map(|r| (r.threshold, r.gar, r.far)).collect::<Vec<_>>(),
    )?;
    out.set_item("fingers", report.fingers)?;
    out.set_item("warnings", warnings)?;
    Ok(out.into_any().unbind())
}

#[pymodule]
fn ridgefuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyMeanF>()?;
    m.add_function(wrap_pyfunction!(gen_master, m)?)?;
    m.add_function(wrap_pyfunction!(gen_impression, m)?)?;
    m.add_function(wrap_pyfunction!(gen_db, m)?)?;
    m.add_function(wrap_pyfunction!(ga_align, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(match_score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_db, m)?)?;
    Ok(())
}
