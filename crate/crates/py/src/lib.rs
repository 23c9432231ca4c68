//! Python bindings: volumes, phantoms, corruption, instructions, refinement
//! sessions, metrics and dataset synthesis. Structured values (records,
//! commands, reports, history) cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use forge_core::corruption::{
    annotate_record, apply_error, synthesize_dataset, CorruptionConfig, DatasetConfig, EditRecord, Subject,
};
use forge_core::hash::content_hash;
use forge_core::instruction::{parse_instruction as parse, render_instruction as render, Vocabulary};
use forge_core::metrics::{evaluate as eval, EvalConfig};
use forge_core::phantom::{Phantom as CorePhantom, PhantomKind};
use forge_core::refine::RefinementSession;
use forge_core::volume::{load_volume, save_volume, LabelVolume, VolumeFormat};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyString};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON into native Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Accepts a JSON string or any JSON-compatible Python object.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(value_err)
}

fn record_from(obj: &Bound<'_, PyAny>) -> PyResult<EditRecord> {
    let r: EditRecord = from_py(obj)?;
    r.validate().map_err(value_err)?;
    Ok(r)
}

fn format_of(path: &str) -> PyResult<VolumeFormat> {
    VolumeFormat::from_path(path.as_ref())
        .ok_or_else(|| PyValueError::new_err(format!("{path}: expected a .nii, .nii.gz or .rawl path")))
}

/// A labelled 3D volume.
#[pyclass(module = "forge", frozen)]
struct Volume {
    inner: LabelVolume,
}

#[pymethods]
impl Volume {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = load_volume(path.as_ref(), format_of(path)?).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_volume(&self.inner, path.as_ref(), format_of(path)?).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.spacing()
    }

    #[getter]
    fn hash(&self) -> String {
        content_hash(&self.inner)
    }

    #[getter]
    fn label_map(&self) -> std::collections::BTreeMap<u8, String> {
        self.inner.label_map().clone()
    }

    /// Voxel count per present class, background excluded.
    fn class_counts(&self) -> std::collections::BTreeMap<u8, usize> {
        self.inner.class_counts()
    }

    /// Labels as bytes, x fastest.
    fn labels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.labels())
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<u8> {
        let d = self.inner.dims();
        if x >= d[0] || y >= d[1] || z >= d[2] {
            return Err(PyValueError::new_err(format!("({x}, {y}, {z}) outside {d:?}")));
        }
        Ok(self.inner.get(x, y, z))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, spacing={:?})", self.inner.dims(), self.inner.spacing())
    }
}

/// A synthetic vessel phantom with its centerlines.
#[pyclass(module = "forge", frozen)]
struct Phantom {
    inner: CorePhantom,
}

#[pymethods]
impl Phantom {
    /// Circle-of-Willis phantom with 13 segments.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn cow(seed: u64) -> Self {
        Self {
            inner: CorePhantom::cow(seed),
        }
    }

    /// Single tube: straight, l_shape, helix, arc or s_curve.
    #[staticmethod]
    fn tube(kind: &str) -> PyResult<Self> {
        let k = PhantomKind::ALL
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(|| PyValueError::new_err(format!("unknown phantom kind {kind:?}")))?;
        Ok(Self {
            inner: CorePhantom::tube(k),
        })
    }

    /// Straight tube whose centerline has 101 evenly spaced nodes.
    #[staticmethod]
    fn straight_101() -> Self {
        Self {
            inner: CorePhantom::straight_101(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn volume(&self) -> Volume {
        Volume {
            inner: self.inner.volume.clone(),
        }
    }

    /// Segment classes that carry a centerline.
    #[getter]
    fn segments(&self) -> Vec<u8> {
        self.inner.centerlines.keys().copied().collect()
    }

    /// Applies one error record (dict or JSON) to the phantom.
    fn corrupt(&self, record: &Bound<'_, PyAny>) -> PyResult<Volume> {
        let r = record_from(record)?;
        let c = self.centerline(r.segment_id)?;
        let v = apply_error(&self.inner.volume, c, &r, &CorruptionConfig::default()).map_err(value_err)?;
        Ok(Volume { inner: v })
    }

    /// The record with the geometry hints that instructions cite.
    fn annotate(&self, py: Python<'_>, record: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let r = record_from(record)?;
        let c = self.centerline(r.segment_id)?;
        to_py(py, &annotate_record(&r, c, &self.inner.volume).map_err(value_err)?)
    }
}

impl Phantom {
    fn centerline(&self, class: u8) -> PyResult<&forge_core::centerline::Centerline> {
        self.inner
            .centerlines
            .get(&class)
            .ok_or_else(|| PyValueError::new_err(format!("phantom has no segment {class}")))
    }
}

/// An undoable sequence of instruction steps over one volume.
#[pyclass(module = "forge")]
struct Session {
    inner: RefinementSession,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (volume, gt=None, session_id="py"))]
    fn new(volume: &Volume, gt: Option<&Volume>, session_id: &str) -> PyResult<Self> {
        let inner =
            RefinementSession::new(session_id, volume.inner.clone(), gt.map(|g| g.inner.clone())).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Applies one instruction and returns the new history entry. Raises
    /// ValueError when no clause could be applied.
    fn step(&mut self, py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
        let inner = &mut self.inner;
        let step = py.detach(|| inner.refine_step(text).cloned()).map_err(value_err)?;
        to_py(py, &step)
    }

    /// Truncates the history to `step` and returns that entry.
    fn rollback(&mut self, py: Python<'_>, step: usize) -> PyResult<Py<PyAny>> {
        let entry = self.inner.rollback(step).map_err(value_err)?.clone();
        to_py(py, &entry)
    }

    /// Replays the history and checks every recorded hash.
    fn verify(&self) -> PyResult<()> {
        self.inner.verify().map_err(value_err)
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash().to_string()
    }

    #[getter]
    fn current(&self) -> Volume {
        Volume {
            inner: self.inner.current().clone(),
        }
    }

    #[getter]
    fn history(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.history())
    }
}

/// Narrative, concise and detailed instructions for an error record.
#[pyfunction]
fn render_instruction(py: Python<'_>, record: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let doc = render(&record_from(record)?, &Vocabulary::default()).map_err(value_err)?;
    to_py(py, &doc)
}

/// Parses instruction text into `{"commands": [...], "errors": [...]}`.
#[pyfunction]
fn parse_instruction(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let parsed = parse(text, &Vocabulary::default());
    let out = serde_json::json!({"commands": parsed.commands(), "errors": parsed.errors()});
    to_py(py, &out)
}

/// Dice, NSD, Chamfer and F1 scores of `pred` against `gt`.
#[pyfunction]
#[pyo3(signature = (pred, gt, tau_mm=1.0))]
fn evaluate(py: Python<'_>, pred: &Volume, gt: &Volume, tau_mm: f64) -> PyResult<Py<PyAny>> {
    let cfg = EvalConfig {
        nsd_tau_mm: tau_mm,
        ..Default::default()
    };
    let report = py.detach(|| eval(&pred.inner, &gt.inner, &cfg)).map_err(value_err)?;
    to_py(py, &report)
}

/// Writes corrupted variants, instruction documents and a manifest for the
/// given phantoms under `out_dir`; returns the summary.
#[pyfunction]
#[pyo3(signature = (phantoms, out_dir, variants=15, drop_p=0.2, seed=0))]
fn synthesize(
    py: Python<'_>,
    phantoms: Vec<Bound<'_, Phantom>>,
    out_dir: PathBuf,
    variants: usize,
    drop_p: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let subjects: Vec<Subject> = phantoms.iter().map(|p| Subject::from_phantom(p.get().inner.clone())).collect();
    let cfg = DatasetConfig {
        variants_per_subject: variants,
        drop_p,
        seed,
        ..Default::default()
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let summary = py.detach(|| synthesize_dataset(&subjects, &cfg, &out_dir)).map_err(value_err)?;
    to_py(py, &summary)
}

#[pymodule]
fn forge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Volume>()?;
    m.add_class::<Phantom>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(render_instruction, m)?)?;
    m.add_function(wrap_pyfunction!(parse_instruction, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
