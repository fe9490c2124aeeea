//! Python bindings for the core camera-motion arithmetic, instruction
//! grammar, answer matching, and data-preparation math.
//!
//! Build with `cargo build -p viewloop-python --release`; the resulting
//! `libviewloop_py.so` imports as the `viewloop` module once staged under
//! that name (see `python/smoke_test.py` for a loader).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use viewloop_core::benchmark::Choice;
use viewloop_core::dataprep::{self, DepthMap, ScaleMode};
use viewloop_core::geometry;
use viewloop_core::instructions::{self, DiscreteDirective, DirectiveTable, ParseMode};
use viewloop_core::judging;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A 6-DOF camera ego-motion: translations in meters, angles in degrees.
#[pyclass(name = "CameraMotion", from_py_object)]
#[derive(Clone)]
struct PyCameraMotion {
    inner: geometry::CameraMotion,
}

#[pymethods]
impl PyCameraMotion {
    #[new]
    #[pyo3(signature = (dx=0.0, dy=0.0, dz=0.0, yaw=0.0, pitch=0.0, roll=0.0))]
    fn new(dx: f64, dy: f64, dz: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        PyCameraMotion {
            inner: geometry::CameraMotion::new(dx, dy, dz, yaw, pitch, roll),
        }
    }

    #[staticmethod]
    fn identity() -> Self {
        PyCameraMotion { inner: geometry::CameraMotion::IDENTITY }
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx
    }

    #[getter]
    fn dy(&self) -> f64 {
        self.inner.dy
    }

    #[getter]
    fn dz(&self) -> f64 {
        self.inner.dz
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.inner.yaw
    }

    #[getter]
    fn pitch(&self) -> f64 {
        self.inner.pitch
    }

    #[getter]
    fn roll(&self) -> f64 {
        self.inner.roll
    }

    /// Angles wrapped into (-180, 180].
    fn normalize(&self) -> PyResult<Self> {
        Ok(PyCameraMotion { inner: self.inner.normalize().map_err(value_err)? })
    }

    /// First self, then other in the moved frame.
    fn compose(&self, other: &PyCameraMotion) -> PyResult<Self> {
        Ok(PyCameraMotion { inner: self.inner.compose(&other.inner).map_err(value_err)? })
    }

    fn invert(&self) -> PyResult<Self> {
        Ok(PyCameraMotion { inner: self.inner.invert().map_err(value_err)? })
    }

    /// (3x3 rotation rows, translation) of the rigid transform.
    fn to_matrix(&self) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let t = self.inner.to_transform().map_err(value_err)?;
        Ok((
            t.rotation.iter().map(|row| row.to_vec()).collect(),
            t.translation.to_vec(),
        ))
    }

    /// Canonical single-line rendering in the numerical grammar.
    fn render(&self) -> String {
        instructions::render_numerical(&self.inner)
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!(
            "CameraMotion(dx={}, dy={}, dz={}, yaw={}, pitch={}, roll={})",
            m.dx, m.dy, m.dz, m.yaw, m.pitch, m.roll
        )
    }

    fn __eq__(&self, other: &PyCameraMotion) -> bool {
        self.inner == other.inner
    }
}

/// Renders a motion in the canonical numerical grammar.
#[pyfunction]
fn render_numerical(motion: &PyCameraMotion) -> String {
    instructions::render_numerical(&motion.inner)
}

/// Parses motion text; strict mode accepts only the canonical grammar,
/// lenient mode extracts six labeled values from free text.
#[pyfunction]
#[pyo3(signature = (text, strict=false))]
fn parse_numerical(text: &str, strict: bool) -> PyResult<PyCameraMotion> {
    let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
    Ok(PyCameraMotion {
        inner: instructions::parse_numerical(text, mode).map_err(value_err)?,
    })
}

/// Names in the default discrete-directive vocabulary.
#[pyfunction]
fn directive_names() -> Vec<String> {
    DirectiveTable::default_table().names().map(String::from).collect()
}

/// Resolves a directive (optionally scaled) against the default vocabulary.
#[pyfunction]
#[pyo3(signature = (name, magnitude=None))]
fn discrete_to_motion(name: &str, magnitude: Option<f64>) -> PyResult<PyCameraMotion> {
    let directive = DiscreteDirective { name: name.to_string(), magnitude_override: magnitude };
    Ok(PyCameraMotion {
        inner: instructions::discrete_to_motion(&directive, &DirectiveTable::default_table())
            .map_err(value_err)?,
    })
}

/// Deterministic planner prompt for a question under `format`
/// ("natural" | "discrete" | "numerical").
#[pyfunction]
fn planner_prompt(question: &str, format: &str) -> PyResult<String> {
    let format = format.parse().map_err(value_err)?;
    Ok(instructions::planner_prompt(question, format))
}

fn to_choices(choices: Vec<(String, String)>) -> Vec<Choice> {
    choices.into_iter().map(|(id, text)| Choice { id, text }).collect()
}

/// Deterministic answer matching: "correct", "incorrect", or "ambiguous".
#[pyfunction]
fn match_answer(raw: &str, choices: Vec<(String, String)>, ground_truth: &str) -> String {
    match judging::match_answer(raw, &to_choices(choices), ground_truth) {
        judging::MatchOutcome::Correct => "correct".into(),
        judging::MatchOutcome::Incorrect => "incorrect".into(),
        judging::MatchOutcome::Ambiguous => "ambiguous".into(),
    }
}

/// Majority vote with choice-id normalization; returns None for an empty
/// answer list.
#[pyfunction]
fn majority_vote(answers: Vec<String>, choices: Vec<(String, String)>) -> Option<String> {
    let choices = to_choices(choices);
    viewloop_core::pipeline::majority_vote(&answers, |raw| {
        judging::normalize_answer_key(raw, &choices)
    })
}

/// Least-squares (or median) scale aligning reconstructed depths to metric
/// depths over valid (finite, positive) samples.
#[pyfunction]
#[pyo3(signature = (depth_rec, depth_met, mode="least_squares", min_valid=1))]
fn metric_scale(
    depth_rec: Vec<f64>,
    depth_met: Vec<f64>,
    mode: &str,
    min_valid: usize,
) -> PyResult<f64> {
    if depth_rec.len() != depth_met.len() {
        return Err(value_err("depth lists differ in length"));
    }
    let mode = match mode {
        "least_squares" => ScaleMode::LeastSquares,
        "median" => ScaleMode::Median,
        other => return Err(value_err(format!("unknown scale mode: {other}"))),
    };
    let rec_width = depth_rec.len() as u32;
    let met_width = depth_met.len() as u32;
    let rec = DepthMap::from_values(rec_width, 1, depth_rec);
    let met = DepthMap::from_values(met_width, 1, depth_met);
    dataprep::metric_scale_with(&rec, &met, mode, min_valid).map_err(value_err)
}

/// Multiplies translations by `scale`; rotations unchanged.
#[pyfunction]
fn rescale_motion(motion: &PyCameraMotion, scale: f64) -> PyResult<PyCameraMotion> {
    Ok(PyCameraMotion {
        inner: dataprep::rescale_motion(&motion.inner, scale).map_err(value_err)?,
    })
}

/// The resolution bucket (width, height) nearest the input aspect ratio
/// with pixel count close to base².
#[pyfunction]
#[pyo3(signature = (width, height, base=1024))]
fn assign_bucket(width: u32, height: u32, base: u32) -> (u32, u32) {
    dataprep::assign_bucket(width, height, base)
}

/// Wraps degrees into (-180, 180].
#[pyfunction]
fn wrap_angle(deg: f64) -> f64 {
    geometry::wrap_angle(deg)
}

#[pymodule]
fn viewloop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCameraMotion>()?;
    m.add_function(wrap_pyfunction!(render_numerical, m)?)?;
    m.add_function(wrap_pyfunction!(parse_numerical, m)?)?;
    m.add_function(wrap_pyfunction!(directive_names, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_to_motion, m)?)?;
    m.add_function(wrap_pyfunction!(planner_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(match_answer, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(metric_scale, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_motion, m)?)?;
    m.add_function(wrap_pyfunction!(assign_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_angle, m)?)?;
    Ok(())
}
