//! Python bindings. Structured results cross the boundary as JSON text.

use std::path::PathBuf;

use climb_core::engine::Engine;
use climb_core::harness::dataset::{self, Sidecar};
use climb_core::harness::detect::{count_exceptions, detect_failures, detect_planning_failures, DetectorInput};
use climb_core::harness::metrics::{evaluate_model, metrics_from};
use climb_core::harness::persona::{default_persona, PersonaScript, PersonaUser};
use climb_core::harness::scripts::{baseline_script, climb_script, BaselineVariant};
use climb_core::llm::ScriptedPolicy;
use climb_core::reasoning::EpisodeConfig;
use climb_core::session::archive;
use climb_core::session::report::render_report as render;
use climb_core::session::store::{BlobDir, Clock, NewSession};
use climb_core::session::{SessionMode, SessionStore};
use climb_core::tools::{Frame, ModelArtifact};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn store(root: &str) -> PyResult<SessionStore> {
    SessionStore::new(root).map_err(err)
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Training and held-out CSV text of the bundled synthetic cohort.
#[pyfunction]
fn synthetic_dataset(seed: u64) -> (String, String) {
    let d = dataset::generate(seed);
    (d.train_csv, d.test_csv)
}

#[pyfunction]
fn default_persona_json() -> String {
    to_json(&default_persona())
}

#[pyfunction]
fn climb_script_json() -> String {
    to_json(&climb_script())
}

#[pyfunction]
fn baseline_script_json(variant: &str) -> PyResult<String> {
    use BaselineVariant as V;
    let v = match variant {
        "clean" => V::Clean,
        "did_not_finish" => V::DidNotFinish,
        "eda_partially_failed" => V::EdaPartiallyFailed,
        "models_not_saved" => V::ModelsNotSaved,
        "no_feature_review_opportunity" => V::NoFeatureReview,
        "target_imputed_unchecked" => V::TargetImputedUnchecked,
        "rows_dropped_excessively" => V::RowsDroppedExcessively,
        "no_cross_validation" => V::NoCrossValidation,
        "subgroup_by_retraining" => V::SubgroupByRetraining,
        other => return Err(PyValueError::new_err(format!("unknown variant `{other}`"))),
    };
    Ok(to_json(&baseline_script(v)))
}

/// Runs a scripted session to its end and returns its id and status.
#[pyfunction]
#[pyo3(signature = (session_root, dataset_csv, policy_json, persona_json, seed=0, mode="climb", dataset_name="cohort.csv"))]
fn run_session(
    py: Python<'_>,
    session_root: &str,
    dataset_csv: &str,
    policy_json: &str,
    persona_json: &str,
    seed: u64,
    mode: &str,
    dataset_name: &str,
) -> PyResult<(String, String)> {
    let mode = SessionMode::parse(mode).ok_or_else(|| PyValueError::new_err(format!("unknown mode `{mode}`")))?;
    let policy: ScriptedPolicy = serde_json::from_str(policy_json).map_err(|e| PyValueError::new_err(format!("policy: {e}")))?;
    let persona = PersonaScript::from_json(persona_json).map_err(|e| PyValueError::new_err(format!("persona: {e}")))?;
    let store = store(session_root)?;
    let mut spec = NewSession::new(dataset_name, dataset_csv.as_bytes().to_vec());
    spec.mode = mode;
    spec.seed = seed;
    spec.clock = Clock::Logical;
    spec.policy = "scripted".into();
    if mode == SessionMode::Baseline {
        spec.episode_config = EpisodeConfig::unguarded();
    }
    py.allow_threads(move || {
        let session = store.create(spec).map_err(err)?;
        let mut engine = Engine::new(session, Box::new(policy), Box::new(PersonaUser::new(persona)));
        let status = engine.run().map_err(err)?;
        let id = engine.session().record().session_id().to_string();
        Ok((id, format!("{status:?}").to_lowercase()))
    })
}

/// Events of a session after `since`, as a JSON array.
#[pyfunction]
#[pyo3(signature = (session_root, session_id, since=0))]
fn events_json(session_root: &str, session_id: &str, since: u64) -> PyResult<String> {
    let record = store(session_root)?.load(session_id).map_err(err)?;
    Ok(to_json(&record.events_since(since)))
}

#[pyfunction]
fn render_report(session_root: &str, session_id: &str) -> PyResult<String> {
    let s = store(session_root)?;
    let record = s.load(session_id).map_err(err)?;
    Ok(render(&record, &BlobDir::of_workdir(&s.workdir(session_id))))
}

/// Failure flags, planning failures and exception count, as JSON.
#[pyfunction]
#[pyo3(signature = (session_root, session_id, sidecar_json=None, target="y"))]
fn detect_json(session_root: &str, session_id: &str, sidecar_json: Option<&str>, target: &str) -> PyResult<String> {
    let s = store(session_root)?;
    let record = s.load(session_id).map_err(err)?;
    let sidecar: Sidecar = match sidecar_json {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("sidecar: {e}")))?,
        None => dataset::sidecar(),
    };
    let blobs = BlobDir::of_workdir(&s.workdir(session_id));
    let flags = detect_failures(&DetectorInput { record: &record, blobs: &blobs, sidecar: &sidecar, target });
    Ok(to_json(&serde_json::json!({
        "flags": flags,
        "planning_failures": detect_planning_failures(&record),
        "exceptions": count_exceptions(&record),
    })))
}

/// Held-out metrics of the session's final model, as JSON.
#[pyfunction]
fn evaluate_json(session_root: &str, session_id: &str, test_csv: &str) -> PyResult<String> {
    let s = store(session_root)?;
    let record = s.load(session_id).map_err(err)?;
    let fit = record.models().last().ok_or_else(|| PyValueError::new_err("the session has no model"))?;
    let model = ModelArtifact::load(&s.workdir(session_id).join(&fit.path)).map_err(err)?;
    let test = Frame::parse(test_csv).map_err(err)?;
    Ok(to_json(&evaluate_model(&model, &test).map_err(err)?))
}

/// MSE, RMSE, MAE and R² as JSON.
#[pyfunction]
fn metrics_json(pred: Vec<f64>, target: Vec<f64>) -> PyResult<String> {
    Ok(to_json(&metrics_from(&pred, &target).map_err(|e| PyValueError::new_err(e.to_string()))?))
}

#[pyfunction]
fn persist(session_root: &str, session_id: &str, out: PathBuf) -> PyResult<String> {
    let a = archive::persist(&store(session_root)?.workdir(session_id), &out).map_err(err)?;
    Ok(a.checksum)
}

/// Imports an archive into a store and returns the session id.
#[pyfunction]
fn resume(session_root: &str, archive_path: PathBuf) -> PyResult<String> {
    let (record, _) = archive::resume(&store(session_root)?, &archive_path).map_err(err)?;
    Ok(record.session_id().to_string())
}

#[pymodule]
fn climb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(default_persona_json, m)?)?;
    m.add_function(wrap_pyfunction!(climb_script_json, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_script_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(events_json, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    m.add_function(wrap_pyfunction!(detect_json, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_json, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_json, m)?)?;
    m.add_function(wrap_pyfunction!(persist, m)?)?;
    m.add_function(wrap_pyfunction!(resume, m)?)?;
    Ok(())
}
