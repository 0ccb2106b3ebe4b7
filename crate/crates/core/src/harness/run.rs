//! Driving persona sessions and collecting replicate results.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{self, Sidecar, SyntheticData};
use super::detect::{count_exceptions, detect_failures, detect_planning_failures, DetectorInput};
use super::metrics::{aggregate, evaluate_model, AggregateError, ComparisonTable, ReplicateResult};
use super::persona::{default_persona, PersonaScript, PersonaUser};
use super::scripts::{baseline_script, climb_script, BaselineVariant};
use crate::engine::{CellExecutor, Engine, EngineError};
use crate::llm::ScriptedPolicy;
use crate::reasoning::EpisodeConfig;
use crate::session::store::{BlobDir, Clock, NewSession, StoreError};
use crate::session::{SessionMode, SessionRecord, SessionStatus, SessionStore};
use crate::tools::{Frame, ModelArtifact};

pub const DATASET_NAME: &str = "cohort.csv";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot read `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("invalid harness config: {0}")]
    Config(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("cannot write results: {0}")]
    Write(#[from] std::io::Error),
}

/// Everything a replicate needs besides the persona.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train_csv: String,
    pub test_csv: String,
    pub sidecar: Sidecar,
    pub target: String,
}

impl From<SyntheticData> for DatasetSplit {
    fn from(d: SyntheticData) -> Self {
        DatasetSplit { train_csv: d.train_csv, test_csv: d.test_csv, sidecar: d.sidecar, target: dataset::TARGET.into() }
    }
}

pub struct SessionOptions {
    /// Write the log to disk with fsync.
    pub durable: bool,
    pub clock: Clock,
    /// Replaces the default policy script of the mode.
    pub policy: Option<ScriptedPolicy>,
    pub executor: Option<Box<dyn CellExecutor>>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { durable: true, clock: Clock::Logical, policy: None, executor: None }
    }
}

#[derive(Debug)]
pub struct ScriptedRun {
    pub record: SessionRecord,
    pub workdir: PathBuf,
    pub status: SessionStatus,
}

/// Runs one persona session to its end. A persona without an answer for a
/// query aborts the session with a diagnostic naming the query.
pub fn run_scripted_session(
    store: &SessionStore,
    persona: &PersonaScript,
    mode: SessionMode,
    data: &DatasetSplit,
    seed: u64,
    options: SessionOptions,
) -> Result<ScriptedRun, HarnessError> {
    let mut spec = NewSession::new(DATASET_NAME, data.train_csv.as_bytes().to_vec());
    spec.mode = mode;
    spec.seed = seed;
    spec.durable = options.durable;
    spec.clock = options.clock;
    spec.session_id = Some(format!("{}-{seed:04}", mode.as_str()));
    spec.problem_statement = persona.assumptions.join(" ");
    let policy = match mode {
        SessionMode::Climb => {
            spec.policy = "scripted:climb".into();
            options.policy.unwrap_or_else(climb_script)
        }
        SessionMode::Baseline => {
            spec.policy = "scripted:baseline".into();
            spec.episode_config = EpisodeConfig::unguarded();
            options.policy.unwrap_or_else(|| baseline_script(BaselineVariant::Clean))
        }
    };
    let session = store.create(spec)?;
    let mut engine = Engine::new(session, Box::new(policy), Box::new(PersonaUser::new(persona.clone())));
    if let Some(ex) = options.executor {
        engine = engine.with_executor(ex);
    }
    let status = engine.run()?;
    let session = engine.into_session();
    let record = session.record().clone();
    Ok(ScriptedRun { record, workdir: session.workdir().to_path_buf(), status })
}

/// Detectors, exception count and held-out metrics for one finished run.
pub fn evaluate_run(run: &ScriptedRun, data: &DatasetSplit, seed: u64) -> ReplicateResult {
    let blobs = BlobDir::of_workdir(&run.workdir);
    let input = DetectorInput { record: &run.record, blobs: &blobs, sidecar: &data.sidecar, target: &data.target };
    let flags = detect_failures(&input);
    let (metrics, evaluation_error) = match final_model(&run.record, &run.workdir) {
        None => (None, None),
        Some(Err(e)) => (None, Some(e)),
        Some(Ok(model)) => match Frame::parse(&data.test_csv).map_err(|e| e.to_string()).and_then(|t| evaluate_model(&model, &t).map_err(|e| e.to_string())) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e)),
        },
    };
    ReplicateResult {
        mode: run.record.mode().as_str().into(),
        seed,
        session_id: run.record.session_id().to_string(),
        completed: run.status == SessionStatus::Completed,
        flags,
        planning_failures: detect_planning_failures(&run.record),
        exceptions: count_exceptions(&run.record),
        user_queries: run.record.ledger().total as u64,
        metrics,
        evaluation_error,
    }
}

fn final_model(record: &SessionRecord, workdir: &Path) -> Option<Result<ModelArtifact, String>> {
    let fit = record.models().last()?;
    Some(ModelArtifact::load(&workdir.join(&fit.path)).map_err(|e| e.to_string()))
}

/// Test split: a fraction of the rows held out, or a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestSplit {
    Fraction(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    /// `"synthetic"` for the bundled cohort, or a CSV path.
    pub dataset: String,
    /// Required for CSV datasets; ignored for the synthetic cohort, which
    /// comes with its own held-out split.
    #[serde(default)]
    pub test_split: Option<TestSplit>,
    /// Column name to role, for CSV datasets.
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub persona: Option<PathBuf>,
    pub modes: Vec<SessionMode>,
    pub replicates: usize,
    /// One per replicate; defaults to 0, 1, 2, ...
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Policy script file per mode, overriding the bundled scripts.
    #[serde(default)]
    pub policies: std::collections::BTreeMap<String, PathBuf>,
}

impl HarnessConfig {
    pub fn synthetic(modes: Vec<SessionMode>, replicates: usize) -> Self {
        HarnessConfig {
            dataset: "synthetic".into(),
            test_split: None,
            sidecar: None,
            target: None,
            persona: None,
            modes,
            replicates,
            seeds: Vec::new(),
            policies: Default::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Result<Vec<u64>, HarnessError> {
        if self.seeds.is_empty() {
            return Ok((0..self.replicates as u64).collect());
        }
        if self.seeds.len() != self.replicates {
            return Err(HarnessError::Config(format!("{} seeds for {} replicates", self.seeds.len(), self.replicates)));
        }
        Ok(self.seeds.clone())
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.replicates == 0 {
            return Err(HarnessError::Config("replicates must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(HarnessError::Config("no modes".into()));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Read { path: path.display().to_string(), message: e.to_string() })
}

/// Shuffles rows with the seed and holds out `fraction` of them.
pub fn split_csv(text: &str, fraction: f64, seed: u64) -> Result<(String, String), HarnessError> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(HarnessError::Config(format!("test_split {fraction} must be in (0, 1)")));
    }
    let frame = Frame::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut idx: Vec<usize> = (0..frame.n_rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((frame.n_rows() as f64) * fraction).round() as usize;
    let test: std::collections::BTreeSet<usize> = idx[..n_test].iter().copied().collect();
    Ok((frame.filter_rows(|r| !test.contains(&r)).to_csv(), frame.filter_rows(|r| test.contains(&r)).to_csv()))
}

impl HarnessConfig {
    fn split_for(&self, seed: u64) -> Result<DatasetSplit, HarnessError> {
        if self.dataset == "synthetic" {
            return Ok(dataset::generate(seed).into());
        }
        let text = read(Path::new(&self.dataset))?;
        let (train_csv, test_csv) = match &self.test_split {
            Some(TestSplit::Fraction(f)) => split_csv(&text, *f, seed)?,
            Some(TestSplit::File(p)) => (text, read(p)?),
            None => return Err(HarnessError::Config("a CSV dataset needs test_split".into())),
        };
        let sidecar = match &self.sidecar {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| HarnessError::Config(format!("sidecar: {e}")))?,
            None => Sidecar::new(),
        };
        let target = self.target.clone().ok_or_else(|| HarnessError::Config("a CSV dataset needs target".into()))?;
        Ok(DatasetSplit { train_csv, test_csv, sidecar, target })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessResults {
    pub config: HarnessConfig,
    pub table: ComparisonTable,
}

/// Runs every (mode, seed) replicate and aggregates them.
pub fn run_harness(config: &HarnessConfig, store: &SessionStore) -> Result<HarnessResults, HarnessError> {
    config.validate()?;
    let persona = match &config.persona {
        Some(p) => PersonaScript::from_json(&read(p)?).map_err(|e| HarnessError::Config(format!("persona: {e}")))?,
        None => default_persona(),
    };
    let mut results = Vec::new();
    for mode in &config.modes {
        let policy = match config.policies.get(mode.as_str()) {
            Some(p) => Some(serde_json::from_str::<ScriptedPolicy>(&read(p)?).map_err(|e| HarnessError::Config(format!("policy: {e}")))?),
            None => None,
        };
        for seed in config.seeds()? {
            let data = config.split_for(seed)?;
            let options = SessionOptions { policy: policy.clone(), ..SessionOptions::default() };
            let run = run_scripted_session(store, &persona, *mode, &data, seed, options)?;
            results.push(evaluate_run(&run, &data, seed));
        }
    }
    let table = aggregate(&results)?;
    Ok(HarnessResults { config: config.clone(), table })
}

/// Writes `comparison_report.md` and `results.json` into `out_dir`.
pub fn write_results(results: &HarnessResults, out_dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let report = out_dir.join("comparison_report.md");
    let json = out_dir.join("results.json");
    std::fs::write(&report, results.table.to_markdown())?;
    std::fs::write(&json, serde_json::to_string_pretty(results).expect("results serialize") + "\n")?;
    Ok((report, json))
}
