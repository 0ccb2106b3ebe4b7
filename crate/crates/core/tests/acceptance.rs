//! One PASS/FAIL line per acceptance criterion. Criteria run on separate
//! threads; a panic inside one counts as its failure.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use climb_core::codeexec::ExecConfig;
use climb_core::engine::{Engine, PythonExecutor};
use climb_core::harness::dataset::{self, GROUP_COLUMN, ID_COLUMN, LEAK_COLUMN, TARGET};
use climb_core::harness::detect::FailureFlags;
use climb_core::harness::metrics::{evaluate_model, metrics_from};
use climb_core::harness::persona::{default_persona, PersonaUser};
use climb_core::harness::run::{evaluate_run, run_scripted_session, DatasetSplit, ScriptedRun, SessionOptions};
use climb_core::harness::scripts::{baseline_script, BaselineVariant};
use climb_core::llm::{ScriptEntry, ScriptedPolicy};
use climb_core::plan::ProjectContext;
use climb_core::reasoning::{Action, FeedbackSource};
use climb_core::session::archive::{persist, resume};
use climb_core::session::report::{render_report, REPORT_FILE};
use climb_core::session::store::{BlobDir, Blobs, Clock, NewSession};
use climb_core::session::{EventBody, SessionMode, SessionRecord, SessionStatus, SessionStore};
use climb_core::tools::automl::run_study;
use climb_core::tools::models::ProblemType;
use climb_core::tools::{Frame, ToolContext, ToolRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn store() -> (tempfile::TempDir, SessionStore) {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    (dir, store)
}

fn climb_run(store: &SessionStore, seed: u64) -> Result<(ScriptedRun, DatasetSplit), String> {
    let data: DatasetSplit = dataset::generate(seed).into();
    let run = run_scripted_session(store, &default_persona(), SessionMode::Climb, &data, seed, SessionOptions::default()).map_err(|e| e.to_string())?;
    Ok((run, data))
}

fn end_to_end() -> Outcome {
    let (_d, store) = store();
    let started = Instant::now();
    let (run, _) = climb_run(&store, 7)?;
    let elapsed = started.elapsed();
    ensure!(run.status == SessionStatus::Completed, "session ended {:?}", run.status);
    let plan = run.record.plan().ok_or("no plan")?;
    let missing: Vec<String> = plan.spec().subtasks().filter(|s| s.is_mandatory() && !plan.is_completed(&s.id)).map(|s| s.id.clone()).collect();
    ensure!(missing.is_empty(), "mandatory subtasks not completed: {missing:?}");
    let aborted = run.record.events().iter().filter(|e| matches!(e.body, EventBody::EpisodeAborted { .. })).count();
    ensure!(aborted == 0, "{aborted} episodes aborted");
    let fit = run.record.models().last().ok_or("no model fit")?;
    ensure!(run.workdir.join(&fit.path).is_file(), "model file {} missing", fit.path);
    let files = run.record.files();
    for (what, needle) in [("feature importance", "_importance.csv"), ("subgroup table", &format!("_subgroups_{GROUP_COLUMN}.csv") as &str)] {
        ensure!(files.keys().any(|k| k.ends_with(needle)), "no {what} artifact");
    }
    ensure!(files.contains_key(REPORT_FILE), "no final report");
    let forced = run.record.events().iter().any(|e| matches!(e.body, EventBody::ReportGenerated { forced: true, .. }));
    ensure!(!forced, "report was forced");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{} events, {} files, {:.1}s", run.record.events().len(), files.len(), elapsed.as_secs_f64()))
}

fn property_suite() -> Outcome {
    let (_d, store) = store();
    let mut violations = Vec::new();
    let mut completed = 0;
    for seed in 0..1000u64 {
        let s = common::random_session(&store, seed);
        completed += usize::from(s.status == SessionStatus::Completed);
        violations.extend(common::violations(&s.record, &s.config).into_iter().map(|v| format!("seed {seed}: {v}")));
    }
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    Ok(format!("1000 sessions ({completed} completed), 0 violations"))
}

fn detectors() -> Outcome {
    let (_d, store) = store();
    let (run, data) = climb_run(&store, 3)?;
    let clean = evaluate_run(&run, &data, 3).flags;
    ensure!(clean.fired().is_empty(), "clean climb fixture fired {:?}", clean.fired());
    for (i, v) in BaselineVariant::FAILURES.into_iter().enumerate() {
        let options = SessionOptions { policy: Some(baseline_script(v)), ..SessionOptions::default() };
        let run = run_scripted_session(&store, &default_persona(), SessionMode::Baseline, &data, 100 + i as u64, options).map_err(|e| e.to_string())?;
        let fired = evaluate_run(&run, &data, 3).flags.fired();
        ensure!(fired == [FailureFlags::NAMES[i]], "{v:?} fired {fired:?}");
    }
    Ok("clean fixture silent; 8/8 baseline fixtures fire only their own flag".into())
}

fn dataset_issues() -> Outcome {
    let (_d, store) = store();
    for seed in 0..5 {
        let (run, data) = climb_run(&store, seed)?;
        for (subtask, column) in [("check_data_leakage", LEAK_COLUMN), ("check_irrelevant_columns", ID_COLUMN)] {
            let found = run.record.findings().iter().any(|(_, f)| {
                f.columns.iter().any(|c| c == column)
                    && run.record.events().iter().any(|e| matches!(&e.body, EventBody::Finding { subtask_id, finding, .. } if subtask_id == subtask && finding == f))
            });
            ensure!(found, "seed {seed}: no {subtask} finding naming {column}");
        }
        let flags = evaluate_run(&run, &data, seed).flags;
        ensure!(!flags.id_columns_missed && !flags.leakage_columns_missed, "seed {seed}: planted columns reached the model");
    }
    Ok("identifier and leakage columns flagged in 5/5 replicates".into())
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.random_range(2..300);
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let pred: Vec<f64> = target.iter().map(|t| t + rng.random_range(-10.0..10.0)).collect();
        let nf = n as f64;
        let sse: f64 = pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum();
        let mean = target.iter().sum::<f64>() / nf;
        let sst: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
        let mae = pred.iter().zip(&target).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf;
        let m = metrics_from(&pred, &target).map_err(|e| e.to_string())?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        ensure!(close(m.mse, sse / nf), "case {case}: mse {} vs {}", m.mse, sse / nf);
        ensure!(close(m.rmse, (sse / nf).sqrt()), "case {case}: rmse");
        ensure!(close(m.mae, mae), "case {case}: mae");
        ensure!(close(m.r2, 1.0 - sse / sst), "case {case}: r2 {} vs {}", m.r2, 1.0 - sse / sst);
        ensure!(close(m.rmse * m.rmse, m.mse), "case {case}: rmse^2 != mse");
        ensure!(close(m.r2, 1.0 - m.mse / (sst / nf)), "case {case}: r2 != 1 - mse/var");
    }
    Ok("20/20 pairs within 1e-9".into())
}

fn linear_frame(csv: &str) -> Result<Frame, String> {
    let f = Frame::parse(csv).map_err(|e| e.to_string())?;
    let f = f.select_columns(&["x1".into(), "x2".into(), TARGET.into()]).map_err(|e| e.to_string())?;
    Ok(f.filter_rows(|r| !f.row_has_missing(r)))
}

fn automl_quality() -> Outcome {
    let mut worst = [f64::INFINITY; 2];
    for (i, noise) in [dataset::NOISE_SD, 0.0].into_iter().enumerate() {
        for seed in 0..3 {
            let data = dataset::generate_with_noise(seed, noise);
            let train = linear_frame(&data.train_csv)?;
            let test = Frame::parse(&data.test_csv).map_err(|e| e.to_string())?;
            let k = 5;
            let study = run_study(&train, TARGET, ProblemType::Regression, k, seed, &[], &[]).map_err(|e| e.to_string())?;
            let a = &study.artifact;
            ensure!(a.cv_fold_scores.len() == k && a.cv_folds == k, "{} fold scores for {k} folds", a.cv_fold_scores.len());
            let mean = a.cv_fold_scores.iter().sum::<f64>() / k as f64;
            ensure!((mean - a.cv_score).abs() <= 1e-12, "fold mean {mean} vs score {}", a.cv_score);
            let r2 = evaluate_model(a, &test).map_err(|e| e.to_string())?.r2;
            worst[i] = worst[i].min(r2);
        }
    }
    ensure!(worst[0] >= 0.95, "noisy held-out r2 {}", worst[0]);
    ensure!(worst[1] >= 0.999, "noiseless held-out r2 {}", worst[1]);
    Ok(format!("held-out r2 >= {:.4} (noisy), {:.6} (noiseless)", worst[0], worst[1]))
}

fn imputation_contract() -> Outcome {
    let registry = ToolRegistry::with_native_tools();
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset::generate(seed);
        std::fs::write(dir.path().join("cohort.csv"), &data.train_csv).unwrap();
        let before = Frame::parse(&data.train_csv).map_err(|e| e.to_string())?;
        let gaps: usize = before.columns().iter().filter(|c| c.name != TARGET).map(|c| c.missing_count()).sum();
        let ctx = ProjectContext::new();
        let tc = ToolContext { workdir: dir.path(), seed, project: &ctx, recipe: &[] };
        let params = json!({"dataset": "cohort.csv", "strategy": "hotdeck", "exclude_columns": [TARGET]});
        let out = registry.invoke("impute", &params, &tc);
        ensure!(out.report.is_success(), "impute failed: {}", out.report.narrative);
        let derived = out.effects.derived_dataset.ok_or("no derived dataset")?;
        let after = Frame::read(&dir.path().join(&derived)).map_err(|e| e.to_string())?;
        let left: usize = after.columns().iter().filter(|c| c.name != TARGET).map(|c| c.missing_count()).sum();
        ensure!(left == 0, "seed {seed}: {left} gaps left");
        ensure!(before.column(TARGET).unwrap().values == after.column(TARGET).unwrap().values, "seed {seed}: target changed");
        let reported = out.report.output["total_imputed"].as_u64().ok_or("no total_imputed")? as usize;
        ensure!(reported == gaps, "seed {seed}: reported {reported} of {gaps} gaps");
    }
    Ok("5/5 seeds: no gaps left, target untouched, counts match".into())
}

/// The log up to (not including) the first event of `kind`.
fn prefix_before(record: &SessionRecord, stop: impl Fn(&EventBody) -> bool) -> Result<SessionRecord, String> {
    let n = record.events().iter().position(|e| stop(&e.body)).ok_or("event not found")?;
    let text: String = record.lines()[..n].iter().map(|l| format!("{l}\n")).collect();
    SessionRecord::from_log(&text).map_err(|e| e.to_string())
}

fn round_trip(src: &Path, id: &str, scratch: &Path) -> Result<(), String> {
    let a1 = scratch.join(format!("{id}-1.json"));
    let a2 = scratch.join(format!("{id}-2.json"));
    persist(src, &a1).map_err(|e| e.to_string())?;
    let other = SessionStore::new(scratch.join(format!("{id}-store"))).unwrap();
    let (record, dir) = resume(&other, &a1).map_err(|e| e.to_string())?;
    persist(&dir, &a2).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&a1).unwrap() == std::fs::read(&a2).unwrap(), "{id}: archives differ");
    let original = SessionRecord::from_log(&std::fs::read_to_string(src.join("events.log")).unwrap()).map_err(|e| e.to_string())?;
    ensure!(record.log_text() == original.log_text(), "{id}: resumed log differs");
    let blobs = BlobDir::of_workdir(&dir);
    ensure!(render_report(&record, &blobs) == render_report(&original, &BlobDir::of_workdir(src)), "{id}: regenerated reports differ");
    if let Some(hash) = record.events().iter().find_map(|e| match &e.body {
        EventBody::ReportGenerated { hash, .. } => Some(hash.clone()),
        _ => None,
    }) {
        let stored = blobs.get_blob(&hash).ok_or("report blob missing")?;
        let prefix = prefix_before(&record, |b| matches!(b, EventBody::ReportGenerated { .. }))?;
        ensure!(render_report(&prefix, &blobs).into_bytes() == stored, "{id}: regenerated report differs from the stored one");
    }
    Ok(())
}

fn replay_persistence() -> Outcome {
    let (_d, store) = store();
    let scratch = tempfile::tempdir().unwrap();
    let mut ids = Vec::new();
    let (run, data) = climb_run(&store, 5)?;
    ids.push(run.record.session_id().to_string());
    for (i, v) in [BaselineVariant::Clean].into_iter().chain(BaselineVariant::FAILURES).enumerate() {
        let options = SessionOptions { policy: Some(baseline_script(v)), ..SessionOptions::default() };
        let run = run_scripted_session(&store, &default_persona(), SessionMode::Baseline, &data, 200 + i as u64, options).map_err(|e| e.to_string())?;
        ids.push(run.record.session_id().to_string());
    }
    for id in &ids {
        round_trip(&store.workdir(id), id, scratch.path())?;
    }
    Ok(format!("{} fixture sessions round-trip byte-identically", ids.len()))
}

fn adversarial_cells(outside: &Path) -> Vec<(&'static str, String)> {
    let abs1 = outside.join("escape_abs.txt");
    let abs2 = outside.join("escape_copy.csv");
    vec![
        ("crash", "raise RuntimeError('boom')".into()),
        ("crash", "x = 1 / 0".into()),
        ("crash", "import os\nos.abort()".into()),
        ("crash", "import ctypes\nctypes.string_at(0)".into()),
        ("loop", "while True:\n    pass".into()),
        ("loop", "import time\ntime.sleep(100)".into()),
        ("loop", "import itertools\nfor _ in itertools.count():\n    pass".into()),
        ("loop", "x = 0\nwhile x >= 0:\n    x += 1".into()),
        ("memory", "b = bytearray(8 * 1024 ** 3)".into()),
        ("memory", "a = [0] * (10 ** 10)".into()),
        ("memory", "s = 'x' * (10 ** 11)".into()),
        ("memory", "chunks = []\nwhile True:\n    chunks.append(bytearray(10 ** 7))".into()),
        ("escape", format!("open({:?}, 'w').write('x')", abs1.display().to_string())),
        ("escape", "open('../escaped.txt', 'w').write('x')".into()),
        ("escape", "import os\nos.symlink('/etc/passwd', 'passwd_link')".into()),
        ("escape", format!("import shutil\nshutil.copy('cohort.csv', {:?})", abs2.display().to_string())),
        ("exit", "import sys\nsys.exit(3)".into()),
        ("exit", "import os\nos._exit(7)".into()),
        ("exit", "raise SystemExit(1)".into()),
        ("exit", "import sys\nsys.exit('fatal')".into()),
    ]
}

fn fault_injection() -> Outcome {
    let (root, store) = store();
    let outside = tempfile::tempdir().unwrap();
    let cells = adversarial_cells(outside.path());
    let mut lane: Vec<ScriptEntry> = cells.iter().map(|(_, src)| ScriptEntry::action(Action::code(src.clone()))).collect();
    lane.push(ScriptEntry::action(Action::Stop));
    let policy = ScriptedPolicy::new(Vec::new()).with_lane("upload_data_file", lane);
    let data = dataset::generate(1);
    let mut spec = NewSession::new("cohort.csv", data.train_csv.into_bytes());
    spec.session_id = Some("faults".into());
    spec.clock = Clock::Logical;
    let session = store.create(spec).map_err(|e| e.to_string())?;
    let exec = ExecConfig { timeout_secs: 2.0, memory_bytes: 512 * 1024 * 1024, ..ExecConfig::default() };
    let mut engine = Engine::new(session, Box::new(policy), Box::new(PersonaUser::new(default_persona()))).with_executor(Box::new(PythonExecutor(exec)));
    let status = engine.run().map_err(|e| format!("engine error: {e}"))?;
    let record = engine.session().record().clone();
    ensure!(record.status() == status && status != SessionStatus::Active, "session not closed");
    let episode = record.episodes().first().ok_or("no episode")?;
    let steps: Vec<_> = episode.steps.iter().filter(|s| matches!(s.action, Action::GenerateCode { .. })).collect();
    ensure!(steps.len() == cells.len(), "{} of {} cells ran", steps.len(), cells.len());
    for ((class, _), step) in cells.iter().zip(&steps) {
        let fb = step.feedback.as_ref().ok_or_else(|| format!("{class} cell {} has no feedback", step.t))?;
        ensure!(fb.source == FeedbackSource::SelfReflection, "{class} cell {}: feedback from {:?}", step.t, fb.source);
        ensure!(fb.text.contains("The code cell failed"), "{class} cell {} not reported as failed: {}", step.t, fb.text);
    }
    let escapes: Vec<_> = record.events().iter().filter_map(|e| match &e.body {
        EventBody::ExecutionResultRef { step, hash, .. } if matches!(cells.get(*step), Some(("escape", _))) => Some(hash.clone()),
        _ => None,
    }).collect();
    ensure!(escapes.len() == 4, "{} escape results recorded", escapes.len());
    let blobs = BlobDir::of_workdir(&store.workdir("faults"));
    for h in &escapes {
        let raw = blobs.get_blob(h).ok_or("execution blob missing")?;
        let res: climb_core::codeexec::ExecutionResult = serde_json::from_slice(&raw).map_err(|e| e.to_string())?;
        ensure!(!res.rejected_paths.is_empty(), "escape not rejected: {:?}", res.exception_text);
    }
    let leaked: Vec<PathBuf> = [outside.path().join("escape_abs.txt"), outside.path().join("escape_copy.csv"), root.path().join("escaped.txt")]
        .into_iter()
        .filter(|p| p.exists())
        .collect();
    ensure!(leaked.is_empty(), "files written outside the workdir: {leaked:?}");
    ensure!(std::fs::symlink_metadata(store.workdir("faults").join("passwd_link")).is_err(), "escaping symlink left behind");
    ensure!(!record.files().contains_key("passwd_link"), "escaping symlink indexed");
    Ok(format!("20/20 cells survived and reported; session {status:?}"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("end-to-end climb session", end_to_end),
        ("plan/bandit property suite", property_suite),
        ("failure detectors", detectors),
        ("dataset issues flagged", dataset_issues),
        ("metrics oracle", metrics_oracle),
        ("automl quality", automl_quality),
        ("imputation contract", imputation_contract),
        ("replay and persistence", replay_persistence),
        ("fault injection", fault_injection),
    ];
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(*f)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))))
            .collect()
    });
    let mut failed = 0;
    for (i, ((name, _), r)) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {}. {name}: {e}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
