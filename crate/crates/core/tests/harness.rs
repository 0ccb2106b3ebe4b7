use std::collections::BTreeMap;

use climb_core::harness::dataset;
use climb_core::harness::detect::{count_exceptions, detect_planning_failures, FailureFlags};
use climb_core::harness::metrics::{aggregate, iqr_outliers, MetricsReport, ReplicateResult, Summary, NOT_APPLICABLE};
use climb_core::harness::persona::{default_persona, PersonaScript};
use climb_core::harness::run::{run_harness, run_scripted_session, split_csv, write_results, DatasetSplit, HarnessConfig, SessionOptions};
use climb_core::llm::ScriptedPolicy;
use climb_core::reasoning::{Action, EpisodeCategory};
use climb_core::session::{SessionMode, SessionRecord, SessionStatus, SessionStore};
use climb_core::tools::Frame;

fn store() -> (tempfile::TempDir, SessionStore) {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    (dir, store)
}

fn replicate(mode: &str, seed: u64, r2: Option<f64>) -> ReplicateResult {
    ReplicateResult {
        mode: mode.into(),
        seed,
        session_id: format!("{mode}-{seed}"),
        completed: true,
        flags: FailureFlags::default(),
        planning_failures: BTreeMap::new(),
        exceptions: 2,
        user_queries: 10,
        metrics: r2.map(|r2| MetricsReport { mse: 1.0, rmse: 1.0, mae: 0.5, r2, n_test: 100 }),
        evaluation_error: None,
    }
}

#[test]
fn identical_replicates_have_zero_spread() {
    let rs: Vec<_> = (0..5).map(|s| replicate("climb", s, Some(0.9))).collect();
    let table = aggregate(&rs).unwrap();
    let m = &table.modes["climb"];
    assert_eq!(m.exceptions.sd, Some(0.0));
    assert_eq!(m.metrics["r2"].sd, Some(0.0));
    assert_eq!(m.failures["did_not_finish"], "0/5");
    assert_eq!(m.models_evaluated, 5);
}

#[test]
fn single_replicate_has_no_spread() {
    let table = aggregate(&[replicate("baseline", 0, Some(0.5))]).unwrap();
    let s = &table.modes["baseline"].user_queries;
    assert_eq!(s.sd, None);
    assert!(s.display().ends_with(NOT_APPLICABLE));
}

#[test]
fn failure_counts_are_fractions_of_replicates() {
    let mut rs: Vec<_> = (0..4).map(|s| replicate("baseline", s, None)).collect();
    rs[1].flags.no_cross_validation = true;
    rs[3].flags.no_cross_validation = true;
    rs[2].planning_failures.insert(EpisodeCategory::ModelBuilding, true);
    let table = aggregate(&rs).unwrap();
    let m = &table.modes["baseline"];
    assert_eq!(m.failures["no_cross_validation"], "2/4");
    assert_eq!(m.planning_failures["model_building"], 1);
    assert!(m.metrics.is_empty());
    let md = table.to_markdown();
    assert!(md.contains("| no_cross_validation | 2/4 |"), "{md}");
}

#[test]
fn empty_results_do_not_aggregate() {
    assert!(aggregate(&[]).is_err());
}

#[test]
fn far_values_are_marked_as_outliers() {
    let v = [1.0, 1.1, 0.9, 1.0, 1.05, 40.0];
    assert_eq!(iqr_outliers(&v, 3.0), vec![5]);
    assert!(Summary::of(&v).unwrap().display().ends_with('*'));
    assert!(iqr_outliers(&[1.0, 100.0, 2.0], 3.0).is_empty());
}

#[test]
fn persona_without_an_answer_aborts_with_the_query() {
    let (_d, store) = store();
    let mut persona = default_persona();
    persona.turns.retain(|t| !t.pattern.contains("research question"));
    let data: DatasetSplit = dataset::generate(1).into();
    let run = run_scripted_session(&store, &persona, SessionMode::Climb, &data, 1, SessionOptions::default()).unwrap();
    assert_eq!(run.status, SessionStatus::Aborted);
    let closed = serde_json::to_string(&run.record.events().last().unwrap().body).unwrap();
    assert!(closed.contains("persona has no answer for"), "{closed}");
}

fn baseline_with(actions: Vec<Action>) -> SessionRecord {
    let (_d, store) = store();
    let data: DatasetSplit = dataset::generate(2).into();
    let options = SessionOptions { policy: Some(ScriptedPolicy::from_actions(actions)), ..SessionOptions::default() };
    run_scripted_session(&store, &default_persona(), SessionMode::Baseline, &data, 2, options).unwrap().record
}

#[test]
fn announced_but_skipped_steps_are_planning_failures() {
    let plan = "Plan:\n1. Exploratory data analysis\n2. Feature selection\n3. Train a model";
    let record = baseline_with(vec![Action::text(plan), Action::tool("eda", serde_json::json!({"dataset": "cohort.csv"})), Action::Stop]);
    let pf = detect_planning_failures(&record);
    assert!(!pf[&EpisodeCategory::DataExploration]);
    assert!(pf[&EpisodeCategory::DataEngineering]);
    assert!(pf[&EpisodeCategory::ModelBuilding]);
    assert!(!pf[&EpisodeCategory::ModelExploitation]);
}

#[test]
fn empty_log_has_no_planning_failures() {
    let pf = detect_planning_failures(&SessionRecord::new());
    assert_eq!(pf.len(), EpisodeCategory::PLANNED.len());
    assert!(pf.values().all(|f| !f));
}

#[test]
fn failed_cells_are_counted_as_exceptions() {
    let record = baseline_with(vec![Action::code("print(1)"), Action::code("1 / 0"), Action::code("import nope_not_here"), Action::Stop]);
    assert_eq!(count_exceptions(&record), 2);
    assert_eq!(count_exceptions(&SessionRecord::new()), 0);
}

#[test]
fn split_holds_out_the_requested_fraction() {
    let text = dataset::generate(0).train_csv;
    let (train, test) = split_csv(&text, 0.25, 9).unwrap();
    let (a, b) = (Frame::parse(&train).unwrap(), Frame::parse(&test).unwrap());
    assert_eq!((a.n_rows(), b.n_rows()), (150, 50));
    assert_eq!(split_csv(&text, 0.25, 9).unwrap(), (train, test));
    assert!(split_csv(&text, 1.0, 9).is_err());
}

#[test]
fn config_rejects_unknown_fields_and_bad_seeds() {
    assert!(HarnessConfig::from_json(r#"{"dataset":"synthetic","modes":["climb"],"replicates":1,"colour":1}"#).is_err());
    let c = HarnessConfig::from_json(r#"{"dataset":"synthetic","modes":["climb"],"replicates":2,"seeds":[4]}"#).unwrap();
    assert!(c.seeds().is_err());
    let (_d, store) = store();
    let csv = HarnessConfig::from_json(r#"{"dataset":"/nonexistent.csv","modes":["climb"],"replicates":1}"#).unwrap();
    assert!(run_harness(&csv, &store).is_err());
}

#[test]
fn harness_compares_modes_and_writes_results() {
    let (_d, store) = store();
    let out = tempfile::tempdir().unwrap();
    let results = run_harness(&HarnessConfig::synthetic(vec![SessionMode::Climb, SessionMode::Baseline], 1), &store).unwrap();
    let climb = &results.table.modes["climb"];
    assert!(climb.failures.values().all(|v| v == "0/1"), "{:?}", climb.failures);
    assert!(climb.metrics["r2"].mean > 0.95);
    assert_eq!(results.table.modes["baseline"].replicates, 1);
    let (report, json) = write_results(&results, out.path()).unwrap();
    assert!(std::fs::read_to_string(report).unwrap().contains("climb"));
    let back: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back["table"]["replicates"].as_array().unwrap().len(), 2);
}

#[test]
fn persona_scripts_round_trip_through_json() {
    let p = default_persona();
    let back = PersonaScript::from_json(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(back.answer_for("What is the target column?"), Some("y".into()));
    assert_eq!(back.answer_for("Unrelated prompt"), None);
}
