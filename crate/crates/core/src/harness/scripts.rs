//! Policy scripts for the bundled cohort: a well-behaved plan-following run
//! and free-form runs, including ones that reproduce known failure modes.

use serde_json::{json, Value};

use crate::llm::{ScriptEntry, ScriptedPolicy};
use crate::reasoning::Action;

fn tool(name: &str, params: Value) -> ScriptEntry {
    ScriptEntry::action(Action::tool(name, params))
}

fn ask(prompt: &str, key: Option<&str>) -> ScriptEntry {
    ScriptEntry::action(Action::QueryUser { prompt: prompt.into(), context_key: key.map(str::to_string) })
}

fn say(text: &str) -> ScriptEntry {
    ScriptEntry::action(Action::text(text))
}

fn code(src: &str) -> ScriptEntry {
    ScriptEntry::action(Action::code(src))
}

fn stop() -> ScriptEntry {
    ScriptEntry::action(Action::Stop)
}

/// One lane per subtask of the default plan, for a regression study on the
/// synthetic cohort.
pub fn climb_script() -> ScriptedPolicy {
    let lanes: Vec<(&str, Vec<ScriptEntry>)> = vec![
        ("upload_data_file", vec![tool("check_data_file", json!({})), stop()]),
        ("check_hardware", vec![tool("check_hardware", json!({})), stop()]),
        ("check_data_file_loadable", vec![tool("check_data_file", json!({})), stop()]),
        ("high_level_information", vec![ask("What is the research question and clinical background of this study?", Some("research_question")), stop()]),
        (
            "experiment_setup",
            vec![
                ask("Which column is the target you want to predict?", Some("target_column")),
                ask("Is this a classification, regression or survival problem?", Some("problem_type")),
                stop(),
            ],
        ),
        ("assess_suitability", vec![say("The dataset has a numeric target and enough rows for a regression study."), stop()]),
        ("exclude_keep_columns", vec![ask("Are there columns you want to exclude or keep regardless?", None), stop()]),
        ("perform_eda", vec![tool("eda", json!({})), stop()]),
        ("descriptive_statistics", vec![tool("descriptive_statistics", json!({})), stop()]),
        ("small_sample_warning", vec![say("With fewer than 1000 rows, results may not generalize; we will rely on cross-validation."), stop()]),
        ("column_background", vec![ask("Which column defines the patient subgroups you would like to compare?", Some("group_column")), stop()]),
        ("represent_missing_as_nan", vec![tool("missingness_profile", json!({})), stop()]),
        ("drop_high_missing_columns", vec![tool("drop_missing_columns", json!({"exclude_columns": ["${target_column}"]})), stop()]),
        ("drop_missing_rows", vec![tool("drop_rows_missing", json!({"columns": ["${target_column}"]})), stop()]),
        (
            "impute_missing",
            vec![
                tool("impute", json!({"strategy": "median", "exclude_columns": ["${target_column}", "smoking"]})),
                tool("impute", json!({"strategy": "mode", "exclude_columns": ["${target_column}"]})),
                stop(),
            ],
        ),
        (
            "discuss_preprocessing",
            vec![tool("encode_categoricals", json!({"columns": ["sex", "smoking"]})), say("Categorical columns were one-hot encoded; the subgroup column stays as text."), stop()],
        ),
        ("feature_selection", vec![tool("feature_selection", json!({"exclude_columns": ["${group_column}", "patient_id"]})), stop()]),
        ("confirm_problem_type", vec![ask("Can you confirm that predicting y as a regression problem is right?", None), stop()]),
        ("check_data_leakage", vec![tool("leakage_screen", json!({})), tool("drop_columns", json!({"columns": "${leakage_candidates}"})), stop()]),
        ("check_irrelevant_columns", vec![tool("identifier_screen", json!({})), tool("drop_columns", json!({"columns": "${identifier_candidates}"})), stop()]),
        ("ml_study_regression", vec![tool("automl_study", json!({"exclude_columns": ["${group_column}"]})), stop()]),
        ("iterate_ml_study", vec![ask("Are you satisfied with the model performance?", None), stop()]),
        ("feature_importance", vec![tool("permutation_importance", json!({})), stop()]),
        ("subgroup_analysis", vec![tool("subgroup_analysis", json!({})), stop()]),
        ("finish_up", vec![ask("Is there anything else before we finish?", None), stop()]),
    ];
    let mut p = ScriptedPolicy::new(Vec::new());
    for (id, entries) in lanes {
        p.push_lane(id, entries);
    }
    p
}

/// Ways a free-form run can go wrong, one per failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineVariant {
    Clean,
    DidNotFinish,
    EdaPartiallyFailed,
    ModelsNotSaved,
    NoFeatureReview,
    TargetImputedUnchecked,
    RowsDroppedExcessively,
    NoCrossValidation,
    SubgroupByRetraining,
}

impl BaselineVariant {
    pub const FAILURES: [BaselineVariant; 8] = [
        BaselineVariant::DidNotFinish,
        BaselineVariant::EdaPartiallyFailed,
        BaselineVariant::ModelsNotSaved,
        BaselineVariant::NoFeatureReview,
        BaselineVariant::TargetImputedUnchecked,
        BaselineVariant::RowsDroppedExcessively,
        BaselineVariant::NoCrossValidation,
        BaselineVariant::SubgroupByRetraining,
    ];
}

/// A free-form script. Each turn is one entry list; the run ends with a
/// turn that stops immediately.
pub fn baseline_script(variant: BaselineVariant) -> ScriptedPolicy {
    use BaselineVariant as V;
    let mut e: Vec<ScriptEntry> = vec![
        say("Plan:\n1. Load the data and run exploratory data analysis.\n2. Handle missing values and drop unusable columns.\n3. Train a model with cross-validation.\n4. Compute feature importance and a subgroup analysis."),
        tool("check_data_file", json!({})),
        tool("eda", json!({})),
    ];
    if variant == V::EdaPartiallyFailed {
        e.push(code("import csv\nrows = list(csv.reader(open('cohort.csv')))\nprint(summary_table(rows))\n"));
    }
    if variant != V::NoFeatureReview {
        e.push(ask("Which columns should be left out of the model?", None));
    }
    match variant {
        V::TargetImputedUnchecked => {
            e.push(tool("drop_columns", json!({"columns": ["patient_id", "followup_score", "lab_a"]})));
            e.push(tool("impute", json!({"strategy": "median", "exclude_columns": ["smoking"]})));
            e.push(tool("impute", json!({"strategy": "mode"})));
        }
        V::RowsDroppedExcessively => {
            // A blanket drop of every row with any gap.
            e.push(tool("drop_columns", json!({"columns": ["patient_id", "followup_score"]})));
            e.push(tool("drop_rows_missing", json!({})));
        }
        _ => {
            e.push(tool("drop_columns", json!({"columns": ["patient_id", "followup_score", "lab_a"]})));
            e.push(tool("drop_rows_missing", json!({"columns": ["y"]})));
            e.push(tool("impute", json!({"strategy": "median", "exclude_columns": ["y", "smoking"]})));
            e.push(tool("impute", json!({"strategy": "mode", "exclude_columns": ["y"]})));
        }
    }
    e.push(tool("encode_categoricals", json!({"columns": ["sex", "smoking"]})));
    if variant == V::DidNotFinish {
        // The script runs dry here: the policy fails mid-study.
        return ScriptedPolicy::new(e);
    }
    let automl = tool("automl_study", json!({"target": "y", "problem_type": "regression", "exclude_columns": ["site"]}));
    match variant {
        V::ModelsNotSaved => {
            e.push(code(
                "class Ridge:\n    def fit(self, X, y):\n        self.n = len(y)\n        return self\n# scored with cross_val_score in a previous attempt\nRidge().fit([[1.0], [2.0]], [1.0, 2.0])\nprint('fitted')\n",
            ));
            e.push(stop());
            e.push(stop());
            return ScriptedPolicy::new(e);
        }
        V::NoCrossValidation => {
            e.push(automl.clone());
            e.push(code(
                "class Ridge:\n    def fit(self, X, y):\n        self.n = len(y)\n        return self\nm = Ridge().fit([[1.0], [2.0]], [1.0, 2.0])\nopen('final_model.pkl', 'w').write('ridge')\nprint('refit on all rows and saved')\n",
            ));
        }
        _ => e.push(automl.clone()),
    }
    e.push(tool("permutation_importance", json!({"model": "${model_path}", "dataset": "${dataset_path}"})));
    if variant == V::SubgroupByRetraining {
        e.push(tool("automl_study", json!({"target": "y", "problem_type": "regression", "exclude_columns": ["site", "sex_F", "sex_M"]})));
    }
    e.push(tool("subgroup_analysis", json!({"group_column": "site"})));
    e.push(stop());
    e.push(stop());
    ScriptedPolicy::new(e)
}
