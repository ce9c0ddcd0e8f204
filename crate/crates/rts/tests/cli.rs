use rts::cli::{
    run, to_json, DEFAULT_TRIALS, EXIT_CORRUPT, EXIT_ERROR, EXIT_NOTHING_EVALUATED, EXIT_OK,
};
use rts_core::datamodel::{load_dataset_file, validate_dataset, Dataset};
use rts_core::evaluation::{backtest_with_window, LabelingRule, DEFAULT_TRAINING_WINDOW};
use rts_core::features::FeatureScope;
use rts_core::fixtures::{oracle_label, planted_default, shuffled_default};
use rts_core::ranker::{Role, TrainConfig};
use rts_core::session::{Decision, Session, SessionStore, WorkflowEvent};
use rts_core::verification::AdequacyThresholds;
use rts_core::workflow::{self, RoleLabel};
use std::path::{Path, PathBuf};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn rts(args: &[&str]) -> Output {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("rts").chain(args.iter().copied());
    let code = run(argv, &mut stdout, &mut stderr);
    Output {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn write_dataset(dir: &Path, name: &str, d: &Dataset) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, d.to_json()).unwrap();
    path
}

const CLEAN: &str = r#"{
  "schema_version": 1,
  "project": "demo",
  "releases": ["r1", "r2"],
  "tests": [
    {"id": "T1", "title": "login", "description": "login with valid password",
     "requirement_ids": ["R1"], "defect_ids": ["D1"], "tags": ["smoke"],
     "history": [
       {"release": "r1", "executed": true, "verdict": "pass", "revealed_defect_ids": []},
       {"release": "r2", "executed": true, "verdict": "fail", "revealed_defect_ids": ["D1"]}
     ]},
    {"id": "T2", "title": "logout", "description": "logout clears the session",
     "requirement_ids": ["R1"], "defect_ids": [], "tags": [],
     "history": [
       {"release": "r1", "executed": true, "verdict": "pass", "revealed_defect_ids": []},
       {"release": "r2", "executed": true, "verdict": "pass", "revealed_defect_ids": []}
     ]}
  ],
  "requirements": [
    {"id": "R1", "title": "authentication", "description": "", "changed_in_releases": ["r2"]}
  ],
  "defects": [
    {"id": "D1", "title": "login rejects valid password", "severity": 2, "found_in_release": "r2"}
  ]
}"#;

#[test]
fn validate_clean_dataset_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clean.json");
    std::fs::write(&path, CLEAN).unwrap();
    let out = rts(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_OK, "{}{}", out.stdout, out.stderr);
    assert!(out.stdout.contains("0 issues"), "{}", out.stdout);
}

#[test]
fn validate_duplicate_id_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = planted_default();
    let dup = d.tests[0].clone();
    d.tests.push(dup);
    let path = write_dataset(dir.path(), "dup.json", &d);
    let out = rts(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_CORRUPT);
    assert!(out.stdout.contains("DUP_ID"), "{}", out.stdout);
    assert!(out.stdout.contains("CORRUPT"));
}

#[test]
fn validate_missing_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.json");
    let out = rts(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_ERROR);
    assert!(out.stderr.contains("absent.json"), "{}", out.stderr);
}

#[test]
fn validate_malformed_json_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"schema_version\": 1,").unwrap();
    assert_eq!(rts(&["validate", path.to_str().unwrap()]).code, EXIT_ERROR);
}

#[test]
fn validate_json_is_the_core_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = planted_default();
    d.tests[3].requirement_ids.push("REQ-NOPE".into());
    let path = write_dataset(dir.path(), "dangling.json", &d);
    let out = rts(&["validate", path.to_str().unwrap(), "--json"]);
    assert_eq!(out.code, EXIT_CORRUPT);
    let direct = validate_dataset(&load_dataset_file(&path).unwrap());
    assert_eq!(out.stdout, to_json(&direct));
}

#[test]
fn backtest_json_is_the_core_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "a.json", &planted_default());
    let out = rts(&[
        "backtest",
        path.to_str().unwrap(),
        "--releases",
        "r3,r5",
        "--trials",
        "200",
        "--seed",
        "9",
        "--deselect",
        "tags",
        "--json",
    ]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);

    let d = load_dataset_file(&path).unwrap();
    let mut scope = FeatureScope::all("");
    scope.deselected_groups.insert("tags".into());
    let mut direct = backtest_with_window(
        &d,
        &scope,
        &TrainConfig::default(),
        &["r3".to_string(), "r5".to_string()],
        LabelingRule::HistoryVerdict,
        DEFAULT_TRAINING_WINDOW,
    )
    .unwrap();
    direct.attach_random_baseline(&d, 200, 9).unwrap();
    assert_eq!(out.stdout, to_json(&direct));
}

#[test]
fn backtest_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "b.json", &shuffled_default());
    let args = ["backtest", path.to_str().unwrap(), "--seed", "42", "--json"];
    let first = rts(&args);
    let second = rts(&args);
    assert_eq!(first.code, EXIT_OK);
    assert_eq!(first.stdout, second.stdout);
    assert!(first.stdout.contains("random_baseline"));
}

#[test]
fn backtest_table_on_planted_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "a.json", &planted_default());
    let out = rts(&["backtest", path.to_str().unwrap(), "--trials", "100"]);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.starts_with("release"), "{}", out.stdout);
    assert!(out.stdout.contains("random"));
    assert!(out
        .stdout
        .contains("r1           skipped: no earlier release"));

    let d = load_dataset_file(&path).unwrap();
    let report = backtest_with_window(
        &d,
        &FeatureScope::all(""),
        &TrainConfig::default(),
        &d.releases,
        LabelingRule::HistoryVerdict,
        DEFAULT_TRAINING_WINDOW,
    )
    .unwrap();
    assert!(report.mean_apfd.unwrap() >= 0.85, "{:?}", report.mean_apfd);
}

#[test]
fn backtest_unknown_release_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "a.json", &planted_default());
    let out = rts(&["backtest", path.to_str().unwrap(), "--releases", "r2,r99"]);
    assert_eq!(out.code, EXIT_ERROR);
    assert!(out.stderr.contains("r99"), "{}", out.stderr);
    assert!(out.stdout.is_empty());
}

#[test]
fn backtest_with_nothing_evaluated_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clean.json");
    std::fs::write(&path, CLEAN).unwrap();
    // r2 trains on r1, where nothing failed: one class only
    let out = rts(&["backtest", path.to_str().unwrap(), "--releases", "r2"]);
    assert_eq!(
        out.code, EXIT_NOTHING_EVALUATED,
        "{}{}",
        out.stdout, out.stderr
    );
    assert!(out.stdout.contains("degenerate labels"), "{}", out.stdout);
}

#[test]
fn backtest_defaults() {
    assert_eq!(DEFAULT_TRIALS, 1000);
    let out = rts(&["backtest", "--help"]);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.contains("--releases"));
}

#[test]
fn fixture_command_writes_the_generator_output() {
    let out = rts(&["fixture", "planted"]);
    assert_eq!(out.code, EXIT_OK);
    assert_eq!(out.stdout, planted_default().to_json() + "\n");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    let out = rts(&["fixture", "shuffled", "--out", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_OK);
    assert_eq!(load_dataset_file(&path).unwrap(), shuffled_default());
}

fn accepted_session(store: &SessionStore) -> Session {
    let d = planted_default();
    let release = "r6";
    let s = Session::new("cli-export", 5);
    let s = s
        .transition(
            "tm",
            WorkflowEvent::LoadData {
                dataset_ref: "a".into(),
            },
        )
        .unwrap();
    let s = s
        .transition(
            "tm",
            workflow::scope_event(&d, FeatureScope::all(release)).unwrap(),
        )
        .unwrap();
    let labels = |role: Role, ids: &mut dyn Iterator<Item = &String>| -> Vec<RoleLabel> {
        ids.map(|id| RoleLabel {
            test_id: id.clone(),
            label: oracle_label(&d, id, release).unwrap(),
            role,
            relabel: false,
        })
        .collect()
    };
    let ids: Vec<String> = d.tests.iter().map(|t| t.id.clone()).collect();
    let training = labels(Role::Training, &mut ids.iter().step_by(5));
    let s = s
        .transition("tm", workflow::label_event(&d, training).unwrap())
        .unwrap();
    let s = s
        .transition(
            "tm",
            workflow::train_event(&s, &d, &TrainConfig::default()).unwrap(),
        )
        .unwrap();
    let draw = workflow::draw(&s, 40, 3).unwrap();
    let verification = labels(Role::Verification, &mut draw.test_ids.iter());
    let s = s
        .transition("tm", workflow::label_event(&d, verification).unwrap())
        .unwrap();
    let s = s
        .transition(
            "tm",
            workflow::assess_event(&s, &AdequacyThresholds::default()).unwrap(),
        )
        .unwrap();
    let report = s.latest_report().unwrap();
    let cutoff = report.interval_d.map_or(1, |i| i.low_rank);
    let s = s
        .transition(
            "tm",
            workflow::decision_event(&s, Decision::Accept, Some(cutoff), true).unwrap(),
        )
        .unwrap();
    store.persist(&s).unwrap();
    s
}

#[test]
fn session_export_writes_the_selection_document() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let s = accepted_session(&store);
    let expected = to_json(&s.export().unwrap());

    let out = rts(&[
        "session",
        "export",
        "cli-export",
        "--store",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert_eq!(out.stdout, expected);

    let target = dir.path().join("export.json");
    let out = rts(&[
        "session",
        "export",
        "cli-export",
        "--store",
        dir.path().to_str().unwrap(),
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&target).unwrap(), expected);

    let config = dir.path().join("rts.toml");
    std::fs::write(
        &config,
        format!("store_dir = {:?}\n", dir.path().to_str().unwrap()),
    )
    .unwrap();
    let out = rts(&[
        "session",
        "export",
        "cli-export",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.stdout, expected);
}

#[test]
fn session_export_refuses_unfinished_or_missing_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let s = Session::new("fresh", 5);
    store.persist(&s).unwrap();
    let store_arg = dir.path().to_str().unwrap();
    let out = rts(&["session", "export", "fresh", "--store", store_arg]);
    assert_eq!(out.code, EXIT_ERROR);
    assert!(!out.stderr.is_empty());
    let out = rts(&["session", "export", "nobody", "--store", store_arg]);
    assert_eq!(out.code, EXIT_ERROR);
    assert!(out.stderr.contains("not found"), "{}", out.stderr);
}

#[test]
fn usage_errors_go_to_stderr() {
    let out = rts(&["frobnicate"]);
    assert_eq!(out.code, 2);
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}
