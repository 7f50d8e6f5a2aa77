use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DUAL: &str = r#"
name = "small_dual"
seed = 5
n_edges = 600000
analyses = ["coincidence", "key_extraction", "self_blinding", "randomness"]
trace_cycles = 64

[source]
mean_photon_number = 4.0
trigger_rate = 4.0e6

[[detector]]
quantum_efficiency = 0.1
dead_time = 1.01e-5

[[detector]]
quantum_efficiency = 0.1
dead_time = 1.01e-5
"#;

const SINGLE: &str = r#"
name = "small_single"
seed = 6
n_blocks = 20
analyses = ["useful_stats"]

[source]
mean_photon_number = 0.1
trigger_rate = 4.0e6

[[detector]]
quantum_efficiency = 0.1
dead_time = 5.2e-6

[feedback]
cmp_value = 20
"#;

fn tdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdsim")).args(args).output().unwrap()
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_conforms(validator: &jsonschema::Validator, file: &Path) {
    let doc: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", file.display());
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    tdsim(&args)
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_scenario(dir.path(), "empty.scenario", "");
    let broken = write_scenario(dir.path(), "broken.scenario", "name = \n[source\n");
    let invalid = write_scenario(dir.path(), "invalid.scenario", &SINGLE.replace("0.1\ntrigger", "-0.1\ntrigger"));
    let good = write_scenario(dir.path(), "good.scenario", SINGLE);

    let code = |o: Output| o.status.code().unwrap();
    let validate = |p: &Path| code(tdsim(&["validate", "--scenario", p.to_str().unwrap(), "--quiet"]));
    assert_eq!(validate(&empty), 2);
    assert_eq!(validate(&broken), 2);
    assert_eq!(validate(&invalid), 3);
    assert_eq!(validate(&good), 0);
    assert_eq!(validate(&dir.path().join("missing.scenario")), 4);

    // output directory path blocked by a regular file
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(run(&good, &blocker.join("out"), &[])), 4);
}

#[test]
fn parse_error_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write_scenario(dir.path(), "broken.scenario", "name = \"x\"\nseed = [\n");
    let o = tdsim(&["validate", "--scenario", broken.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("broken.scenario:"), "{err}");
}

#[test]
fn dual_outputs_conform_to_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "dual.scenario", DUAL);
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let stats = schema("stats.schema.json");
    let report = schema("self_blinding_report.schema.json");
    for mode in ["on", "off"] {
        assert_conforms(&stats, &out.join(format!("stats_{mode}.json")));
        assert_conforms(&report, &out.join(format!("self_blinding_{mode}.json")));
        assert!(out.join(format!("key_{mode}.txt")).is_file());
        let trace = fs::read_to_string(out.join(format!("trace_{mode}.csv"))).unwrap();
        assert_eq!(trace.lines().next().unwrap(), "cycle_index,edge_time,ffd_set,counter,clock_delivered");
        assert_eq!(trace.lines().count(), 65);
    }
    assert_conforms(&schema("summary.schema.json"), &out.join("summary.json"));

    let on: Value = serde_json::from_str(&fs::read_to_string(out.join("self_blinding_on.json")).unwrap()).unwrap();
    assert_eq!(on["eve_known_fraction"], 0.0);
    assert!(on["runs"].as_array().unwrap().is_empty());
}

#[test]
fn single_outputs_conform_to_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "single.scenario", SINGLE);
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &[]).status.success());
    let stats = schema("stats.schema.json");
    assert_conforms(&stats, &out.join("stats_on.json"));
    assert_conforms(&stats, &out.join("stats_off.json"));
    assert_conforms(&schema("summary.schema.json"), &out.join("summary.json"));

    let series = fs::read_to_string(out.join("useful_pct_per_block.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next().unwrap(), "block_index,pct_on,pct_off,theory_pct");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("100.0000")));
}

#[test]
fn report_regenerates_identical_documents() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "dual.scenario", DUAL);
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &[]).status.success());
    let before: Vec<Vec<u8>> = ["self_blinding_on.json", "self_blinding_off.json", "key_off.txt"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    for f in ["self_blinding_on.json", "self_blinding_off.json", "key_off.txt"] {
        fs::remove_file(out.join(f)).unwrap();
    }
    let o = tdsim(&["report", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after: Vec<Vec<u8>> = ["self_blinding_on.json", "self_blinding_off.json", "key_off.txt"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "single.scenario", SINGLE);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run(&sc, &a, &["--seed", "6", "--mode", "off"]).status.success());
    assert!(run(&sc, &b, &["--mode", "off"]).status.success());
    assert!(run(&sc, &c, &["--seed", "7", "--mode", "off"]).status.success());
    let read = |d: &Path| fs::read(d.join("events_off.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(!a.join("events_on.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "single.scenario", SINGLE);
    let out = dir.path().join("sweep");
    let o = tdsim(&[
        "sweep",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mu",
        "0.05,0.1,0.2",
        "--eta",
        "0.1",
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let modes: std::collections::BTreeSet<&str> = rows.iter().map(|r| &r[3]).collect();
    assert_eq!(modes.into_iter().collect::<Vec<_>>(), ["off", "on"]);
    let off: Vec<f64> = rows
        .iter()
        .filter(|r| &r[3] == "off" && &r[4] == "useful_percentage")
        .map(|r| r[5].parse().unwrap())
        .collect();
    assert_eq!(off.len(), 3);
    assert!(off[0] > off[1] && off[1] > off[2], "{off:?}");
}

#[test]
fn advisories_go_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let fast = SINGLE.replace("trigger_rate = 4.0e6", "trigger_rate = 30.0e6");
    let sc = write_scenario(dir.path(), "fast.scenario", &fast);
    let o = tdsim(&["validate", "--scenario", sc.to_str().unwrap()]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("feedback_too_slow"), "{err}");
}
