use std::io::Write;
use std::process::{Command, Output};

use serde_json::Value;

fn ddm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn assert_schema(r: &Value) {
    let schema: Value = serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(r) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("report for `{}` violates the schema: {msgs:?}", r["command"]);
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn system_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

const CHAIN: &str = r#"
[space]
kind = "finite"
points = ["a", "b"]
partition = [1, 2]

[[edge]]
symbol = "x"
source = 1
target = 2
map = { "a" = "b" }
prob = { "a" = "1" }

[[edge]]
symbol = "y"
source = 2
target = 1
map = { "b" = "a" }
prob = { "b" = "1/2" }

[[edge]]
symbol = "z"
source = 2
target = 2
map = { "b" = "b" }
prob = { "b" = "1/2" }

[base_points]
points = ["a", "b"]
"#;

#[test]
fn g2_example_is_null_with_a_valid_certificate() {
    let out = ddm(&["phi", "--preset", "g2", "--set", "m=0;w=0|m=0;w=1", "--past-depth", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["value"].as_f64(), Some(0.0));
    let check = &r["results"]["cover_check"];
    assert_eq!(check["disjoint"], true);
    assert_eq!(check["covers_query"], true);
    assert_eq!(check["cost_matches"], true);
    assert_eq!(r["config"]["params"]["past_depth"], 2);

    let star = ddm(&["phi-star", "--preset", "g2", "--past-depth", "2", "--k-max", "2", "--arith", "rational"]);
    assert_eq!(star.status.code(), Some(0));
    let values = report(&star)["results"]["values"].clone();
    assert_eq!(values, serde_json::json!(["0/1", "0/1", "0/1"]));
}

#[test]
fn g1_equilibrium_residual_is_tiny() {
    let out = ddm(&["equilibrium", "--preset", "g1", "--initial", "stationary"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["mode"], "exact");
    assert!(r["results"]["residual"].as_f64().unwrap().abs() <= 1e-12);
    assert!(r["results"]["rows"].as_array().unwrap().len() == 8);
}

#[test]
fn g1_oracle_agrees_with_the_dp() {
    let out = ddm(&["oracle", "--preset", "g1", "--initial", "dirac:1", "--window", "-3:0"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["equal"], true);
    let row = &r["results"]["rows"][0];
    assert_eq!(row["dp"], row["oracle"]);
    assert_eq!(r["config"]["arith"], "rational");
}

#[test]
fn reports_are_deterministic_across_worker_counts() {
    let args = ["phi", "--preset", "g1", "--arith", "rational", "--past-depth", "5"];
    let one = report(&ddm(&[&args[..], &["--workers", "1"]].concat()));
    let many = report(&ddm(&[&args[..], &["--workers", "3"]].concat()));
    assert_eq!(one["determinism_hash"], many["determinism_hash"]);
    assert_eq!(one["results"], many["results"]);
    assert_eq!(one["provenance"]["workers"], 1);
    assert_eq!(many["provenance"]["workers"], 3);
}

#[test]
fn system_files_load_and_csv_goes_to_a_file() {
    let sys = system_file(CHAIN);
    let path = sys.path().to_str().unwrap();
    let out = ddm(&["validate", "--system", path]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(report(&out)["results"]["valid"], true);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("star.csv");
    let out = ddm(&[
        "phi-star",
        "--system",
        path,
        "--initial",
        "dirac:a",
        "--k-max",
        "2",
        "--output",
        "csv",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty(), "stdout carries nothing when --out is given");
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,past_depth,value");
    assert_eq!(lines.len(), 4);
}

#[test]
fn invalid_systems_are_findings_for_validate_and_errors_elsewhere() {
    let broken = CHAIN.replace(r#"prob = { "b" = "1/2" }"#, r#"prob = { "b" = "1/4" }"#);
    let sys = system_file(&broken);
    let path = sys.path().to_str().unwrap();
    let out = ddm(&["validate", "--system", path]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["results"]["valid"], false);
    assert!(!r["results"]["rows"].as_array().unwrap().is_empty());

    let out = ddm(&["phi", "--system", path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("invalid system"), "{}", stderr(&out));
}

#[test]
fn malformed_config_names_the_missing_key() {
    let text = CHAIN.replace(r#"prob = { "a" = "1" }"#, "");
    let sys = system_file(&text);
    let out = ddm(&["validate", "--system", sys.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("prob") && err.contains("line"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ddm(&["phi", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(ddm(&["coding", "--preset", "g2", "--word", "0"]).status.code(), Some(2));
    assert_eq!(ddm(&["invariance", "--preset", "g1", "--output", "csv"]).status.code(), Some(2));
    assert_eq!(ddm(&["oracle", "--preset", "g1", "--window", "-9:0"]).status.code(), Some(2));
    assert_eq!(ddm(&["phi"]).status.code(), Some(2));
}

#[test]
fn coding_and_energy_on_g3() {
    let out = ddm(&["coding", "--preset", "g3", "--arith", "rational", "--word", "0,1,1,0"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["point"]["value"], "3/8");
    assert_eq!(r["results"]["rows"][0]["admissible"], true);

    let out = ddm(&["energy", "--preset", "g3", "--word", "0,0,0,0,0,0,0,0,0,0,0,0,1"]);
    let e = report(&out)["results"]["energy"].as_f64().unwrap();
    assert!((e - (2.0f64 / 3.0).ln()).abs() < 1e-3, "{e}");

    let out = ddm(&["martingale", "--preset", "g3", "--samples", "30", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["distance_violations"], 0);
    assert_eq!(r["config"]["seed"], 4);
}

#[test]
fn pushforward_and_npr_on_a_stationary_chain() {
    let out = ddm(&["pushforward-check", "--preset", "g1", "--initial", "stationary", "--arith", "rational"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["results"]["sibpm_residual"].as_f64(), Some(0.0));
    assert_eq!(r["results"]["eoim_residual"].as_f64(), Some(0.0));

    let out = ddm(&["npr-report", "--preset", "g1", "--initial", "stationary", "--arith", "rational"]);
    let r = report(&out);
    assert_eq!(r["results"]["phi_sigma"], "1/1");
    assert_eq!(r["results"]["equivalence_verdict"], "affirmed");
}

#[test]
fn selftest_passes_every_criterion() {
    let out = ddm(&["selftest"]);
    let err = stderr(&out);
    assert_eq!(out.status.code(), Some(0), "{err}");
    assert_eq!(err.lines().filter(|l| l.contains("[PASS]")).count(), 11, "{err}");
    let r = report(&out);
    assert_schema(&r);
    assert_eq!(r["results"]["passed"], true);
}

#[test]
fn every_command_emits_a_schema_valid_report() {
    let runs: [&[&str]; 13] = [
        &["validate", "--preset", "g3"],
        &["phi", "--preset", "g1", "--past-depth", "2"],
        &["phi-m", "--preset", "g1", "--m", "-1", "--set", "m=0;w=e12"],
        &["phi-star", "--preset", "g2", "--k-max", "1"],
        &["invariance", "--preset", "g1", "--set", "m=0;w=e11", "--past-depth", "2"],
        &["npr-report", "--preset", "g1", "--past-depth", "2"],
        &["oracle", "--preset", "g1", "--window", "-1:0"],
        &["coding", "--preset", "g3", "--word", "1,0"],
        &["energy", "--preset", "g1", "--word", "e11,e12"],
        &["martingale", "--preset", "g3", "--samples", "5", "--depth", "5"],
        &["entropy", "--preset", "g1", "--initial", "stationary"],
        &["equilibrium", "--preset", "g3", "--samples", "2000"],
        &["pushforward-check", "--preset", "g1", "--initial", "stationary"],
    ];
    for args in runs {
        let out = ddm(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
        let r = report(&out);
        assert_eq!(r["command"], args[0]);
        assert_schema(&r);
    }
}

#[test]
#[should_panic(expected = "violates the schema")]
fn schema_rejects_a_report_without_hash() {
    let mut r = report(&ddm(&["phi-m", "--preset", "g1"]));
    r.as_object_mut().unwrap().remove("determinism_hash");
    assert_schema(&r);
}
