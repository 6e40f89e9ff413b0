use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modelcal::domain::{Family, Which};
use modelcal::sim::{self, SampleDesign, Scenario};
use modelcal::{fusion, io};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modelcal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn validate(schema: &str, instance: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?} in {instance}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Poisson internal sample, SRS external sample and the external summary,
/// written to a temporary directory.
struct Fixture {
    dir: TempDir,
    internal: PathBuf,
    external: PathBuf,
    summary: PathBuf,
}

fn fixture() -> Fixture {
    let s = Scenario {
        population_size: 5_000,
        n1: 300,
        n2: 1_000,
        ..Scenario::desk(SampleDesign::Poisson, SampleDesign::Srs)
    };
    let frame = sim::Frame::new(&s).unwrap();
    let (s1, s2) = frame.draw_pair(&s, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let internal = dir.path().join("internal.csv");
    let external = dir.path().join("external.csv");
    let summary = dir.path().join("ext.json");
    io::write_sample_csv(&s1, &internal).unwrap();
    io::write_sample_csv(&s2, &external).unwrap();
    let ext = fusion::estimate_alpha_internal(&s2, &s.spec().unwrap()).unwrap();
    fs::write(&summary, io::summary_to_json(&ext).to_string()).unwrap();
    Fixture {
        dir,
        internal,
        external,
        summary,
    }
}

#[test]
fn estimate_reports_calibrated_fit() {
    let f = fixture();
    let text = ok_stdout(&[
        "estimate",
        "--internal",
        p(&f.internal),
        "--summary",
        p(&f.summary),
        "--full",
        "x1,x2",
        "--reduced",
        "x1",
        "--family",
        "linear",
    ]);
    let report: Value = serde_json::from_str(&text).unwrap();
    validate("estimate_report.schema.json", &report);
    assert_eq!(report["coefficients"], json!(["intercept", "x1", "x2"]));
    assert_eq!(report["variance_mode"], "pooled_alpha_case1");
    let diag = &report["diagnostics"];
    assert_eq!(diag["converged"], true);
    assert!(diag["max_constraint_residual"].as_f64().unwrap() <= 1e-8);
    for j in 0..3 {
        let lo = report["ci_lower"][j].as_f64().unwrap();
        let hi = report["ci_upper"][j].as_f64().unwrap();
        let b = report["beta_hat"][j].as_f64().unwrap();
        assert!(lo < b && b < hi);
    }
}

#[test]
fn estimate_csv_has_one_row_per_coefficient() {
    let f = fixture();
    let text = ok_stdout(&[
        "estimate",
        "--internal",
        p(&f.internal),
        "--summary",
        p(&f.summary),
        "--reduced",
        "x1",
        "--external-only",
        "--format",
        "csv",
    ]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "coefficient,estimate,std_error,ci_lower,ci_upper");
    assert_eq!(lines.len(), 4);
}

#[test]
fn calibrate_writes_weights_meeting_the_constraints() {
    let f = fixture();
    let out = f.dir.path().join("w.csv");
    ok_stdout(&[
        "calibrate",
        "--internal",
        p(&f.internal),
        "--summary",
        p(&f.summary),
        "--reduced",
        "x1",
        "--out",
        p(&out),
    ]);
    let sample = io::parse_sample_csv(&f.internal, None).unwrap();
    let summary = io::parse_summary_json(&f.summary).unwrap();
    let spec = Scenario::default().spec().unwrap();
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["unit_id", "d", "w"]);
    let mut constraint = nalgebra::DVector::zeros(2);
    let mut total = 0.0;
    for (rec, unit) in rdr.records().zip(sample.units()) {
        let rec = rec.unwrap();
        let d: f64 = rec[1].parse().unwrap();
        let w: f64 = rec[2].parse().unwrap();
        assert!(w > 0.0);
        assert!((d - unit.design_weight()).abs() <= 1e-9 * d);
        constraint += modelcal::domain::eval_score(&spec, Which::Reduced, summary.alpha(), unit).unwrap() * w;
        total += w;
    }
    assert!(constraint.amax() / total <= 1e-8, "{constraint}");
}

#[test]
fn propensity_emits_a_summary() {
    let f = fixture();
    let text = ok_stdout(&[
        "propensity",
        "--big",
        p(&f.external),
        "--internal",
        p(&f.internal),
        "--reduced",
        "x1",
    ]);
    let v: Value = serde_json::from_str(&text).unwrap();
    validate("summary.schema.json", &v);
    let s = io::summary_from_json(&text).unwrap();
    assert_eq!(s.alpha().len(), 2);
}

#[test]
fn pool_scalar_example() {
    let dir = tempfile::tempdir().unwrap();
    let a1 = dir.path().join("a1.json");
    let a2 = dir.path().join("a2.json");
    fs::write(&a1, r#"{"alpha": [1.0], "V": [[4.0]]}"#).unwrap();
    fs::write(&a2, r#"{"alpha": [3.0], "V": [[1.0]]}"#).unwrap();
    let text = ok_stdout(&["pool", "--internal-summary", p(&a1), "--external-summary", p(&a2)]);
    let v: Value = serde_json::from_str(&text).unwrap();
    validate("pooled_benchmark.schema.json", &v);
    assert!((v["alpha_star"][0].as_f64().unwrap() - 2.6).abs() < 1e-12);
    assert!((v["V_star"][0][0].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((v["W"][0][0].as_f64().unwrap() - 0.8).abs() < 1e-12);

    let text = ok_stdout(&[
        "pool",
        "--internal-summary",
        p(&a1),
        "--external-summary",
        p(&a2),
        "--external-only",
    ]);
    let v: Value = serde_json::from_str(&text).unwrap();
    validate("pooled_benchmark.schema.json", &v);
    assert_eq!(v["alpha_star"], json!([3.0]));
    assert_eq!(v["external_only"], true);
}

#[test]
fn simulate_smoke_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/smoke.toml");
    let out = dir.path().join("m.csv");
    let log = dir.path().join("reps.csv");
    let svg = dir.path().join("bias.svg");
    ok_stdout(&[
        "simulate",
        "--config",
        p(&config),
        "--out",
        p(&out),
        "--replications-log",
        p(&log),
        "--svg",
        p(&svg),
        "--threads",
        "2",
    ]);
    let table = fs::read_to_string(&out).unwrap();
    // Three estimators times three coefficients plus the header.
    assert_eq!(table.lines().count(), 10);
    assert!(table.starts_with("scenario,estimator,coefficient"));
    assert!(fs::read_to_string(&log).unwrap().lines().count() > 20);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(dir.path().join("bias.coverage.svg").exists());
}

#[test]
fn failures_exit_nonzero_with_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,y,weight\n0.5,1.0,2.0\n0.7,1.5,0.0\n").unwrap();
    let summary = dir.path().join("s.json");
    fs::write(&summary, r#"{"alpha": [0.0, 1.0], "V": [[1.0, 0.0], [0.0, 1.0]]}"#).unwrap();
    let out = run(&["estimate", "--internal", p(&bad), "--summary", p(&summary), "--reduced", "x1"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    validate("error.schema.json", &err);
    assert_eq!(err["error"]["code"], "WeightNonPositive");
    assert_eq!(err["error"]["module"], "cli_io");

    fs::write(&summary, r#"{"alpha": [0.0], "V": [[1.0]], "extra": 1}"#).unwrap();
    let out = run(&["pool", "--internal-summary", p(&summary), "--external-summary", p(&summary)]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    validate("error.schema.json", &err);
    assert_eq!(err["error"]["code"], "SchemaError");
}

#[test]
fn summary_emitter_matches_its_schema() {
    let s = Scenario::default();
    let pop = sim::scenario_population(&s).unwrap();
    let spec = modelcal::domain::EstimatingSpec::standard(Family::Linear, 2).unwrap();
    let stat = fusion::estimate_alpha_internal(&pop.as_sample().unwrap(), &spec).unwrap();
    validate("summary.schema.json", &io::summary_to_json(&stat));
}
