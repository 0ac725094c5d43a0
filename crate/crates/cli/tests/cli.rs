use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
schema_version = 1
label = "small"

[dataset]
kind = "two_moons"
n_source = 400
n_target = 300

[stream]
query_size = 32

[model]
hidden_dims = [16, 16]
"#;

fn crodobo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crodobo")).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let res = crodobo(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(res.status.success(), "{}", text(&res));
    for name in [
        "manifest.json",
        "trace.jsonl",
        "report.json",
        "report.csv",
        "per_query_accuracy.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 300usize.div_ceil(32));
    let per_query = fs::read_to_string(out.join("per_query_accuracy.csv")).unwrap();
    assert!(per_query.starts_with("query_index,size,correct,accuracy"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let acc = report["online_average"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn out_of_range_tau_names_field_line_and_range() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("{SMALL}\n[hyper]\ntau = 1.5\n"));
    let res = crodobo(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(1));
    let msg = text(&res);
    assert!(msg.contains("hyper.tau"), "{msg}");
    assert!(msg.contains("(0, 1]"), "{msg}");
    let line = SMALL.lines().count() + 3;
    assert!(msg.contains(&format!("line {line}")), "{msg}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_schema_version_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "v9.toml", &SMALL.replace("schema_version = 1", "schema_version = 9"));
    let res = crodobo(&["run", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(1), "{}", text(&res));
}

#[test]
fn rerun_and_manifest_replay_reproduce_the_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let [a, b, c] = ["a", "b", "c"].map(|d| tmp.path().join(d));
    assert!(crodobo(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(crodobo(&["run", "--config", s(&cfg), "--out", s(&b)]).status.success());
    let replay = crodobo(&["run", "--config", s(&a.join("manifest.json")), "--out", s(&c)]);
    assert!(replay.status.success(), "{}", text(&replay));
    let trace = fs::read(a.join("trace.jsonl")).unwrap();
    assert_eq!(trace, fs::read(b.join("trace.jsonl")).unwrap());
    assert_eq!(trace, fs::read(c.join("trace.jsonl")).unwrap());
}

#[test]
fn multiple_seeds_write_per_seed_runs_and_an_aggregate() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let res = crodobo(&["run", "--config", s(&cfg), "--out", s(&out), "--seeds", "0,1,2"]);
    assert!(res.status.success(), "{}", text(&res));
    for seed in 0..3 {
        assert!(out.join(format!("seed_{seed}")).join("trace.jsonl").is_file());
    }
    let table = fs::read_to_string(out.join("seeds.csv")).unwrap();
    assert!(table.starts_with("metric,seed_0,seed_1,seed_2,mean,var"), "{table}");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn sweep_rejects_unknown_params_and_ignores_empty_lists() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("sweep");
    let bad = crodobo(&["sweep", "--config", s(&cfg), "--param", "gamma", "--values", "1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad).contains("gamma"));
    let empty = crodobo(&["sweep", "--config", s(&cfg), "--param", "tau", "--values", "", "--out", s(&out)]);
    assert_eq!(empty.status.code(), Some(0));
    assert!(text(&empty).to_lowercase().contains("warning"));
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn sweep_writes_one_column_per_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("sweep");
    let res = crodobo(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "lambda",
        "--values",
        "0,0.4",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", text(&res));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("metric,lambda=0,lambda=0.4,mean,var"), "{table}");
}

#[test]
fn ablate_reports_every_variant() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("ablate");
    let res = crodobo(&["ablate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(res.status.success(), "{}", text(&res));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    for variant in ["crodobo", "single", "single_no_ent", "single_no_div", "source_only", "continual"] {
        assert!(
            table.lines().any(|l| l.starts_with(&format!("{variant},"))),
            "{variant} missing:\n{table}"
        );
    }
}

#[test]
fn gradcheck_passes_and_fails_on_a_broken_backward() {
    let ok = crodobo(&["gradcheck", "--instances", "3"]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok));
    let broken = crodobo(&["gradcheck", "--instances", "3", "--inject-fault", "bn-sign-flip"]);
    assert_eq!(broken.status.code(), Some(3), "{}", text(&broken));
    let loose = crodobo(&["gradcheck", "--instances", "3", "--eps", "1e-3"]);
    assert_eq!(loose.status.code(), Some(0));
    assert!(text(&loose).contains("looser"));
}

#[test]
fn generated_csv_domains_reproduce_the_synthetic_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let data = tmp.path().join("data");
    let gen = crodobo(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    assert!(gen.status.success(), "{}", text(&gen));
    let from_files = SMALL.replace(
        "kind = \"two_moons\"\nn_source = 400\nn_target = 300",
        "kind = \"csv\"\nsource = \"data/source.csv\"\ntarget = \"data/target.csv\"\nlabel_column = \"label\"\nnum_classes = 2",
    );
    let csv_cfg = write_config(tmp.path(), "files.toml", &from_files);
    let [a, b] = ["a", "b"].map(|d| tmp.path().join(d));
    assert!(crodobo(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let res = crodobo(&["run", "--config", s(&csv_cfg), "--out", s(&b)]);
    assert!(res.status.success(), "{}", text(&res));
    assert_eq!(fs::read(a.join("trace.jsonl")).unwrap(), fs::read(b.join("trace.jsonl")).unwrap());
}

#[test]
fn saved_model_reloads_as_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let model = tmp.path().join("model.json");
    let [a, b, c] = ["a", "b", "c"].map(|d| tmp.path().join(d));
    let res = crodobo(&["run", "--config", s(&cfg), "--out", s(&a), "--save-model", s(&model)]);
    assert!(res.status.success(), "{}", text(&res));
    assert!(model.is_file());
    let r1 = crodobo(&["run", "--config", s(&cfg), "--out", s(&b), "--load-model", s(&model)]);
    let r2 = crodobo(&["run", "--config", s(&cfg), "--out", s(&c), "--load-model", s(&model)]);
    assert!(r1.status.success() && r2.status.success(), "{}", text(&r1));
    let warm = fs::read(b.join("trace.jsonl")).unwrap();
    assert_eq!(warm, fs::read(c.join("trace.jsonl")).unwrap());
    assert_ne!(warm, fs::read(a.join("trace.jsonl")).unwrap());
    let missing = crodobo(&["run", "--config", s(&cfg), "--load-model", s(&tmp.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn distinct_init_flag_changes_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let [a, b] = ["a", "b"].map(|d| tmp.path().join(d));
    assert!(crodobo(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let res = crodobo(&["run", "--config", s(&cfg), "--out", s(&b), "--distinct-init"]);
    assert!(res.status.success(), "{}", text(&res));
    let manifest = fs::read_to_string(b.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"distinct_init\": true"), "{manifest}");
    assert_ne!(fs::read(a.join("trace.jsonl")).unwrap(), fs::read(b.join("trace.jsonl")).unwrap());
}
