use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_doeblin");

fn doeblin(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DOEBLIN_OUT").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_BRANCHING: &str = r#"
experiment = "branching"
seed = 1

[branching]
spacing = 0.0625

[[branching.cases]]
label = "pop"
rate = { kind = "constant", value = 1.0 }
t = 1.0
n_runs = 200
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn zero_runs_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "b.toml", &SMALL_BRANCHING.replace("n_runs = 200", "n_runs = 0"));
    let o = doeblin(&["run", &cfg, "--out", d.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("branching.cases[0].n_runs"), "{}", stderr(&o));
    assert!(!d.path().join("o").exists());
}

#[test]
fn unknown_key_is_reported_with_its_name() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "b.toml", &SMALL_BRANCHING.replace("spacing = 0.0625", "spacing = 0.0625\nspacingg = 1.0"));
    let o = doeblin(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spacingg"), "{}", stderr(&o));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let o = doeblin(&["run", "preset:nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_list_names_every_preset() {
    let o = doeblin(&["presets", "list"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for p in doeblin_cli::presets::PRESETS {
        assert!(text.contains(p.name));
    }
    let o = doeblin(&["presets", "show", "maxage"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[maxage.profile]"));
}

#[test]
fn run_writes_artifacts_and_compare_separates_stochastic_fields() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "b.toml", SMALL_BRANCHING);
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    let o = doeblin(&["run", &cfg, "--out", a.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["mc_pop.csv", "summary.json", "report.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(a.join("mc_pop.csv")).unwrap();
    assert!(header.starts_with("run,population,estimate\n"));

    assert!(doeblin(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(a.join("mc_pop.csv")).unwrap(), fs::read(b.join("mc_pop.csv")).unwrap());
    let same = doeblin(&["compare", a.join("report.json").to_str().unwrap(), b.join("report.json").to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0), "{}", String::from_utf8_lossy(&same.stdout));

    assert!(doeblin(&["run", &cfg, "--out", c.to_str().unwrap(), "--seed", "2"]).status.success());
    let diff = doeblin(&["compare", a.join("report.json").to_str().unwrap(), c.join("report.json").to_str().unwrap()]);
    assert_eq!(diff.status.code(), Some(1));
    let text = String::from_utf8_lossy(&diff.stdout);
    assert!(text.contains("summary.cases[pop].mean"), "{text}");
    assert!(text.contains("seed"), "{text}");
    assert!(!text.contains("deterministic"), "{text}");
}

#[test]
fn compare_rejects_different_experiments() {
    let d = tempfile::tempdir().unwrap();
    let a = write(d.path(), "a.json", r#"{"experiment": "renewal"}"#);
    let b = write(d.path(), "b.json", r#"{"experiment": "maxage"}"#);
    assert_eq!(doeblin(&["compare", &a, &b]).status.code(), Some(2));
}

#[test]
fn out_root_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "small.toml", SMALL_BRANCHING);
    let o = Command::new(BIN).args(["run", &cfg]).env("DOEBLIN_OUT", d.path().join("root")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("root/small/report.json").exists());
}

#[test]
fn failing_check_exits_with_one() {
    let d = tempfile::tempdir().unwrap();
    let text = SMALL_BRANCHING.replace("seed = 1", "seed = 1\n[tolerances]\nruntime = 1e-9");
    let cfg = write(d.path(), "b.toml", &text);
    let o = doeblin(&["run", &cfg, "--out", d.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL runtime"));
}
