use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[model]
g = 0.02
s0 = 0.1

[grid]
rho = 0.25
shells = 4
angular_nodes = 2

[rg]
rho = 0.25
n_steps = 2
"#;

fn srg(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_srg"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_passes_on_defaults_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), SMALL, &["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "hypotheses.json");
    assert_eq!(v["schema"], "hypotheses/1");
    assert_eq!(v["config"]["grid"]["shells"], 4);
    assert!(v["ledger"]["c_gamma"].is_number());
    assert_eq!(v["result"]["hypotheses"]["pass"], true);
}

#[test]
fn diverging_infrared_norm_names_hypothesis_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("s0 = 0.1", "s0 = 0.1\nmu = 3.0");
    let o = srg(dir.path(), &cfg, &["check"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Hypothesis 1"), "{}", stdout(&o));
}

#[test]
fn paper_locked_ledger_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[polydisc]\nmode = \"paper-locked\"\n");
    let o = srg(dir.path(), &cfg, &["check"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("contraction"));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), "[grid\nshells = ", &["check"]);
    assert_eq!(o.status.code(), Some(2));
    let o = srg(dir.path(), "[grid]\nshells = \"eight\"\n", &["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_few_shells_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("n_steps = 2", "n_steps = 3");
    let o = srg(dir.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("insufficient shells"));
}

#[test]
fn free_run_lands_on_the_atomic_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("g = 0.02", "g = 0.0");
    let o = srg(dir.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "trace.json");
    let z = v["result"]["trace"]["z_infinity"][0].as_f64().unwrap();
    // lowest eigenvalue of diag(0, 1) + 0.1 σ_x
    let e_at = (1.0 - (1.0f64 + 4.0 * 0.01).sqrt()) / 2.0;
    assert!((z - e_at).abs() < 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("out/levels.csv")).unwrap();
    assert!(csv.starts_with("level,z_re,z_im,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn coupled_run_agrees_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), SMALL, &["run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "trace.json");
    assert_eq!(v["result"]["oracle"]["pass"], true);
    assert_eq!(v["result"]["gap"]["pass"], true);
    assert_eq!(v["result"]["trace"]["ledger"]["mode"]["mode"], "empirical");
}

#[test]
fn wick_at_zero_coupling_has_zero_residual() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("g = 0.02", "g = 0.0");
    let o = srg(dir.path(), &cfg, &["wick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "wick.json");
    assert!(v["result"]["comparison"]["residual"].as_f64().unwrap() < 1e-13);
}

#[test]
fn wick_scaling_at_small_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), SMALL, &["wick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v = json(dir.path(), "wick.json");
    assert_eq!(v["result"]["bounds"]["v1_pass"], true);
}

#[test]
fn oracle_with_wrong_coupling_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[verify]\noracle_g = 0.03\n");
    let o = srg(dir.path(), &cfg, &["oracle"]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(dir.path(), "oracle.json");
    assert_eq!(v["result"]["pass"], false);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = srg(d.path(), SMALL, &["oracle", "--threads", "1"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("out/oracle.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn analyticity_passes_on_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), SMALL, &["analyticity", "--threads", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v = json(dir.path(), "contour.json");
    assert_eq!(v["result"]["loops"].as_array().unwrap().len(), 11);
}

#[test]
fn counterexample_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = srg(dir.path(), SMALL, &["demo-counterexample"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    assert!(csv.starts_with("s,e,block_lowest"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["spin_boson.toml", "dipole_toy.toml"] {
        srg_cli::RunConfig::load(&root.join(name)).unwrap();
    }
}
