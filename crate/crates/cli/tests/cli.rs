use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_regret-ldp");

const CONFIG: &str = r#"
name = "cli"
seed = 11
output_dir = "from_config"

[model]
kind = "scalar"
epsilon = 0.1

[simulate]
horizon = 1.0

[rate]
points = [[0.45]]
beta_min = -0.2
beta_max = 0.2
beta_count = 5
cross_check = true

[escape]
geometry = { shape = "box", half_widths = [0.2] }
horizon = 1.0
segments = 6
epsilons = [0.1]
replicates = 30
block_length = 0.5
delta = 0.1

[exit_time]
epsilons = [0.1]
replicates = 3
max_steps = 100000

[variational]
epsilons = [0.5]
steps = [1, 2]
functionals = 2
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn each_stage_verb_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let cfg = cfg.to_str().unwrap();
    let cases: [(&str, &[&str]); 7] = [
        ("simulate", &["trajectory.csv"]),
        ("fluid", &[]),
        ("rate", &["rate_surface.csv", "rate_crosscheck.csv"]),
        ("escape-opt", &["escape_path.csv", "escape_action.csv"]),
        ("escape-mc", &["escape_crude.csv", "escape_importance.csv"]),
        ("exit-time", &["exit_time.csv"]),
        ("verify-variational", &["variational.csv"]),
    ];
    for (verb, files) in cases {
        let out = dir.path().join(verb);
        let args = [verb, "--config", cfg, "--out", out.to_str().unwrap()];
        if verb == "fluid" {
            // no [fluid] section
            assert!(!run(&args).status.success());
            continue;
        }
        ok(&args);
        for f in files {
            assert!(out.join(f).is_file(), "{verb}: {f} missing");
        }
        assert!(out.join("manifest.toml").is_file());
    }
}

#[test]
fn out_of_range_epsilon_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("epsilon = 0.1", "epsilon = 1.5"));
    let out = dir.path().join("o");
    let res = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("1.5"));
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let cfg = cfg.to_str().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| dir.path().join(d)).collect();
    for (d, seed) in dirs.iter().zip(["11", "11", "12"]) {
        ok(&["simulate", "--config", cfg, "--out", d.to_str().unwrap(), "--seed", seed]);
    }
    let read = |d: &Path| fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    assert_ne!(read(&dirs[0]), read(&dirs[2]));
    let manifest = fs::read_to_string(dirs[2].join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 12"));
}

#[test]
fn output_defaults_to_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    ok(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(dir.path().join("from_config/trajectory.csv").is_file());
}

#[test]
fn run_then_emit_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("all");
    let stdout = ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("variational.csv"));
    let listed = ok(&["emit-plotdata", "--out", out.to_str().unwrap()]);
    assert!(listed.contains("escape_scatter.csv"));
    assert!(out.join("plotdata/escape_scatter.csv").is_file());
}

#[test]
fn emit_plotdata_on_an_empty_directory_lists_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["emit-plotdata", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("escape_importance.csv") && err.contains("exit_time.csv"), "{err}");
}
