use std::path::Path;
use std::process::{Command, Output};

use estop_core::solve_estop;
use estop_lab::{prepare_tabular, run_ablation, AblationKind, ExperimentConfig, ExpertSource};

const SMALL: &str = r#"
n_demos = 200
trials = [0, 1, 2]

[environment]
kind = "frozen_lake"
map = "4x4"
horizon = 40

[ablation]
sigmas = [0.0, 0.1]
demo_counts = [10, 200]

[learner]
episodes = 200
eval_every_episodes = 10
"#;

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estop-lab"))
        .current_dir(dir)
        .env("ESTOP_LAB_THREADS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn with_config(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), text).unwrap();
    dir
}

#[test]
fn exit_codes() {
    let dir = with_config(SMALL);
    let ok = lab(dir.path(), &["--config", "cfg.toml", "--out", "o", "mdp", "build-frozenlake"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("o/mdp.json").exists());

    std::fs::write(dir.path().join("bad.toml"), "trials = []\n").unwrap();
    assert_eq!(code(&lab(dir.path(), &["--config", "bad.toml", "run", "vi-sweep"])), 2);
    std::fs::write(dir.path().join("unknown.json"), r#"{"colour": 1}"#).unwrap();
    assert_eq!(code(&lab(dir.path(), &["--config", "unknown.json", "run", "vi-sweep"])), 2);
    assert_eq!(code(&lab(dir.path(), &["coupon", "--m", "0", "--n", "3"])), 2);

    let all_gone = lab(dir.path(), &["--config", "cfg.toml", "--out", "o", "estop", "learn", "--fraction", "1"]);
    assert_eq!(code(&all_gone), 3);
    let fine = lab(dir.path(), &["--config", "cfg.toml", "--out", "o", "estop", "learn", "--xi", "0.0"]);
    assert_eq!(code(&fine), 0, "{}", String::from_utf8_lossy(&fine.stderr));

    // A lake with no reachable goal is infeasible from the first row.
    std::fs::write(dir.path().join("walled.txt"), "SFHF\nFHFF\nHFFF\nFFFG\n").unwrap();
    let walled = format!("{}\n", SMALL.replace("map = \"4x4\"", "map = \"walled.txt\"\nhole_escape_prob = 0.0"));
    std::fs::write(dir.path().join("walled.toml"), walled).unwrap();
    let out = lab(dir.path(), &["--config", "walled.toml", "--out", "w", "run", "vi-sweep"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn coupon_command_prints_the_probability() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["coupon", "--m", "2", "--n", "2"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.5");
}

#[test]
fn reruns_write_identical_files() {
    let dir = with_config(SMALL);
    for out in ["a", "b"] {
        for cmd in [&["run", "vi-sweep"][..], &["run", "learn"], &["run", "ablation", "--kind", "demos"]] {
            let mut args = vec!["--config", "cfg.toml", "--out", out];
            args.extend_from_slice(cmd);
            let res = lab(dir.path(), &args);
            assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        }
    }
    let names = [
        "vi_sweep.csv",
        "learn_curves.csv",
        "learn_trials.csv",
        "learn_raw.csv",
        "learn_support.json",
        "ablation_demos.csv",
    ];
    for name in names {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between runs");
    }
    let hash = ExperimentConfig::from_path(&dir.path().join("cfg.toml")).unwrap().hash();
    for name in names.iter().filter(|n| n.ends_with(".csv")) {
        let text = std::fs::read_to_string(dir.path().join("a").join(name)).unwrap();
        assert!(text.lines().skip(1).all(|l| l.starts_with(&hash)), "{name} lacks the config hash");
    }
}

#[test]
fn zero_noise_ablation_matches_the_default_pipeline() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let rows = run_ablation(&cfg, AblationKind::ExpertNoise).unwrap();
    let zero = rows.iter().find(|r| r.value == 0.0).unwrap();
    let default = ExperimentConfig {
        expert: ExpertSource::ViOptimal,
        ..cfg
    };
    let opt = solve_estop(&prepare_tabular(&default).unwrap().estop).unwrap();
    assert_eq!(zero.j_estop_opt, opt.value_in_estop);
    assert_eq!(zero.j_estop_opt_base, opt.value_in_base);
}

#[test]
fn demo_count_grid_has_the_small_end() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let rows = run_ablation(&cfg, AblationKind::DemoCount).unwrap();
    assert!(rows.iter().any(|r| r.value == 10.0));
    for r in &rows {
        assert!(r.kept_states >= 1);
        assert!(r.j_estop_opt <= r.j_estop_opt_base + 1e-9, "{r:?}");
    }
}
