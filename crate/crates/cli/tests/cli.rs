use std::path::Path;
use std::process::{Command, Output};

fn tlsafe(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tlsafe"));
    cmd.args(args).env_remove("TLSAFE_OUT");
    if let Some(dir) = out_env {
        cmd.env("TLSAFE_OUT", dir);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: &str = r#"
[agent]
hidden = [16, 16]
minibatch = 32
epochs = 1

[run]
configuration = "rl+cbf"
seeds = [0, 1]
iterations = 2
batch = 2
horizon = 30
eval_trials = 4
record_every = 1
"#;

#[test]
fn compile_fsa_prints_dot_and_json() {
    let dot = stdout(&tlsafe(&["compile-fsa"], None));
    assert!(dot.starts_with("digraph fsa {"));
    assert!(dot.contains("doublecircle"));
    let json = stdout(&tlsafe(&["compile-fsa", "--format", "json"], None));
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["states"].as_array().unwrap().len(), 4);
}

#[test]
fn train_eval_replay_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let root = dir.path().join("env-root");

    stdout(&tlsafe(&["--config", cfg, "train"], Some(&root)));
    for seed in [0, 1] {
        let run = root.join("rl+cbf").join(format!("seed-{seed}"));
        for f in ["metrics.csv", "trajectories.jsonl", "checkpoint.json", "config.toml"] {
            assert!(run.join(f).exists(), "{f} for seed {seed}");
        }
    }
    let eval = stdout(&tlsafe(&["--config", cfg, "--seed", "1", "eval"], Some(&root)));
    assert!(eval.contains("over 4 trials"));
    let rows = std::fs::read_to_string(root.join("rl+cbf/seed-1/eval.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
    let rep = stdout(&tlsafe(&["--config", cfg, "--seed", "0", "replay"], Some(&root)));
    assert!(rep.contains("4 episodes"), "{rep}");

    // --out wins over the environment variable
    let flag_root = dir.path().join("flag-root");
    let out = flag_root.to_str().unwrap();
    stdout(&tlsafe(
        &["--config", cfg, "--seed", "3", "--configuration", "rl", "--out", out, "train"],
        Some(&root),
    ));
    assert!(flag_root.join("rl/seed-3/metrics.csv").exists());
    assert!(!root.join("rl").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let o = tlsafe(&["--configuration", "rl+magic", "compile-fsa"], None);
    assert!(!o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nbatch = \"five\"\n").unwrap();
    let o = tlsafe(&["--config", cfg.to_str().unwrap(), "compile-fsa"], None);
    assert!(!o.status.success());
    let o = tlsafe(&["--out", dir.path().to_str().unwrap(), "--seed", "0", "eval"], None);
    assert!(!o.status.success());
}
