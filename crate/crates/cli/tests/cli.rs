use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tsclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn shipped_configs_validate() {
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let o = tsclab(&[
            "baseline",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "0",
            "--controller",
            "random",
        ]);
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
    }
}

#[test]
fn baseline_is_reproducible() {
    let args = ["baseline", "--seed", "4", "--controller", "maxpressure", "--episodes", "2"];
    let a = tsclab(&args);
    let b = tsclab(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("episode 1"));
    assert!(stdout(&a).contains("median queue over 2 episodes"));
}

#[test]
fn missing_seed_is_named() {
    let o = tsclab(&["baseline", "--controller", "fixed"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed is not set"), "{}", stderr(&o));
}

#[test]
fn invalid_values_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_beta = write(dir.path(), "beta.toml", "[reward]\nbeta = -1.0\n");
    let o = tsclab(&["baseline", "--config", &bad_beta, "--seed", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));

    let unknown = write(dir.path(), "typo.toml", "[trainer]\nactor_rate = 1.0\n");
    let o = tsclab(&["train", "--config", &unknown, "--seed", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("actor_rate"), "{}", stderr(&o));

    let mode = write(dir.path(), "mode.toml", "[trainer]\nvalue_loss_mode = \"huber\"\n");
    let o = tsclab(&["train", "--config", &mode, "--seed", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("huber"), "{}", stderr(&o));

    let o = tsclab(&["baseline", "--seed", "0", "--controller", "smart"]);
    assert!(!o.status.success());
}

#[test]
fn baseline_rejects_policy() {
    let o = tsclab(&["baseline", "--seed", "0", "--controller", "policy"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("non-learning"), "{}", stderr(&o));
}

#[test]
fn train_eval_and_reward_hist() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = tsclab(&["train", "--seed", "2", "--episodes", "1", "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("untrained"));
    for f in ["config.toml", "config_hash.txt", "train_log.csv", "checkpoints/final.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let decisions = fs::read_to_string(out.join("episode_000/decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), 360);

    let ckpt = out.join("checkpoints/final.json");
    let o = tsclab(&["eval", "--seed", "2", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let held_out = fs::read_to_string(out.join("eval_000/steps.csv")).unwrap();
    let eval_dir = dir.path().join("eval");
    let o = tsclab(&[
        "eval",
        "--seed",
        "2",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(eval_dir.join("eval_000/steps.csv")).unwrap(), held_out);

    let o = tsclab(&["reward-hist", "--run", out_s, "--hurdle", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("R_env > 1"), "{text}");
    assert!(text.contains("fraction above hurdle:"), "{text}");

    let log = out.join("episode_000/decisions.jsonl");
    let o = tsclab(&["reward-hist", "--log", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("/360 decisions"));
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tsclab(&["train", "--seed", "1", "--episodes", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write(dir.path(), "wide.toml", "[model]\nhidden = 32\n");
    let ckpt = out.join("checkpoints/final.json");
    let o = tsclab(&["eval", "--config", &cfg, "--seed", "1", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));

    let o = tsclab(&["eval", "--seed", "1", "--checkpoint", dir.path().join("none.json").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("none.json"), "{}", stderr(&o));
}

#[test]
fn compare_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let c = configs_dir();
    let o = tsclab(&[
        "compare",
        "--config",
        c.join("fixed.toml").to_str().unwrap(),
        "--config",
        c.join("maxpressure.toml").to_str().unwrap(),
        "--seeds",
        "0..3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("fixed,"));

    let o = tsclab(&["compare", "--config", c.join("fixed.toml").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at least two"), "{}", stderr(&o));

    let o = tsclab(&[
        "compare",
        "--config",
        c.join("fixed.toml").to_str().unwrap(),
        "--config",
        c.join("toy4_surge.toml").to_str().unwrap(),
        "--seeds",
        "0",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("different topology"), "{}", stderr(&o));
}
