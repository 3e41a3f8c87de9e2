use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn esdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esdd"))
        .args(args)
        .output()
        .expect("spawn esdd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "esdd failed: {}", stderr(&o));
    o
}

const SMALL: &str = r#"{
  "seed": 3,
  "synth": {
    "layers": 3, "frames": 24, "dim": 16, "latent_dim": 4,
    "n_train_per_class": 12, "n_eval_per_class": 6,
    "artifact_layer_band": [1, 2], "artifact_amplitude": 2.0
  },
  "model": { "layers": 3, "dim": 16, "heads": 2, "compression_dim": 4, "embed_dim": 4 },
  "train": {
    "max_epochs": 2, "batch_size": 8, "warmup_epochs": 1,
    "crop_frames": 16, "eval_frames": 16, "base_lr": 0.005
  }
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("c.json");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn eer_of_perfect_separation_is_zero() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("scores.txt");
    fs::write(
        &f,
        "b1 bonafide - 2.5\nb2 bonafide - 1.0\ns1 spoof g0 -1.0\ns2 spoof g1 0.5\n",
    )
    .unwrap();
    let o = ok(esdd(&["eer", s(&f)]));
    assert_eq!(stdout(&o).trim(), "EER 0.000000");
}

#[test]
fn gradcheck_with_seed_7_passes() {
    let o = ok(esdd(&["gradcheck", "--seed", "7"]));
    let text = stdout(&o);
    let value: f64 = text
        .split_whitespace()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unexpected output {text:?}"));
    assert!(value <= 1e-4, "{text}");
}

#[test]
fn synth_twice_gives_identical_trees() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(esdd(&["synth", "--config", s(&c), "--workdir", s(&a)]));
    ok(esdd(&["synth", "--config", s(&c), "--workdir", s(&b)]));
    let (ta, tb) = (tree(&a.join("data")), tree(&b.join("data")));
    assert_eq!(ta.len(), 12 * 2 + 6 * 2 * 3 + 1);
    assert!(ta == tb, "synthesized trees differ");

    let c2 = dir.path().join("c2");
    ok(esdd(&["synth", "--config", s(&c), "--workdir", s(&c2), "--seed", "4"]));
    assert!(tree(&c2.join("data")) != ta, "seed had no effect");
}

#[test]
fn train_score_eer_fuse_compose() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    let w = dir.path().join("run");
    let base = ["--config", s(&c), "--workdir", s(&w)];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(base.iter()).map(|a| a.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(esdd(&args.iter().map(String::as_str).collect::<Vec<_>>()))
    };

    run(&["synth"]);
    let o = run(&["train", "--train.max_epochs", "3"]);
    assert!(stdout(&o).contains("epoch 2 "), "{}", stdout(&o));
    for f in ["config.json", "train_log.jsonl", "best.ckpt", "final.ckpt"] {
        assert!(w.join(f).is_file(), "missing {f}");
    }
    let archived: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.join("config.json")).unwrap()).unwrap();
    assert_eq!(archived["train"]["max_epochs"], 3);
    assert_eq!(
        fs::read_to_string(w.join("train_log.jsonl")).unwrap().lines().count(),
        3
    );

    run(&["score", "--split", "eval_seen"]);
    let scores = w.join("scores_eval_seen.txt");
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 12);
    let o = run(&["eer", s(&scores)]);
    let line = stdout(&o);
    let eer: f64 = line.trim().strip_prefix("EER ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&eer));

    let fused = w.join("fused.txt");
    run(&["fuse", s(&scores), s(&scores)]);
    let o = run(&["eer", s(&fused)]);
    assert_eq!(stdout(&o), line, "self-fusion changed the EER");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(esdd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(esdd(&["eer", "--bogus", "x"]).status.code(), Some(2));
    assert_eq!(
        esdd(&["gradcheck", "--train.learning_rate", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(esdd(&["gradcheck", "--train.base_lr"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_1_with_one_line() {
    let dir = TempDir::new().unwrap();
    let o = esdd(&["eer", s(&dir.path().join("missing.txt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));

    let f = dir.path().join("one_class.txt");
    fs::write(&f, "b1 bonafide - 1.0\n").unwrap();
    let o = esdd(&["eer", s(&f)]);
    assert_eq!(o.status.code(), Some(1));

    let o = esdd(&["train", "--workdir", s(dir.path()), "--train.base_lr", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}
