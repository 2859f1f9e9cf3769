use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[corpus]
n_tracks = 48
n_extra = 8
n_pretrain = 24
n_noise_train = 4
n_noise_valid = 2
n_noise_test = 2
track_duration_s = 0.1
noise_duration_s = 0.2

[run.model]
dc_hidden = [8, 4]
lp_hidden = 8
projection_dim = 4

[run.model.encoder]
input_length = 243
n_blocks = 4
base_channels = 4
embedding_dim = 8

[run.augment]
input_length = 243

[run.batch]
stage1 = 8
source = 8
target = 8

[run.stage1]
max_epochs = 2

[run.stage2]
max_epochs = 2

[run.stage3]
max_epochs = 2
"#;

fn robustag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustag"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_deterministic() {
    let dir = setup();
    for out in ["a", "b"] {
        ok(&robustag(
            dir.path(),
            &["--config", "small.toml", "--out", out, "synth"],
        ));
    }
    let a = listing(&dir.path().join("a"));
    assert_eq!(a, listing(&dir.path().join("b")));
    assert!(a.iter().any(|(name, _)| name.ends_with(".wav")));

    ok(&robustag(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--out",
            "c",
            "--seed",
            "5",
            "synth",
        ],
    ));
    assert_ne!(a, listing(&dir.path().join("c")));
}

#[test]
fn seed_flag_lands_in_the_snapshot() {
    let dir = setup();
    ok(&robustag(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--out",
            "d",
            "--seed",
            "31",
            "synth",
            "--inline",
        ],
    ));
    let snap = fs::read_to_string(dir.path().join("d/config.resolved.toml")).unwrap();
    assert!(snap.contains("seed = 31"), "{snap}");
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[run]\nnot_a_key = 1\n").unwrap();
    let out = robustag(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_upstream_stage_exits_3() {
    let dir = setup();
    ok(&robustag(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--out",
            "data",
            "synth",
            "--inline",
        ],
    ));
    let out = robustag(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--out",
            "exp",
            "train",
            "--data",
            "data",
            "--setting",
            "proposed_a",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("exp/stage3").exists());
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = setup();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "small.toml"];
        all.extend_from_slice(args);
        robustag(dir.path(), &all)
    };
    ok(&run(&["--out", "data", "synth"]));
    ok(&run(&["--out", "exp", "pretrain-fe", "--data", "data"]));

    // A second run into the same directory is refused unless forced.
    let refused = run(&["--out", "exp", "pretrain-fe", "--data", "data"]);
    assert_eq!(refused.status.code(), Some(2));
    ok(&run(&[
        "--out",
        "exp",
        "--force",
        "pretrain-fe",
        "--data",
        "data",
    ]));

    ok(&run(&["--out", "exp", "pretrain-dc", "--data", "data"]));
    ok(&run(&[
        "--out",
        "exp",
        "train",
        "--data",
        "data",
        "--setting",
        "proposed_a",
    ]));
    for stage in ["stage1", "stage2", "stage3"] {
        for file in ["final.ckpt", "metrics.jsonl", "config.resolved.toml"] {
            assert!(
                dir.path().join("exp").join(stage).join(file).is_file(),
                "{stage}/{file}"
            );
        }
    }

    ok(&run(&[
        "--out", "exp", "eval", "--data", "data", "--label", "a",
    ]));
    let first = listing(&dir.path().join("exp/eval"));
    ok(&run(&[
        "--out", "exp", "--force", "eval", "--data", "data", "--label", "a",
    ]));
    assert_eq!(first, listing(&dir.path().join("exp/eval")));
    let table = fs::read_to_string(dir.path().join("exp/eval/table.txt")).unwrap();
    assert!(table.contains("clean"), "{table}");

    // proposed_b falls back to the data directory's extra pool.
    ok(&run(&[
        "--out",
        "exp_b",
        "train",
        "--data",
        "data",
        "--setting",
        "proposed_b",
        "--fe",
        "exp/stage1/final.ckpt",
        "--dc",
        "exp/stage2/final.ckpt",
    ]));
    ok(&run(&["--out", "exp_b", "eval", "--data", "data"]));

    ok(&run(&["--out", "summary", "report", "exp", "exp_b"]));
    assert!(dir.path().join("summary/report.txt").is_file());
}
