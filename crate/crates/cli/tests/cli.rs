use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
stimuli = "procedural:3:7"
eval_stimuli = "procedural:2:1000"
texture_size = 256
episodes = 4
critic_filters = 4
critic_hidden = 8
batch_size = 8
critic_updates_per_episode = 1
eval_interval = 2
checkpoint_interval = 2
"#;

fn agz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agz"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("AGZ_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(out);
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(agz(&args));
    out
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn train_writes_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a", &[]);
    let b = train_small(dir.path(), "b", &[]);
    for f in ["config.toml", "ckpt_2", "ckpt_final", "training_curve.csv", "training_log.csv"] {
        assert!(read(&a.join(f)) == read(&b.join(f)), "{f} differs between identical runs");
    }
    assert!(!a.join("ckpt_4").exists(), "final checkpoint is only written as ckpt_final");
    let curve = String::from_utf8(read(&a.join("training_curve.csv"))).unwrap();
    assert!(curve.lines().count() > 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), "run", &["--episodes", "2", "--seed", "5", "--reward", "old"]);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("episodes = 2"), "{written}");
    assert!(written.contains("seed = 5"), "{written}");
    assert!(written.contains("reward = \"old\""), "{written}");
    assert!(out.join("ckpt_final").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "gamma = 3.0\n").unwrap();
    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "episdoes = 3\n").unwrap();
    let garbage = dir.path().join("garbage.toml");
    std::fs::write(&garbage, "this is = = not toml").unwrap();
    let out = dir.path().join("o");
    let o = s(&out);
    for args in [
        vec!["train"],
        vec!["train", "--config", s(&bad), "--out", o],
        vec!["train", "--config", s(&typo), "--out", o],
        vec!["train", "--config", s(&garbage), "--out", o],
        vec!["train", "--config", "/nonexistent/cfg.toml", "--out", o],
        vec!["train", "--set", "workers=0", "--out", o],
        vec!["train", "--set", "novalue", "--out", o],
        vec!["config", "--set", "stimuli=procedural:1", "--dump"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&agz(&args)), 2, "{args:?}");
    }
    assert!(!out.join("ckpt_final").exists());
}

#[test]
fn bad_thread_cap_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_agz"))
        .args(["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))])
        .env("AGZ_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_suites_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run", &["--episodes", "2"]);
    let ckpt = run.join("ckpt_final");

    let controlled = dir.path().join("controlled");
    ok(agz(&["eval", "--checkpoint", s(&ckpt), "--suite", "controlled", "--stimulus-count", "1", "--out", s(&controlled)]));
    assert!(controlled.join("vcurve.csv").is_file());
    assert!(controlled.join("policy.csv").is_file());
    assert!(!controlled.join("trajectory.csv").exists());

    let behaviour = dir.path().join("behaviour");
    let out = ok(agz(&["eval", "--checkpoint", s(&ckpt), "--suite", "behaviour", "--stimulus-count", "1", "--out", s(&behaviour)]));
    assert!(behaviour.join("trajectory.csv").is_file());
    assert!(!behaviour.join("vcurve.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("testing_error"));

    for f in ["vcurve.csv", "policy.csv"] {
        let svgs = dir.path().join(format!("svg_{f}"));
        let listed = ok(agz(&["plot", "--input", s(&controlled.join(f)), "--out", s(&svgs)]));
        assert_eq!(String::from_utf8_lossy(&listed.stdout).lines().count(), 3, "{f}: one figure per joint");
    }
}

#[test]
fn corrupt_checkpoints_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run", &["--episodes", "2"]);
    let mut bytes = read(&run.join("ckpt_final"));
    let truncated = dir.path().join("truncated");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let trailing = dir.path().join("trailing");
    std::fs::write(&trailing, [bytes.as_slice(), &[0]].concat()).unwrap();
    bytes[4] ^= 0xff;
    let version = dir.path().join("version");
    std::fs::write(&version, &bytes).unwrap();
    let foreign = dir.path().join("foreign");
    std::fs::write(&foreign, b"not a checkpoint at all").unwrap();
    for p in [&truncated, &trailing, &version, &foreign, &dir.path().join("missing")] {
        let out = agz(&["eval", "--checkpoint", s(p), "--suite", "controlled", "--stimulus-count", "1"]);
        assert_eq!(code(&out), 1, "{}", p.display());
    }
}

#[test]
fn plot_writes_one_reproducible_svg_per_joint() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run", &[]);
    for table in ["training_curve.csv", "training_log.csv"] {
        let input = run.join(table);
        if table == "training_log.csv" {
            // Not a plottable schema.
            assert_eq!(code(&agz(&["plot", "--input", s(&input)])), 2);
            continue;
        }
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        ok(agz(&["plot", "--input", s(&input), "--out", s(&a)]));
        ok(agz(&["plot", "--input", s(&input), "--out", s(&b)]));
        for joint in ["vergence", "pan", "tilt"] {
            let name = format!("training_curve_{joint}.svg");
            let svg = read(&a.join(&name));
            assert!(svg.starts_with(b"<svg"), "{name}");
            assert!(svg == read(&b.join(&name)), "{name} not reproducible");
        }
    }
}

#[test]
fn plot_rejects_empty_and_unknown_tables() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let header_only = dir.path().join("header_only.csv");
    std::fs::write(&header_only, "joint,error,stimulus,scale,loss\n").unwrap();
    let unknown = dir.path().join("unknown.csv");
    std::fs::write(&unknown, "a,b,c\n1,2,3\n").unwrap();
    for p in [&empty, &header_only, &unknown, &dir.path().join("missing.csv")] {
        assert_eq!(code(&agz(&["plot", "--input", s(p)])), 2, "{}", p.display());
    }
}

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(agz(&["config", "--set", "gamma=0.3", "--set", "stimuli=procedural:4:2", "--dump"]));
    let dumped = dir.path().join("dumped.toml");
    std::fs::write(&dumped, &first.stdout).unwrap();
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    assert!(text.contains("gamma = 0.3"), "{text}");
    assert!(text.contains("stimuli = \"procedural:4:2\""), "{text}");
    let second = ok(agz(&["config", "--config", s(&dumped), "--dump"]));
    assert_eq!(first.stdout, second.stdout);
}
