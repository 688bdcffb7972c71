use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
train_scenes = 3
mask_scenes = 3
eval_scenes = 2
clean_utterances = 4
lm_sentences = 20
oracle_adaptation = false
[mask]
epochs = 1
hidden = 4
[asr]
epochs = 1
[asr.model]
conv_channels = [4, 4]
hidden = 8
[adaptation]
epochs = 1
clean_per_batch = 2
pseudo_per_batch = 2
"#;

fn hmadapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmadapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn pipeline(dir: &Path, out: &str) {
    for cmd in ["simulate", "train-mask", "train-asr", "train-lm", "evaluate", "adapt"] {
        let o = hmadapt(dir, &["--config", "tiny.toml", "--seed", "3", "--out", out, cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    pipeline(tmp.path(), "a");
    pipeline(tmp.path(), "b");
    for f in [
        "train/manifest.jsonl",
        "eval/eval0000.mix.wav",
        "mask.params",
        "asr.params",
        "lm.json",
        "scores.csv",
        "adaptation.csv",
        "adapted/mask.params",
        "adapted/asr.params",
    ] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&hmadapt(dir, &["--config", "missing.toml", "simulate"])), 2);
    fs::write(dir.join("bad.toml"), "beam = { beam = 0 }\n").unwrap();
    assert_eq!(code(&hmadapt(dir, &["--config", "bad.toml", "simulate"])), 2);
    fs::write(dir.join("typo.toml"), "train_scenez = 3\n").unwrap();
    assert_eq!(code(&hmadapt(dir, &["--config", "typo.toml", "simulate"])), 2);
    assert_eq!(code(&hmadapt(dir, &["recognize", "--checkpoints", "nowhere", "x.wav"])), 2);

    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let o = hmadapt(dir, &["--config", "tiny.toml", "--out", "m", "train-lm"]);
    assert_eq!(code(&o), 0);
    // an lm alone is not enough to recognize
    assert_eq!(code(&hmadapt(dir, &["--config", "tiny.toml", "--out", "m", "recognize", "x.wav"])), 2);
    let o = hmadapt(dir, &["--config", "tiny.toml", "--out", "m", "enhance", "--mode", "passthrough", "--data", "no_such_dir"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(
        dir.join("boom.toml"),
        "train_scenes = 2\n[mask]\nepochs = 3\nhidden = 4\nschedule = { kind = \"exp_decay\", base = 1e300, factor = 1.0 }\n",
    )
    .unwrap();
    assert_eq!(code(&hmadapt(dir, &["--config", "boom.toml", "--out", "b", "train-mask"])), 4);
}
