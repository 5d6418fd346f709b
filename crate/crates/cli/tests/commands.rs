//! The `lcn4` binary end to end: exit codes, run directories and outputs.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "channels=[4,4,4,4]",
    "--set",
    "clusters=4",
    "--set",
    "heads=2",
    "--set",
    "fourier_count=4",
    "--set",
    "resolution=36",
    "--set",
    "synth_base=6",
    "--set",
    "synth_val=2",
    "--set",
    "synth_novel=5",
    "--set",
    "synth_per_class=20",
    "--set",
    "episodes_per_epoch=3",
    "--set",
    "epochs=2",
    "--set",
    "train_query=2",
    "--set",
    "batch_size=8",
    "--set",
    "val_episodes=2",
    "--set",
    "eval_episodes=5",
];

fn lcn4(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcn4"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LCN4_RUN_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn help_lists_every_configuration_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for key in ["clusters", "heads", "fourier_count", "amplitude", "nfc", "cfc", "fdc", "metric", "branches"] {
        assert!(text.contains(key), "--help does not mention {key}");
    }
}

#[test]
fn unknown_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(&["train", "--set", "clustres=8"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("clustres"), "{}", stderr(&out));
}

#[test]
fn invalid_values_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--set", "heads=3", "--set", "clusters=16"][..],
        &["train", "--set", "nfc=maybe"],
        &["train", "--set", "fdc=true", "--set", "cfc=false"],
        &["train", "--metric", "euclid"],
        &["train", "--no-such-flag"],
    ] {
        let out = lcn4(args, dir.path());
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn missing_dataset_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(
        &["train", "--set", "synthetic=false", "--set", "data_root=\"nowhere\""],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn unreadable_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.lcn4"), b"not a checkpoint").unwrap();
    let out = lcn4(&["eval", "--checkpoint", "bad.lcn4"], dir.path());
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = lcn4(&["eval", "--checkpoint", "absent.lcn4"], dir.path());
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn oracle_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(&with_tiny(&["eval", "--oracle", "--out", "o"]), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("100.00±0.00"), "{}", stdout(&out));
    let report = std::fs::read_to_string(dir.path().join("o/report.csv")).unwrap();
    assert!(report.contains("100"));
    assert!(dir.path().join("o/confusion.pgm").is_file());
}

#[test]
fn existing_run_directory_is_kept_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["eval", "--oracle", "--out", "o"]);
    assert_eq!(code(&lcn4(&args, dir.path())), 0);
    let marker = dir.path().join("o/keep");
    std::fs::write(&marker, b"x").unwrap();
    let out = lcn4(&args, dir.path());
    assert_eq!(code(&out), 2);
    assert!(marker.exists(), "refused run still touched the directory");
    let forced: Vec<&str> = args.iter().copied().chain(["--force"]).collect();
    assert_eq!(code(&lcn4(&forced, dir.path())), 0);
    assert!(!marker.exists());
}

#[test]
fn train_writes_run_files_and_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(&with_tiny(&["train", "--seed", "3"]), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = dir.path().join("runs/train-desk-seed3");
    for file in ["config.json", "metrics.csv", "checkpoint.lcn4", "report.csv", "confusion.pgm"] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");

    // The echoed configuration is accepted back as a config file.
    let echoed = lcn4(
        &["eval", "--config", "runs/train-desk-seed3/config.json", "--checkpoint",
          "runs/train-desk-seed3/checkpoint.lcn4", "--out", "e"],
        dir.path(),
    );
    assert_eq!(code(&echoed), 0, "{}", stderr(&echoed));
    assert!(stdout(&echoed).contains('±'));
}

#[test]
fn same_seed_reproduces_the_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let args = with_tiny(&["train", "--seed", "9", "--out", out]);
        assert_eq!(code(&lcn4(&args, dir.path())), 0);
    }
    let read = |d: &str| std::fs::read_to_string(dir.path().join(d).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let report = |d: &str| std::fs::read_to_string(dir.path().join(d).join("report.csv")).unwrap();
    assert_eq!(report("a"), report("b"));
}

#[test]
fn checkpoint_resolution_must_match_the_data() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lcn4(&with_tiny(&["train", "--out", "t"]), dir.path())), 0);
    let mut args = with_tiny(&["eval", "--checkpoint", "t/checkpoint.lcn4", "--out", "e"]);
    args.extend(["--set", "resolution=44"]);
    let out = lcn4(&args, dir.path());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn synth_writes_an_ingestible_image_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcn4(&with_tiny(&["synth", "--out", "s"]), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let splits = dir.path().join("s/images/splits.tsv");
    assert!(splits.is_file());
    let mut args = with_tiny(&["eval", "--oracle", "--out", "e"]);
    args.extend(["--set", "synthetic=false", "--set", "data_root=\"s/images\""]);
    let out = lcn4(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("100.00±0.00"));
}

#[test]
fn encode_demo_writes_one_pgm_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, channels) in [("grid", 4), ("sincos", 8), ("fdc", 8)] {
        let shape = format!("6,5,{channels}");
        let out = lcn4(
            &["encode-demo", "--encoding", kind, "--shape", &shape, "--out", kind],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{kind}: {}", stderr(&out));
        let mut files: Vec<_> = std::fs::read_dir(dir.path().join(kind))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        assert_eq!(files.len(), channels);
        let bytes = std::fs::read(&files[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n5 6\n255\n"), "{kind}: bad header");
        assert_eq!(bytes.len(), b"P5\n5 6\n255\n".len() + 30);
    }
}

#[test]
fn ablation_toggles_apply_to_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_tiny(&["ablate", "--preset", "table2", "--toggle", "metric=bcd", "--out", "a"]);
    args.extend(["--set", "eval_episodes=4"]);
    let out = lcn4(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("a/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",bcd,")), "{csv}");
    let bad = lcn4(&with_tiny(&["ablate", "--toggle", "colour=on"]), dir.path());
    assert_eq!(code(&bad), 2);
}
