//! End-to-end checks of the `scrl` binary: pipeline contracts, exit codes,
//! and the determinism guarantees every command makes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use scrl_core::agents::AgentCheckpoint;

fn scrl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scrl"))
        .args(args)
        .env("SCRL_OUT_ROOT", root.join("runs"))
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn run_ok(root: &Path, args: &[&str]) -> PathBuf {
    let out = scrl(root, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).expect("utf-8 stdout").trim())
}

fn run_err(root: &Path, args: &[&str]) -> (i32, String) {
    let out = scrl(root, args);
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Small dataset plus a speed-criterion sidecar, the cheapest full input.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let gen = run_ok(
        root,
        &["generate", "--variant", "inplace", "--episodes", "12", "--seed", "5", "--horizon", "200"],
    );
    let dataset = gen.join("dataset.bin");
    let ann = run_ok(
        root,
        &["annotate", "--dataset", dataset.to_str().unwrap(), "--criterion", "speed_category"],
    );
    (dataset, ann.join("labels.bin"))
}

#[test]
fn generate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args =
        ["generate", "--variant", "navigate", "--episodes", "8", "--seed", "3", "--horizon", "150"];
    let a = run_ok(tmp.path(), &args);
    let b = run_ok(tmp.path(), &args);
    assert_ne!(a, b, "each run gets a fresh directory");
    assert_eq!(
        std::fs::read(a.join("dataset.bin")).unwrap(),
        std::fs::read(b.join("dataset.bin")).unwrap()
    );
}

#[test]
fn annotate_twice_is_identical_and_leaves_inputs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let before = std::fs::read(&dataset).unwrap();
    let again = run_ok(
        tmp.path(),
        &["annotate", "--dataset", dataset.to_str().unwrap(), "--criterion", "speed_category"],
    );
    assert_eq!(
        std::fs::read(&labels).unwrap(),
        std::fs::read(again.join("labels.bin")).unwrap()
    );
    assert_eq!(before, std::fs::read(&dataset).unwrap(), "annotate must not touch the dataset");
}

#[test]
fn histogram_covers_every_criterion_consistently() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, _) = fixture(tmp.path());
    let dir = run_ok(tmp.path(), &["histogram", "--dataset", dataset.to_str().unwrap()]);
    let csv = std::fs::read_to_string(dir.join("histogram.csv")).unwrap();
    let mut totals: std::collections::BTreeMap<&str, u64> = Default::default();
    let mut position_bins = 0;
    for line in csv.lines().skip(1) {
        let mut f = line.split(',');
        let (criterion, _label, count) =
            (f.next().unwrap(), f.next().unwrap(), f.next().unwrap());
        *totals.entry(criterion).or_default() += count.parse::<u64>().unwrap();
        if criterion == "position" {
            position_bins += 1;
        }
    }
    assert_eq!(totals.len(), 6, "one histogram per criterion");
    let total = totals["position"];
    assert!(totals.values().all(|&t| t == total), "every criterion labels every transition");
    assert_eq!(position_bins, 8, "desk data occupies all arena octants");
}

#[test]
fn train_smoke_writes_a_loadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let started = Instant::now();
    let dir = run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--algo",
            "sciql",
            "--steps",
            "1000",
            "--steps-chi",
            "200",
        ],
    );
    assert!(started.elapsed().as_secs() < 30, "smoke run must finish quickly");
    let checkpoint = AgentCheckpoint::load(&dir.join("checkpoint.bin")).unwrap();
    assert_eq!(checkpoint.policy_heads(), vec!["style_only".to_string()]);
    let log = std::fs::read_to_string(dir.join("log.csv")).unwrap();
    assert!(log.lines().count() > 1, "training log has rows");
}

#[test]
fn train_does_not_mutate_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let (d0, l0) = (std::fs::read(&dataset).unwrap(), std::fs::read(&labels).unwrap());
    run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--algo",
            "bc",
            "--steps",
            "50",
        ],
    );
    assert_eq!(d0, std::fs::read(&dataset).unwrap());
    assert_eq!(l0, std::fs::read(&labels).unwrap());
}

#[test]
fn untrained_conditioned_cloner_sits_at_chance_on_position() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = run_ok(
        tmp.path(),
        &["generate", "--variant", "inplace", "--episodes", "12", "--seed", "5", "--horizon", "200"],
    );
    let dataset = gen.join("dataset.bin");
    let ann = run_ok(
        tmp.path(),
        &["annotate", "--dataset", dataset.to_str().unwrap(), "--criterion", "position"],
    );
    let train = run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            ann.join("labels.bin").to_str().unwrap(),
            "--algo",
            "cbc",
            "--steps",
            "0",
        ],
    );
    let eval = run_ok(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            train.join("checkpoint.bin").to_str().unwrap(),
            "--episodes",
            "4",
            "--seeds",
            "0,1",
        ],
    );
    let csv = std::fs::read_to_string(eval.join("aggregate.csv")).unwrap();
    let overall = csv.lines().find(|l| l.starts_with("overall,")).expect("overall row");
    let alignment: f64 = overall.split(',').nth(1).unwrap().parse().unwrap();
    // Eight equal-area position octants: chance level is 1/8.
    assert!(
        (alignment - 0.125).abs() <= 0.1,
        "random-init policy should be at chance, got {alignment}"
    );
}

#[test]
fn gate_flag_selects_the_extraction_head() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let dir = run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--algo",
            "sciql",
            "--gawr",
            "task_first,style_first",
            "--steps",
            "0",
            "--steps-chi",
            "0",
        ],
    );
    let checkpoint = AgentCheckpoint::load(&dir.join("checkpoint.bin")).unwrap();
    assert_eq!(
        checkpoint.policy_heads(),
        vec!["style_first".to_string(), "task_first".to_string()],
        "one policy head per requested gate"
    );
    let echo = std::fs::read_to_string(dir.join("config.json")).unwrap();
    assert!(echo.contains("task_first") && echo.contains("style_first"));
}

#[test]
fn eval_twice_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let train = run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--algo",
            "scbc",
            "--steps",
            "200",
        ],
    );
    let checkpoint = train.join("checkpoint.bin");
    let args = [
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--episodes",
        "2",
        "--seeds",
        "0",
    ];
    let a = run_ok(tmp.path(), &args);
    let b = run_ok(tmp.path(), &args);
    for file in ["rollouts.csv", "aggregate.csv", "config.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical eval invocations"
        );
    }
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stderr) = run_err(tmp.path(), &["generate", "--variant", "sideways"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown dataset variant"), "stderr: {stderr}");
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stderr) = run_err(
        tmp.path(),
        &["train", "--dataset", "does/not/exist.bin", "--labels", "also/missing.bin"],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("does/not/exist.bin"), "stderr: {stderr}");
}

#[test]
fn non_promptable_label_lists_the_promptable_set() {
    let tmp = tempfile::tempdir().unwrap();
    let (dataset, labels) = fixture(tmp.path());
    let train = run_ok(
        tmp.path(),
        &[
            "train",
            "--dataset",
            dataset.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--algo",
            "cbc",
            "--steps",
            "0",
        ],
    );
    let (code, stderr) = run_err(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            train.join("checkpoint.bin").to_str().unwrap(),
            "--labels",
            "7",
            "--episodes",
            "1",
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("promptable labels: [0, 1, 2]"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("gen.json");
    std::fs::write(&config, "{\"variant\": \"inplace\", \"episoodes\": 3}\n").unwrap();
    let (code, stderr) =
        run_err(tmp.path(), &["generate", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("episoodes"), "stderr should name the bad key: {stderr}");
}

#[test]
fn explicit_out_dir_must_be_fresh() {
    let tmp = tempfile::tempdir().unwrap();
    let occupied = tmp.path().join("occupied");
    std::fs::create_dir(&occupied).unwrap();
    std::fs::write(occupied.join("keep.txt"), "precious").unwrap();
    let (code, stderr) = run_err(
        tmp.path(),
        &[
            "generate",
            "--variant",
            "inplace",
            "--episodes",
            "2",
            "--out",
            occupied.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("not empty"), "stderr: {stderr}");
    assert_eq!(std::fs::read_to_string(occupied.join("keep.txt")).unwrap(), "precious");
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(scrl(tmp.path(), &["--help"]).status.success());
    assert!(scrl(tmp.path(), &["--version"]).status.success());
    assert!(scrl(tmp.path(), &["train", "--help"]).status.success());
}

#[test]
fn pipeline_is_reproducible_end_to_end() {
    // generate -> annotate -> train -> eval, twice, byte-compared.
    let run = |root: &Path| -> (Vec<u8>, Vec<u8>) {
        let gen = run_ok(
            root,
            &[
                "generate", "--variant", "inplace", "--episodes", "10", "--seed", "11",
                "--horizon", "150",
            ],
        );
        let dataset = gen.join("dataset.bin");
        let ann = run_ok(
            root,
            &["annotate", "--dataset", dataset.to_str().unwrap(), "--criterion", "turn_direction"],
        );
        let train = run_ok(
            root,
            &[
                "train",
                "--dataset",
                dataset.to_str().unwrap(),
                "--labels",
                ann.join("labels.bin").to_str().unwrap(),
                "--algo",
                "sciql",
                "--steps",
                "300",
                "--steps-chi",
                "80",
            ],
        );
        let eval = run_ok(
            root,
            &[
                "eval",
                "--checkpoint",
                train.join("checkpoint.bin").to_str().unwrap(),
                "--episodes",
                "2",
                "--seeds",
                "0",
            ],
        );
        (
            std::fs::read(train.join("checkpoint.bin")).unwrap(),
            std::fs::read(eval.join("rollouts.csv")).unwrap(),
        )
    };
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let (ckpt_a, csv_a) = run(tmp_a.path());
    let (ckpt_b, csv_b) = run(tmp_b.path());
    assert_eq!(ckpt_a, ckpt_b, "training is deterministic");
    assert_eq!(csv_a, csv_b, "evaluation is deterministic");
}
