use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use deqfuse_cli::checkpoint::Checkpoint;
use deqfuse_cli::commands::{solvebench, train};
use deqfuse_cli::config::{SolvebenchConfig, TrainSettings};
use deqfuse_cli::{EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};
use deqfuse_core::layers::FusionParams;
use deqfuse_core::numcore::Rng;
use deqfuse_core::training::{gen_signproduct, init_model, AblationVariant};
use tempfile::TempDir;

fn deqfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deqfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn small_train(dir: &Path) -> TrainSettings {
    TrainSettings {
        out: dir.to_path_buf(),
        epochs: 2,
        n_train: 64,
        n_test: 32,
        ..TrainSettings::default()
    }
}

#[test]
fn converge_single_step_writes_one_row() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&["converge", "--steps", "1", "--out", &out_arg(dir.path())]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
}

#[test]
fn converge_default_run_drops_below_one_percent_by_step_twenty() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&["converge", "--out", &out_arg(dir.path())]);
    assert_eq!(code(&o), EXIT_OK);
    let rows = csv_rows(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 100);
    let at20: f64 = rows[19][1].parse().unwrap();
    assert!(at20 < 1e-2, "{at20}");
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("rel_diff")));
}

#[test]
fn identical_flags_give_identical_csv() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for cmd in [
        vec!["converge", "--seed", "3", "--steps", "30"],
        vec!["solvebench", "--seeds", "2", "--dim", "16", "--trace-steps", "20"],
        vec!["gradcheck", "--seeds", "1"],
    ] {
        for dir in [&a, &b] {
            let out = out_arg(dir.path());
            let mut args = cmd.clone();
            args.extend(["--out", &out]);
            assert_eq!(code(&deqfuse(&args)), EXIT_OK, "{args:?}");
        }
    }
    for name in ["converge.csv", "solvebench.csv", "solvebench_trace.csv", "gradcheck.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unwritable_output_exits_with_io_status() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let target = blocker.join("sub");
    let o = deqfuse(&["converge", "--steps", "2", "--out", target.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_IO);
}

#[test]
fn converge_runs_on_trained_checkpoint() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&[
        "train",
        "--epochs",
        "1",
        "--n-train",
        "64",
        "--n-test",
        "32",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("checkpoint.json");
    let trace_dir = dir.path().join("trace");
    let o = deqfuse(&[
        "converge",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--steps",
        "20",
        "--out",
        trace_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("N=2 d=16"));
    assert_eq!(csv_rows(&trace_dir.join("converge.csv")).len(), 20);

    let o = deqfuse(&["converge", "--checkpoint", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_IO);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, fs::read_to_string(&ckpt).unwrap().replace("\"width\": 16", "\"width\": 15")).unwrap();
    let o = deqfuse(&["converge", "--checkpoint", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_VALIDATION);
}

#[test]
fn gradcheck_passes_at_default_tolerance() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&["gradcheck", "--tol", "1e-3", "--out", &out_arg(dir.path())]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stdout));
    let names: Vec<String> = csv_rows(&dir.path().join("gradcheck.csv"))
        .into_iter()
        .map(|r| r[0].clone())
        .collect();
    let mut want = FusionParams::structural(2, 6, 1).unwrap().names();
    want.extend(["x0".to_string(), "x1".to_string()]);
    assert_eq!(names, want);
}

#[test]
fn gradcheck_fails_numerically_at_impossible_tolerance() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&["gradcheck", "--tol", "1e-12", "--seeds", "1", "--out", &out_arg(dir.path())]);
    assert_eq!(code(&o), EXIT_NUMERIC);
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}

#[test]
fn zero_learning_rate_checkpoint_is_the_initial_model() {
    let dir = TempDir::new().unwrap();
    let cfg = TrainSettings {
        lr: 0.0,
        ..small_train(dir.path())
    };
    let outcome = train::run(&cfg, &mut Vec::new()).unwrap();
    let data = gen_signproduct(&cfg.task().unwrap(), &mut Rng::new(cfg.seed)).unwrap();
    let tc = cfg.train_config(AblationVariant::Full, cfg.seed).unwrap();
    let init = init_model(&data, &tc).unwrap();
    assert_eq!(Checkpoint::load(&outcome.checkpoint).unwrap().to_model().unwrap(), init);
}

#[test]
fn jacobian_penalty_lowers_the_final_jacobian_estimate() {
    let dir = TempDir::new().unwrap();
    let mean = |gamma: f64| {
        let js: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = TrainSettings {
                    seed,
                    gamma,
                    out: dir.path().join(format!("g{gamma}-s{seed}")),
                    ..TrainSettings::default()
                };
                train::run(&cfg, &mut Vec::new()).unwrap().jacobian.unwrap()
            })
            .collect();
        js.iter().sum::<f64>() / js.len() as f64
    };
    let with = mean(0.1);
    let without = mean(0.0);
    assert!(with < without, "{with} vs {without}");
}

#[test]
fn flags_beat_config_file_beats_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"steps": 7, "batch": 2}"#).unwrap();
    let out = dir.path().join("a");
    let o = deqfuse(&[
        "converge",
        "--config",
        cfg_path.to_str().unwrap(),
        "--batch",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK);
    let stdout = String::from_utf8(o.stdout).unwrap();
    // steps from the file, batch from the flag, width from the defaults
    assert!(stdout.contains("d=64 batch=3"), "{stdout}");
    assert_eq!(csv_rows(&out.join("converge.csv")).len(), 7);
}

#[test]
fn unknown_config_keys_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"stepz": 7}"#).unwrap();
    let o = deqfuse(&["converge", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    fs::write(&cfg_path, r#"{"variant": "full"}"#).unwrap();
    let o = deqfuse(&["ablate", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    let o = deqfuse(&["train", "--variant", "no-such-variant"]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    let o = deqfuse(&["converge", "--no-such-flag"]);
    assert_eq!(code(&o), EXIT_VALIDATION);
}

#[test]
fn memory_one_anderson_column_equals_naive() {
    let dir = TempDir::new().unwrap();
    let cfg = SolvebenchConfig {
        out: dir.path().to_path_buf(),
        seeds: 3,
        dim: 16,
        memory: 1,
        beta: 1.0,
        trace_steps: 30,
        ..SolvebenchConfig::default()
    };
    let rows = solvebench::run(&cfg, &mut Vec::new()).unwrap();
    for r in &rows {
        assert_eq!(r.naive, r.anderson, "seed {}", r.seed);
    }
    for row in csv_rows(&dir.path().join("solvebench_trace.csv")) {
        assert_eq!(row[1], row[2]);
    }
}

#[test]
fn anderson_is_not_slower_on_nine_of_ten_instances() {
    let dir = TempDir::new().unwrap();
    let cfg = SolvebenchConfig {
        out: dir.path().to_path_buf(),
        ..SolvebenchConfig::default()
    };
    let rows = solvebench::run(&cfg, &mut Vec::new()).unwrap();
    let wins = rows.iter().filter(|r| r.anderson_not_slower()).count();
    assert!(wins >= 9, "{wins}/{}", rows.len());
}

#[test]
fn censored_runs_are_rendered_with_the_step_limit() {
    let dir = TempDir::new().unwrap();
    let o = deqfuse(&[
        "solvebench",
        "--seeds",
        "1",
        "--max-steps",
        "3",
        "--target-resid",
        "1e-12",
        "--trace-steps",
        "3",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(code(&o), EXIT_OK);
    let rows = csv_rows(&dir.path().join("solvebench.csv"));
    assert_eq!(rows[0][1..], [">3".to_string(), ">3".to_string()]);
}

#[test]
fn help_exits_cleanly() {
    let o = deqfuse(&["--help"]);
    assert_eq!(code(&o), EXIT_OK);
    assert!(String::from_utf8(o.stdout).unwrap().contains("solvebench"));
}
