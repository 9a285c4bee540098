//! End-to-end command-line tests: generation, training, evaluation, sweep,
//! report, exit codes, and the environment seed override.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn msgtl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msgtl"))
}

fn run(args: &[&str]) -> Output {
    msgtl().args(args).output().expect("spawn msgtl")
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn gen_small(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{seed}"));
    let output = run(&[
        "gen-data",
        "--stages",
        "3",
        "--m0",
        "300",
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&output);
    out.join("manifest.toml")
}

#[test]
fn gen_data_minimal_two_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("two");
    let output = run(&[
        "gen-data",
        "--stages",
        "2",
        "--m0",
        "200",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 2);
    assert!(out.join("manifest.toml").exists());
    assert!(out.join("run_manifest.toml").exists());
}

#[test]
fn gen_data_same_seed_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path(), 11);
    let b_dir = dir.path().join("again");
    let output = run(&[
        "gen-data",
        "--stages",
        "3",
        "--m0",
        "300",
        "--seed",
        "11",
        "--out",
        b_dir.to_str().unwrap(),
    ]);
    assert_ok(&output);
    for entry in fs::read_dir(a.parent().unwrap()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap();
        if name == "run_manifest.toml" {
            continue; // carries wall-clock
        }
        let twin = b_dir.join(name);
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(&twin).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn gen_data_paper_like_preset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("preset");
    let output = run(&[
        "gen-data",
        "--preset",
        "paper-like",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let data = msgtl_core::funnelgen::load_stage_csv(&out.join("manifest.toml")).unwrap();
    assert_eq!(data.stage_count(), 12);
    for q in 1..12 {
        assert!(data.stage(q).unwrap().rows() < data.stage(q - 1).unwrap().rows());
        assert!(data.stage(q).unwrap().cols() > data.stage(q - 1).unwrap().cols());
    }
    let last = data.stage(11).unwrap().rows();
    assert!((15..=40).contains(&last), "final stage has {last} rows");
}

#[test]
fn train_writes_registry_with_all_stages() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 21);
    let registry_path = dir.path().join("model.msgt");
    let output = run(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--variant",
        "msgtl",
        "--rho",
        "0.3",
        "--omega",
        "6",
        "--gamma",
        "2",
        "--epochs",
        "3",
        "--seed",
        "5",
        "--out",
        registry_path.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let registry = msgtl_core::pipeline::load_registry(&registry_path).unwrap();
    assert_eq!(registry.len(), 3);
    assert!(registry.entries[1].report.is_some());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("stage  0"), "{stdout}");
    assert!(stdout.contains("train-F1"), "{stdout}");
}

#[test]
fn train_start_skips_earlier_stages() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 22);
    let registry_path = dir.path().join("model.msgt");
    let output = run(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--epochs",
        "2",
        "--start",
        "1",
        "--out",
        registry_path.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let registry = msgtl_core::pipeline::load_registry(&registry_path).unwrap();
    assert_eq!(registry.start_stage, 1);
    assert_eq!(registry.len(), 2);
}

#[test]
fn train_nn_variant_has_no_transfers() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 23);
    let registry_path = dir.path().join("nn.msgt");
    let output = run(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--variant",
        "nn",
        "--epochs",
        "2",
        "--out",
        registry_path.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let registry = msgtl_core::pipeline::load_registry(&registry_path).unwrap();
    assert!(registry.entries.iter().all(|e| e.report.is_none()));
}

#[test]
fn eval_crossval_writes_fold_rows_and_assert_gates() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 31);
    let results = dir.path().join("results.csv");
    let output = run(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--protocol",
        "crossval",
        "--folds",
        "3",
        "--epochs",
        "3",
        "--seed",
        "2",
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let records = msgtl_core::evalharness::read_results(&results).unwrap();
    assert_eq!(records.len(), 3 * 3); // folds x stages
    for fold in 0..3 {
        assert!(records.iter().any(|r| r.fold == fold));
    }

    // Impossible gate -> exit code 2.
    let gated = run(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--folds",
        "3",
        "--epochs",
        "3",
        "--out",
        dir.path().join("r2.csv").to_str().unwrap(),
        "--assert",
        "mean-f1>=0.999",
    ]);
    assert_eq!(gated.status.code(), Some(2));

    // Trivial gate -> success.
    let passed = run(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--folds",
        "3",
        "--epochs",
        "3",
        "--out",
        dir.path().join("r3.csv").to_str().unwrap(),
        "--assert",
        "mean-f1>=0.0",
    ]);
    assert_eq!(passed.status.code(), Some(0));
}

#[test]
fn eval_longitudinal_needs_and_uses_second_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let base = gen_small(dir.path(), 41);
    let cohort1 = dir.path().join("cohort1");
    let output = run(&[
        "gen-data",
        "--stages",
        "3",
        "--m0",
        "300",
        "--seed",
        "41",
        "--cohort",
        "1",
        "--out",
        cohort1.to_str().unwrap(),
    ]);
    assert_ok(&output);

    let missing = run(&[
        "eval",
        "--data",
        base.to_str().unwrap(),
        "--protocol",
        "longitudinal",
        "--epochs",
        "2",
        "--out",
        dir.path().join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));

    let results = dir.path().join("long.csv");
    let output = run(&[
        "eval",
        "--data",
        base.to_str().unwrap(),
        "--protocol",
        "longitudinal",
        "--validate-data",
        cohort1.join("manifest.toml").to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let records = msgtl_core::evalharness::read_results(&results).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.protocol == "longitudinal"));
}

#[test]
fn sweep_grid_cardinality_and_report_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 51);
    let results = dir.path().join("sweep.csv");
    let output = run(&[
        "sweep",
        "--data",
        manifest.to_str().unwrap(),
        "--rho",
        "0,0.3,1",
        "--seeds",
        "1",
        "--folds",
        "2",
        "--epochs",
        "2",
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let records = msgtl_core::evalharness::read_results(&results).unwrap();
    // 3 rho x 1 seed x 2 folds x 3 stages.
    assert_eq!(records.len(), 18);

    let report_dir = dir.path().join("report");
    let output = run(&[
        "report",
        "--in",
        results.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_ok(&output);
    assert!(report_dir.join("results.csv").exists());
    assert!(report_dir.join("summary.md").exists());
    assert!(report_dir.join("fig_stage_f1.csv").exists());
    assert!(report_dir.join("fig_rho_f1.csv").exists());
    let summary = fs::read_to_string(report_dir.join("summary.md")).unwrap();
    assert!(summary.contains("Evaluation Phase"), "{summary}");
}

#[test]
fn unknown_flags_and_bad_input_exit_one() {
    let output = run(&["gen-data", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(1));
    let output = run(&[
        "train",
        "--data",
        "/nonexistent/manifest.toml",
        "--out",
        "/tmp/x.msgt",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let output = run(&["gen-data", "--stages", "1", "--out", "/tmp/one_stage"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let with_env = dir.path().join("env");
    let output = msgtl()
        .args([
            "gen-data",
            "--stages",
            "2",
            "--m0",
            "200",
            "--seed",
            "1",
            "--out",
            with_env.to_str().unwrap(),
        ])
        .env("MSGTL_SEED", "9")
        .output()
        .unwrap();
    assert_ok(&output);
    let direct = dir.path().join("direct");
    let output = run(&[
        "gen-data",
        "--stages",
        "2",
        "--m0",
        "200",
        "--seed",
        "9",
        "--out",
        direct.to_str().unwrap(),
    ]);
    assert_ok(&output);
    for entry in fs::read_dir(&with_env).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap();
        if name == "run_manifest.toml" {
            continue;
        }
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(direct.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path(), 61);
    let config_path = dir.path().join("msgtl.toml");
    fs::write(
        &config_path,
        format!(
            "data = \"{}\"\nvariant = \"msgtl\"\nepochs = 2\nseed = 4\n",
            manifest.display()
        ),
    )
    .unwrap();
    let registry_path = dir.path().join("from_config.msgt");
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        registry_path.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let registry = msgtl_core::pipeline::load_registry(&registry_path).unwrap();
    assert_eq!(registry.len(), 3);
    assert_eq!(registry.entries[0].config.epochs, 2);
    assert_eq!(registry.entries[0].config.seed, 4);
}
