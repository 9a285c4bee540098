//! Acceptance criterion 10: any command re-run from its run manifest
//! produces byte-identical primary outputs — generated datasets, trained
//! registries, and results tables (per-row timings replay from the
//! manifest).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msgtl"))
        .args(args)
        .output()
        .expect("spawn msgtl")
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    fs::read(a).unwrap() == fs::read(b).unwrap()
}

#[test]
fn criterion_10_reruns_from_manifest_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();

    // gen-data.
    let data_a = dir.path().join("data_a");
    assert_ok(&run(&[
        "gen-data",
        "--stages",
        "3",
        "--m0",
        "300",
        "--seed",
        "17",
        "--out",
        data_a.to_str().unwrap(),
    ]));
    let data_b = dir.path().join("data_b");
    assert_ok(&run(&[
        "gen-data",
        "--from-manifest",
        data_a.join("run_manifest.toml").to_str().unwrap(),
        "--out",
        data_b.to_str().unwrap(),
    ]));
    let mut gen_ok = true;
    for entry in fs::read_dir(&data_a).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name == "run_manifest.toml" {
            continue;
        }
        gen_ok &= same_bytes(&path, &data_b.join(&name));
    }

    // train.
    let registry_a = dir.path().join("model_a.msgt");
    assert_ok(&run(&[
        "train",
        "--data",
        data_a.join("manifest.toml").to_str().unwrap(),
        "--variant",
        "msgtl",
        "--rho",
        "0.3",
        "--epochs",
        "4",
        "--seed",
        "3",
        "--out",
        registry_a.to_str().unwrap(),
    ]));
    let registry_b = dir.path().join("model_b.msgt");
    assert_ok(&run(&[
        "train",
        "--from-manifest",
        dir.path()
            .join("model_a.msgt.manifest.toml")
            .to_str()
            .unwrap(),
        "--out",
        registry_b.to_str().unwrap(),
    ]));
    let train_ok = same_bytes(&registry_a, &registry_b);

    // eval (timings replay from the manifest).
    let results_a = dir.path().join("results_a.csv");
    assert_ok(&run(&[
        "eval",
        "--data",
        data_a.join("manifest.toml").to_str().unwrap(),
        "--protocol",
        "crossval",
        "--folds",
        "3",
        "--epochs",
        "3",
        "--seed",
        "8",
        "--out",
        results_a.to_str().unwrap(),
    ]));
    let results_b = dir.path().join("results_b.csv");
    assert_ok(&run(&[
        "eval",
        "--from-manifest",
        dir.path()
            .join("results_a.csv.manifest.toml")
            .to_str()
            .unwrap(),
        "--out",
        results_b.to_str().unwrap(),
    ]));
    let eval_ok = same_bytes(&results_a, &results_b);

    let ok = gen_ok && train_ok && eval_ok;
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion 10: byte-identical reruns — gen-data {gen_ok}, train {train_ok}, \
         eval {eval_ok}"
    );
    assert!(ok);
}
