//! Dataset files, result bundles and the `mfbd` binary.

use std::path::Path;
use std::process::Command;

use mfbd_cli::pipeline::{generate, open_dataset, run, save_dataset};
use mfbd_cli::presets::{preset, NAMES};
use mfbd_cli::ExperimentConfig;

fn mfbd(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mfbd"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MFBD_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn dataset_file_round_trip_gives_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("exact").unwrap();
    let data = generate(&cfg).unwrap();
    let path = dir.path().join("exact.mfbd");
    save_dataset(&path, &data).unwrap();
    let back = open_dataset(&path).unwrap();
    assert_eq!(back.psf_shape, data.psf_shape);
    assert_eq!(back.truth, data.truth);
    assert_eq!(back.footprint, data.footprint);
    assert_eq!(back.y.to_matrix(usize::MAX).unwrap(), data.y.to_matrix(usize::MAX).unwrap());
    let a = run(&cfg, &data).unwrap();
    let b = run(&cfg, &back).unwrap();
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(a.estimate, b.estimate);
}

#[test]
fn presets_print_as_loadable_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfbd(&["presets"], dir.path());
    assert!(out.status.success());
    let listed: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(listed, NAMES);
    for name in NAMES {
        let out = mfbd(&["presets", name], dir.path());
        let cfg = ExperimentConfig::from_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(cfg, preset(name).unwrap());
    }
}

#[test]
fn generate_then_run_writes_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfbd(&["generate", "--preset", "exact", "--out", "exact.mfbd"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("exact.truth.pgm").exists());
    let out = mfbd(&["run", "--preset", "exact", "--dataset", "exact.mfbd", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "summary.csv", "metrics.csv", "spectrum.csv", "solve.csv", "estimate.pgm"] {
        assert!(dir.path().join("res").join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("res/summary.csv")).unwrap();
    let e: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("ni_rms_observed,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(e < 1e-3, "NI-RMS {e}");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(mfbd(&["run", "--preset", "no-such-preset"], p).status.code(), Some(2));
    assert_eq!(mfbd(&["run", "--preset", "exact", "--set", "psf=40x40"], p).status.code(), Some(2));
    assert_eq!(mfbd(&["run", "--preset", "exact", "--dataset", "missing.mfbd"], p).status.code(), Some(4));
    std::fs::write(p.join("junk.mfbd"), b"not a dataset").unwrap();
    assert_eq!(mfbd(&["run", "--preset", "exact", "--dataset", "junk.mfbd"], p).status.code(), Some(4));
}

#[test]
fn bench_table_marks_skipped_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfbd(
        &["bench-svd", "--n", "40", "--frame-size", "100,400", "--rank", "5", "--dense-budget-mib", "0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "backend,n=40 |y|=100,n=40 |y|=400");
    assert_eq!(rows[1], "dense,—,—");
    assert!(rows[2].starts_with("randomized,") && !rows[2].contains('—'));
    assert!(rows[3].starts_with("single-pass,"));
}

#[test]
fn figures_without_results_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let out = mfbd(&["figures", "--results", "empty", "--out", "figs"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("nothing to do"));
    assert!(!dir.path().join("figs").exists());
}
