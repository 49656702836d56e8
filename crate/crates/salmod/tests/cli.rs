//! End-to-end tests of the command-line surface: dataset materialization,
//! map generation, the training pipeline, and report aggregation, each run
//! through the real binary in a scratch directory.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn salmod(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salmod"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

const SMOKE: &str = "data.classes = 2\n\
    data.samples_per_class = 12\n\
    data.width = 32\n\
    data.height = 32\n\
    data.seed = 7\n\
    data.dir = data\n\
    net.variant = delayed_fusion\n\
    saliency.method = oracle\n\
    train.epochs = 2\n\
    train.k_list = 1,2\n\
    train.seeds = 1\n\
    out.dir = out\n";

#[test]
fn gen_data_writes_the_advertised_index_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // defaults: 20 classes x 40 samples
    write(dir, "cfg", "net.variant = baseline_rgb\n");
    let out = salmod(dir, &["gen-data", "--config", "cfg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index = read(dir, "data/index.csv");
    assert_eq!(index.lines().count(), 801, "header + 800 rows");
    let img0 = std::fs::read(dir.join("data/images/img_00000.ppm")).unwrap();
    let rerun = salmod(dir, &["gen-data", "--config", "cfg"]);
    assert!(rerun.status.success());
    assert_eq!(read(dir, "data/index.csv"), index);
    assert_eq!(
        std::fs::read(dir.join("data/images/img_00000.ppm")).unwrap(),
        img0,
        "regenerated image is byte-identical"
    );
}

#[test]
fn gen_data_rejects_an_undersized_spec_naming_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "cfg",
        "net.variant = baseline_rgb\ndata.samples_per_class = 8\n",
    );
    let out = salmod(dir, &["gen-data", "--config", "cfg"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("samples_per_class") || err.contains("11"), "{err}");
}

#[test]
fn gen_saliency_white_writes_constant_maps_and_unknown_method_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "cfg", SMOKE);
    assert!(salmod(dir, &["gen-data", "--config", "cfg"]).status.success());
    let out = salmod(dir, &["gen-saliency", "--config", "cfg", "--method", "white"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = salmod::netpbm::read_pgm(&dir.join("data/saliency/img_00000.pgm")).unwrap();
    assert!(map.pixels.iter().all(|&p| p == 255), "white maps are constant 255");
    let index = read(dir, "data/index.csv");
    assert!(index.lines().skip(1).all(|l| l.contains("saliency/")));

    let bad = salmod(dir, &["gen-saliency", "--config", "cfg", "--method", "sorcery"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sorcery"));
}

#[test]
fn gen_saliency_import_resizes_mismatched_maps_and_logs_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "cfg",
        &format!("{SMOKE}saliency.import_dir = maps\n").replace(
            "saliency.method = oracle",
            "saliency.method = import",
        ),
    );
    assert!(salmod(dir, &["gen-data", "--config", "cfg"]).status.success());
    // 24 external maps, one of them at the wrong resolution
    std::fs::create_dir(dir.join("maps")).unwrap();
    for i in 0..24 {
        let size = if i == 3 { 16 } else { 32 };
        let mut img = salmod::netpbm::GrayImage::new(size, size);
        img.pixels.iter_mut().for_each(|p| *p = (i * 10) as u8);
        salmod::netpbm::write_pgm(&dir.join(format!("maps/ext_{i:03}.pgm")), &img).unwrap();
    }
    let out = salmod(dir, &["gen-saliency", "--config", "cfg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("resized"), "mismatch is logged: {err}");
    let map = salmod::netpbm::read_pgm(&dir.join("data/saliency/img_00003.pgm")).unwrap();
    assert_eq!((map.width, map.height), (32, 32), "map stored at frame size");

    // map count must match the dataset
    std::fs::remove_file(dir.join("maps/ext_000.pgm")).unwrap();
    let short = salmod(dir, &["gen-saliency", "--config", "cfg"]);
    assert!(!short.status.success());
    assert!(String::from_utf8_lossy(&short.stderr).contains("23"));
}

#[test]
fn run_smoke_completes_quickly_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "cfg", SMOKE);
    assert!(salmod(dir, &["gen-data", "--config", "cfg"]).status.success());
    assert!(salmod(dir, &["gen-saliency", "--config", "cfg"]).status.success());
    let t0 = Instant::now();
    let out = salmod(dir, &["run", "--config", "cfg", "--grad-energy"]);
    let elapsed = t0.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        elapsed.as_secs() < 60,
        "smoke run took {elapsed:?}, budget is 60s"
    );
    let results = read(dir, "out/results.csv");
    assert!(results.starts_with("k,seed,accuracy\n"));
    assert_eq!(results.trim_end().lines().count(), 3, "2 cells + header");
    assert!(read(dir, "out/summary.csv").starts_with("k,mean,std\n"));
    let grad = read(dir, "out/grad_energy.csv");
    assert!(grad.starts_with("epoch,fraction_saliency,fraction_baseline\n"));
    assert_eq!(grad.trim_end().lines().count(), 3, "2 epochs + header");
    assert!(dir.join("out/checkpoints/ckpt_k1_seed0.bin").exists());
    assert!(dir.join("out/checkpoints/ckpt_k2_seed0.bin").exists());
}

#[test]
fn run_without_required_maps_or_dataset_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "cfg", SMOKE);
    // no dataset yet
    let out = salmod(dir, &["run", "--config", "cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
    // dataset but no maps, fusion variant
    assert!(salmod(dir, &["gen-data", "--config", "cfg"]).status.success());
    let out = salmod(dir, &["run", "--config", "cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-saliency"));
}

#[test]
fn analyze_builds_table_and_plots_from_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "delayed.csv",
        "k,seed,accuracy\n1,0,40\n1,1,50\n5,0,70\n5,1,80\nK,0,90\nK,1,95\n",
    );
    write(
        dir,
        "baseline.csv",
        "k,seed,accuracy\n1,0,30\n1,1,35\n5,0,55\n5,1,65\nK,0,85\nK,1,80\n",
    );
    write(
        dir,
        "sweep.csv",
        "quality,nss,accuracy\n0,0.01,20\n0.5,1.2,45\n1,2.4,70\n",
    );
    let out = salmod(
        dir,
        &[
            "analyze",
            "--reports",
            "delayed.csv",
            "baseline.csv",
            "sweep.csv",
            "--correlation",
            "--out",
            "an",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(dir, "an/ablation.csv");
    let lines: Vec<&str> = table.trim_end().lines().collect();
    assert_eq!(lines[0], "variant,k=1,k=5,k=K,AVG");
    assert_eq!(lines[1], "delayed,45.00,75.00,92.50,70.83");
    assert_eq!(lines[2], "baseline,32.50,60.00,82.50,58.33");
    let svg = read(dir, "an/accuracy_vs_k.svg");
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let scatter = read(dir, "an/correlation.svg");
    assert!(scatter.contains("stroke-dasharray"), "fitted line present");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r = 0.99") || stdout.contains("r = 1.00"), "{stdout}");
}

#[test]
fn analyze_rejects_mismatched_grids_and_thin_correlations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "a.csv", "k,seed,accuracy\n1,0,40\n5,0,70\n");
    write(dir, "b.csv", "k,seed,accuracy\n1,0,30\n3,0,60\n");
    let out = salmod(dir, &["analyze", "--reports", "a.csv", "b.csv"]);
    assert!(!out.status.success());
    let thin = "quality,nss,accuracy\n0,0.1,20\n1,2.0,70\n";
    write(dir, "thin.csv", thin);
    let out = salmod(dir, &["analyze", "--reports", "thin.csv", "--correlation"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("3"));
    // no reports at all
    let out = salmod(dir, &["analyze", "--reports"]);
    assert!(!out.status.success());
}

#[test]
fn thread_cap_env_var_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "cfg", "net.variant = baseline_rgb\ndata.classes = 2\ndata.samples_per_class = 12\ndata.width = 16\ndata.height = 16\n");
    let out = Command::new(env!("CARGO_BIN_EXE_salmod"))
        .current_dir(dir)
        .env("SALMOD_THREADS", "zero")
        .args(["gen-data", "--config", "cfg"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SALMOD_THREADS"));
    let out = Command::new(env!("CARGO_BIN_EXE_salmod"))
        .current_dir(dir)
        .env("SALMOD_THREADS", "1")
        .args(["gen-data", "--config", "cfg"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
