//! The command line end to end, through `run_from` so exit codes are visible.

mod common;

use std::fs;
use std::path::Path;

use common::tiny_config;
use fluosr::cli::run_from;
use fluosr::io::{load_image, save_image, BitDepth};
use fluosr::log::read_log;
use fluosr_core::GrayImage;

fn run(args: &[&str]) -> i32 {
    run_from(std::iter::once("fluosr").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--help"]), 0);
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["train"]), 1);
    assert_eq!(run(&["prepare", "--synthetic", "2", "--input", "x"]), 1);
    assert_eq!(run(&["prepare", "--synthetic", "2", "--size", "15", "--out", "/tmp/never"]), 1);
}

#[test]
fn configuration_conflicts_fail_before_any_data_is_read() {
    let missing = "/definitely/not/here";
    // bad preset, bad key, and a decay outside (0, 1]: all usage errors
    assert_eq!(run(&["train", "--manifest", missing, "--preset", "nope", "--dry-run"]), 1);
    assert_eq!(run(&["train", "--manifest", missing, "--set", "no_such_key=1", "--dry-run"]), 1);
    assert_eq!(run(&["train", "--manifest", missing, "--set", "lr_decay=1.5", "--dry-run"]), 1);
    assert_eq!(run(&["train", "--manifest", missing, "--set", "overlap=0.3", "--dry-run"]), 1);
    assert_eq!(run(&["train", "--manifest", missing, "--toy", "--dry-run"]), 0);
    // a valid configuration with a missing dataset is a data error
    assert_eq!(run(&["train", "--manifest", missing, "--toy", "--quiet"]), 2);
}

#[test]
fn prepare_train_infer_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["prepare", "--synthetic", "4", "--size", "32", "--out", p(&data), "--patch-size", "8"]), 0);
    let manifest = data.join("manifest.tsv");
    assert!(manifest.exists());
    // re-validating the written directory succeeds too
    assert_eq!(run(&["prepare", "--input", p(&data), "--patch-size", "8"]), 0);

    let run_dir = dir.path().join("run");
    let config = dir.path().join("tiny.txt");
    fs::write(&config, tiny_config(&run_dir).to_text()).unwrap();
    assert_eq!(run(&["train", "--manifest", p(&manifest), "--config", p(&config), "--quiet"]), 0);
    let ckpt = run_dir.join("last.ckpt");
    assert!(ckpt.exists());
    let rows = read_log(&run_dir.join("train_log.csv")).unwrap();
    assert!(rows.iter().any(|r| r.phase == 2));

    // odd sizes, both bit depths, default output name
    let input = dir.path().join("odd.tif");
    save_image(&input, &GrayImage::from_fn(7, 11, |r, c| ((r + c) % 5) as f32 / 4.0), BitDepth::Sixteen).unwrap();
    assert_eq!(run(&["infer", "--checkpoint", p(&ckpt), p(&input)]), 0);
    let (out, depth) = load_image(&dir.path().join("odd_x2.tif")).unwrap();
    assert_eq!((out.dims(), depth), ((14, 22), BitDepth::Sixteen));

    let big = dir.path().join("big.png");
    save_image(&big, &GrayImage::filled(40, 24, 0.3), BitDepth::Eight).unwrap();
    let out_dir = dir.path().join("out");
    assert_eq!(run(&["infer", "--checkpoint", p(&ckpt), "--tile", "16", "--tile-overlap", "4", "--out", p(&out_dir), p(&big)]), 0);
    assert_eq!(load_image(&out_dir.join("big.png")).unwrap().0.dims(), (80, 48));
    assert_eq!(run(&["infer", "--checkpoint", p(&ckpt), "--tile", "4", "--tile-overlap", "4", p(&big)]), 1);
    assert_eq!(run(&["infer", "--checkpoint", p(&dir.path().join("nope.ckpt")), p(&big)]), 2);

    let montages = dir.path().join("montage");
    let csv = dir.path().join("scores.csv");
    let p1 = run_dir.join("p1_e001.ckpt");
    assert_eq!(
        run(&["evaluate", "--checkpoint", p(&p1), "--checkpoint", p(&ckpt), "--manifest", p(&manifest),
              "--montage", p(&montages), "--csv", p(&csv)]),
        0
    );
    let montage_files: Vec<_> = fs::read_dir(&montages).unwrap().collect();
    assert_eq!(montage_files.len(), 4);
    let (m, _) = load_image(&montage_files[0].as_ref().unwrap().path()).unwrap();
    // bicubic, two checkpoints, ground truth; each 32x32 over a zoom row
    assert_eq!(m.dims(), (64, 4 * 32));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("image,bicubic_psnr,bicubic_ssim,p1_e001_psnr,p1_e001_ssim,last_psnr,last_ssim"));
}

#[test]
fn resume_takes_its_configuration_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["prepare", "--synthetic", "4", "--size", "32", "--out", p(&data), "--patch-size", "8"]), 0);
    let manifest = data.join("manifest.tsv");
    let run_dir = dir.path().join("run");
    let config = dir.path().join("tiny.txt");
    fs::write(&config, tiny_config(&run_dir).to_text()).unwrap();
    assert_eq!(run(&["train", "--manifest", p(&manifest), "--config", p(&config), "--phase1-only", "--quiet"]), 0);
    let p1 = run_dir.join("p1_e001.ckpt");
    let resumed = dir.path().join("resumed");
    assert_eq!(
        run(&["train", "--manifest", p(&manifest), "--resume", p(&p1), "--out", p(&resumed), "--quiet"]),
        0
    );
    assert!(resumed.join("p2_e001.ckpt").exists());
    // changing the network on resume is refused
    assert_eq!(
        run(&["train", "--manifest", p(&manifest), "--resume", p(&p1), "--set", "num_rrdb=2", "--out", p(&resumed), "--quiet"]),
        1
    );
}
