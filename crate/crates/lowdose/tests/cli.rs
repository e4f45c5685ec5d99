use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lowdose::format::{read_mask, read_volume};
use lowdose::tables::{read_metrics, METRICS_HEADER, SIGNIFICANCE_HEADER};
use lowdose_core::metrics::Arm;

fn lowdose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowdose")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lowdose(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    lowdose(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn stages_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["phantom-gen", "--n", "5", "--seed", "3", "--out", s(&data)]);
    assert_eq!(header(&data.join("split.csv")), "study_id,patient_id,split");
    let study = data.join("study_0");
    let t1 = study.join("t1.hdr");
    let t1ce = study.join("t1ce.hdr");
    assert_eq!(read_volume(&t1).unwrap().dims(), [96, 96, 12]);

    let map = d.join("map.txt");
    let hist = d.join("hist.csv");
    ok(&["calibrate", "--t1", s(&t1), "--t1ce", s(&t1ce), "--out", s(&map), "--hist", s(&hist)]);
    let text = fs::read_to_string(&map).unwrap();
    assert!(text.starts_with("scale=") && text.contains("\noffset="));
    assert_eq!(header(&hist), "bin_center,count_t1,count_t1ce");
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 257);

    let sim = d.join("sim");
    ok(&["simulate", "--t1", s(&t1), "--t1ce", s(&t1ce), "--map", s(&map), "--beta", "10,30", "--out-dir", s(&sim)]);
    let manifest = fs::read_to_string(sim.join("sim_manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.starts_with("beta,lo,hi\n10,"));
    let low = read_volume(&sim.join("lowdose_b10.hdr")).unwrap();
    assert_eq!(low.min_max(), (-1.0, 1.0));

    let ckpt = d.join("models/b10.ckpt");
    ok(&["train", "--data", s(&data), "--beta", "10", "--out", s(&ckpt), "--set", "train.steps=3"]);
    let hist_csv = fs::read_to_string(d.join("models/b10_history.csv")).unwrap();
    assert_eq!(hist_csv.lines().count(), 4);

    let restored = d.join("restored.hdr");
    ok(&["restore", "--checkpoint", s(&ckpt), "--input", s(&sim.join("lowdose_b10.hdr")), "--out", s(&restored)]);
    assert_eq!(read_volume(&restored).unwrap().dims(), low.dims());

    let metrics = d.join("metrics.csv");
    let mask = study.join("mask.hdr");
    read_mask(&mask).unwrap();
    for (arm, img) in [("low_dose", sim.join("lowdose_b10.hdr")), ("restored", restored.clone())] {
        ok(&[
            "evaluate", "--input", s(&img), "--reference", s(&sim.join("standard.hdr")), "--mask", s(&mask),
            "--study-id", "0", "--beta", "10", "--arm", arm, "--plane-mm", "24", "--out", s(&metrics),
        ]);
    }
    assert_eq!(header(&metrics), METRICS_HEADER.join(","));
    let recs = read_metrics(&metrics).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!((recs[0].arm, recs[1].arm), (Arm::LowDose, Arm::Restored));

    let sig = d.join("significance.csv");
    ok(&["stats", "--metrics", s(&metrics), "--out", s(&sig)]);
    assert_eq!(header(&sig), SIGNIFICANCE_HEADER.join(","));

    let rep = d.join("report");
    ok(&["report", "--metrics", s(&metrics), "--significance", s(&sig), "--out-dir", s(&rep), "--svg"]);
    assert!(header(&rep.join("table4.csv")).starts_with("beta,arm,n,ssim_mean"));
    assert!(rep.join("fig4_dice.svg").exists());

    let pgm = d.join("slice.pgm");
    ok(&["export-pgm", "--input", s(&restored), "--slice", "6", "--out", s(&pgm)]);
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n# window linear"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // config errors
    assert_eq!(code(&["run", "--set", "doses.betas=[15]", "--work-dir", s(&d.join("w"))]), 2);
    assert_eq!(code(&["run", "--set", "train.unknown=1", "--work-dir", s(&d.join("w"))]), 2);
    assert_eq!(code(&["restore", "--checkpoint", "x", "--input", "y", "--out", "z", "--patch", "32"]), 2);
    // data errors
    assert_eq!(code(&["stats", "--metrics", s(&d.join("missing.csv")), "--out", s(&d.join("o.csv"))]), 3);
    fs::write(d.join("bad.ckpt"), b"lowdose-checkpoint 1\nend\n").unwrap();
    assert_eq!(code(&["restore", "--checkpoint", s(&d.join("bad.ckpt")), "--input", "y", "--out", "z"]), 3);
    // numeric failure: a runaway learning rate overflows the loss
    let data = d.join("data");
    ok(&["phantom-gen", "--n", "5", "--out", s(&data)]);
    let out = lowdose(&[
        "train", "--data", s(&data), "--beta", "10", "--out", s(&d.join("m.ckpt")), "--set", "train.steps=50",
        "--set", "train.lr_g=1e300",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn smoke_run_writes_every_output_once() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    ok(&[
        "run", "--phantom", "5", "--work-dir", s(&work), "--set", "doses.betas=[10, 100]", "--set", "train.steps=4",
    ]);
    for f in ["metrics.csv", "significance.csv", "table4.csv", "fig4.csv", "manifest.json", "calibration.csv", "fig4_dice.svg"] {
        assert!(work.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let recs = read_metrics(&work.join("metrics.csv")).unwrap();
    // 5 patients: 4 train, 1 test; two doses, two arms
    assert_eq!(recs.len(), 4);
    let mut keys: Vec<_> = recs.iter().map(|r| (r.study_id.clone(), r.beta_percent, r.arm)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), recs.len());
    // full dose: the low-dose arm is the reference itself
    let full = recs.iter().find(|r| r.beta_percent == 100 && r.arm == Arm::LowDose).unwrap();
    assert_eq!(full.ssim, 1.0);
    assert_eq!(full.psnr_db, f64::INFINITY);
}
