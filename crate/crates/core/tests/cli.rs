//! End-to-end checks of the `skin-audit` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::stub_server;
use skintone_audit::audit::{group_accuracy, load_manifest, Attribute};
use skintone_audit::imaging::{detect_skin, rgb_to_ycrcb, skin_luminance_histogram, RasterImage, SkinRule};
use skintone_audit::model::{Classifier, CompactNet, InputShape, NetClassifier};
use skintone_audit::transform::luminance_mode;

fn skin_audit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skin-audit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = skin_audit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_lines(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stderr).lines().map(str::to_owned).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// One dark-skinned face with skin mode 80.
fn face(dir: &Path) -> std::path::PathBuf {
    let mut img = RasterImage::filled(20, 20, [40, 60, 200]);
    for y in 4..16 {
        for x in 4..16 {
            let yv = if x < 10 { 80 } else { 90 };
            img.set(x, y, skintone_audit::imaging::ycrcb_pixel_to_rgb([yv, 100, 150]));
        }
    }
    let path = dir.join("face.png");
    img.save(&path).unwrap();
    path
}

fn skin_mode(path: &Path) -> u8 {
    let ycc = rgb_to_ycrcb(&RasterImage::load(path).unwrap());
    let mask = detect_skin(&ycc, &SkinRule::default());
    luminance_mode(&skin_luminance_histogram(&ycc, &mask).unwrap()).unwrap()
}

#[test]
fn transform_mode_shift_hits_target() {
    let dir = tempfile::tempdir().unwrap();
    let input = face(dir.path());
    assert_eq!(skin_mode(&input), 80);
    let output = dir.path().join("out.png");
    ok(&["transform", "--input", p(&input), "--method", "mode-shift", "--target-mode", "140", "--output", p(&output)]);
    assert_eq!(skin_mode(&output), 140);
}

#[test]
fn transform_ot_uses_palette() {
    let dir = tempfile::tempdir().unwrap();
    let input = face(dir.path());
    let palette = dir.path().join("flat200.txt");
    let masses: Vec<String> = (0..256).map(|y| if y == 200 { "1".into() } else { "0".into() }).collect();
    std::fs::write(&palette, masses.join(" ")).unwrap();
    let output = dir.path().join("out.png");
    ok(&["transform", "--input", p(&input), "--method", "ot", "--palette", p(&palette), "--output", p(&output)]);
    assert_eq!(skin_mode(&output), 200);
}

#[test]
fn detect_skin_writes_mask_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let input = face(dir.path());
    let out = dir.path().join("skin");
    let stdout = ok(&["detect-skin", "--input", p(&input), "--out", p(&out)]);
    assert!(stdout.contains("skin pixels 144 of 400"), "{stdout}");
    let hist = std::fs::read_to_string(out.join("histogram.txt")).unwrap();
    assert_eq!(hist.lines().count(), 256);
    assert!(hist.lines().any(|l| l == "80 72"));
    assert!(out.join("mask.png").is_file());
}

#[test]
fn usage_errors_are_single_line() {
    let out = skin_audit(&["transform", "--bogus"]);
    assert!(!out.status.success());
    let lines = stderr_lines(&out);
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].contains("--bogus"));

    let dir = tempfile::tempdir().unwrap();
    let input = face(dir.path());
    let out = skin_audit(&["transform", "--input", p(&input), "--method", "mode-shift", "--output", "x.png"]);
    assert_eq!(out.status.code(), Some(1));
    let lines = stderr_lines(&out);
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("--target-mode"));
}

#[test]
fn missing_manifest_fails_cleanly() {
    let out = skin_audit(&["accuracy-table", "--manifest", "/nonexistent/m.csv", "--model", "/nonexistent/x"]);
    assert_eq!(out.status.code(), Some(1));
    let lines = stderr_lines(&out);
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("missing file"), "{lines:?}");
}

/// Six uniform images; a 1×1 grayscale linear model calls bright images male.
fn brightness_fixture(dir: &Path) -> std::path::PathBuf {
    let rows = [
        ("a.png", 30u8, "female", "dark", "short"),
        ("b.png", 220, "female", "dark", "long"),
        ("c.png", 40, "female", "light", "long"),
        ("d.png", 35, "female", "light", "long"),
        ("e.png", 210, "male", "dark", "unknown"),
        ("f.png", 20, "male", "light", "short"),
    ];
    let mut csv = String::from("path,gender,skin_type,hair_length,crop_x,crop_y,crop_w,crop_h\n");
    for (name, v, g, s, h) in rows {
        RasterImage::filled(6, 6, [v, v, v]).save(dir.join(name)).unwrap();
        csv.push_str(&format!("{name},{g},{s},{h},,,,\n"));
    }
    std::fs::write(dir.join("manifest.csv"), csv).unwrap();
    let net = CompactNet::linear(InputShape::new(1, 1, 1), [vec![-10.0], vec![10.0]], [5.0, -5.0]).unwrap();
    net.save(dir.join("model.skcn")).unwrap();
    dir.join("manifest.csv")
}

#[test]
fn accuracy_table_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = brightness_fixture(dir.path());
    let model = dir.path().join("model.skcn");
    let stdout = ok(&[
        "accuracy-table", "--manifest", p(&manifest), "--model", p(&model), "--group-by", "skin_type,hair_length",
    ]);
    // dark/long: b wrong; dark/short: a right; dark/unknown: e right;
    // light/long: c, d right; light/short: f wrong
    let expected = "skin_type,hair_length,n,correct,accuracy\n\
                    dark,long,1,0,0\n\
                    dark,short,1,1,1\n\
                    dark,unknown,1,1,1\n\
                    light,long,2,2,1\n\
                    light,short,1,0,0\n";
    assert_eq!(stdout, expected);

    let m = load_manifest(&manifest).unwrap();
    let c = NetClassifier::new(CompactNet::load(&model).unwrap());
    let scores: Vec<_> = m
        .rows
        .iter()
        .map(|r| Some(c.score(&RasterImage::load(m.image_path(r)).unwrap()).unwrap()))
        .collect();
    let table = group_accuracy(&m.rows, &scores, &[Attribute::SkinType, Attribute::HairLength]).unwrap();
    assert_eq!(table.to_csv(), expected);
}

#[test]
fn audit_stability_over_remote_stub() {
    let dir = tempfile::tempdir().unwrap();
    skintone_audit::synthetic::write_dataset(dir.path(), 8, 32, 3).unwrap();
    let server = stub_server(|_, _| (200, r#"{"score": 0.7}"#.into()));
    let out = dir.path().join("report");
    let status = Command::new(env!("CARGO_BIN_EXE_skin-audit"))
        .args([
            "audit-stability", "--manifest", p(&dir.path().join("manifest.csv")),
            "--direction", "lighten", "--method", "mode-shift", "--out", p(&out),
        ])
        .env("SKIN_AUDIT_ENDPOINT", &server.endpoint)
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    for line in ["group DF", "group DM", "fraction_stable 1", "ci_lo 0", "ci_hi 0", "flips_to_correct 0"] {
        assert!(report.lines().any(|l| l == line), "missing {line:?} in\n{report}");
    }
    // males score 0.7 (correct) and females 0.7 (wrong) both before and after
    assert!(!report.contains("flips_to_incorrect 1"));
}

#[test]
fn remote_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = brightness_fixture(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_skin-audit"))
        .args(["accuracy-table", "--manifest", p(&manifest)])
        .env_remove("SKIN_AUDIT_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--endpoint"));
}
