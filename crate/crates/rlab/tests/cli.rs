//! End-to-end checks of the `rlab` binary: exit codes, output formats, and
//! byte-identical reruns of the extension scan.

use std::path::PathBuf;
use std::process::Command;

fn rlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rlab"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rlab-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn mean_value_matches_oracle() {
    let out = rlab()
        .args(["mean-value", "--N", "3", "--d", "3", "--s", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["oracle"], 15.0);
    assert!(v["relative_gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn mean_value_with_coefficients_file() {
    let dir = temp_dir("coeffs");
    let path = dir.join("coeffs.csv");
    std::fs::write(&path, "1,0\n0.5,-0.5\n").unwrap();
    let out = rlab()
        .args(["mean-value", "--N", "2", "--d", "3", "--s", "1"])
        .arg("--coeffs")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Parseval: 1 + 0.5 = 1.5.
    assert!((v["value"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert!(v["oracle"].is_null());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn dump_tiles_emits_parseable_json() {
    let out = rlab()
        .args(["dump-tiles", "--N", "4", "--d", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn validation_failures_exit_2() {
    // p = 6 < 2d+2 on the extension scan.
    let dir = temp_dir("badcfg");
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, r#"{"p": 6.0, "tile_counts": [2, 4]}"#).unwrap();
    let out = rlab()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .arg("scan-st")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("p >= 2d+2"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn budget_exhaustion_exits_3() {
    let dir = temp_dir("budget");
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, r#"{"memory_budget_mb": 1}"#).unwrap();
    let out = rlab()
        .arg("--config")
        .arg(&cfg)
        .args(["tang-tran", "--N", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn partition_subcommand_writes_outputs() {
    let dir = temp_dir("part");
    let points = dir.join("points.csv");
    let mut body = String::from("x,y\n");
    let mut state = 12345u64;
    for _ in 0..500 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let x = (state >> 11) as f64 / (1u64 << 53) as f64;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let y = (state >> 11) as f64 / (1u64 << 53) as f64;
        body.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&points, body).unwrap();
    let out = rlab()
        .arg("--out")
        .arg(&dir)
        .arg("partition")
        .arg("--points")
        .arg(&points)
        .args(["--degree", "2", "--raster", "pgm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let poly: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("partition-poly.json")).unwrap())
            .unwrap();
    assert!(poly["degree"].as_u64().unwrap() >= 2);
    let masses = std::fs::read_to_string(dir.join("partition-masses.csv")).unwrap();
    assert!(masses.starts_with("cell,mass\n"));
    let pgm = std::fs::read(dir.join("partition.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn decompose_emits_packet_metadata() {
    let dir = temp_dir("dec");
    // Write a small synthetic field: N=2 tiling carrier, 128x128.
    use num_complex::Complex64;
    use restriction_lab::field::{Field, GridSpec};
    use restriction_lab::tiles::{build_frequency_tiles, CurveParams};
    use restriction_lab::wavepacket::tiling_carrier;
    let tiles = build_frequency_tiles(&CurveParams::new(3.0, 2).unwrap());
    let spec = GridSpec::centered_square(32.0, 256, tiling_carrier(&tiles)).unwrap();
    let f = Field::from_modes(
        &spec,
        &[(spec.snap_frequency(tiles[0].center), Complex64::new(1.0, 0.0))],
    );
    let path = dir.join("field.bin");
    let mut file = std::fs::File::create(&path).unwrap();
    f.write_binary(&mut file).unwrap();
    drop(file);
    let out = rlab()
        .arg("decompose")
        .arg("--field")
        .arg(&path)
        .args(["--N", "2", "--d", "3", "--region", "-8,-8,8,8"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<&str> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .collect();
    assert!(!lines.is_empty());
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["tile"], 0); // pure tile-0 mode
        assert!(v["l2_mass"].as_f64().unwrap() > 0.0);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lemma_battery_prints_csv() {
    let out = rlab()
        .args(["lemma-battery", "--which", "directions"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let body = String::from_utf8(out.stdout).unwrap();
    assert!(body.starts_with("directions,count,bound\n"));
    assert_eq!(body.lines().count(), 2);
}

/// Identical config and seed produce byte-identical scan CSVs.
#[test]
fn scan_st_reruns_are_byte_identical() {
    let dir_a = temp_dir("det-a");
    let dir_b = temp_dir("det-b");
    let cfg = dir_a.join("config.json");
    std::fs::write(
        &cfg,
        r#"{"tile_counts": [2, 4], "seed": 7, "max_spacing": 0.5}"#,
    )
    .unwrap();
    let run = |out_dir: &PathBuf| -> Vec<u8> {
        let out = rlab()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .arg("scan-st")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        let csv_path = stdout
            .lines()
            .find(|l| l.ends_with(".csv"))
            .expect("scan reports a csv path");
        std::fs::read(csv_path).unwrap()
    };
    let a = run(&dir_a);
    let b = run(&dir_b);
    assert!(!a.is_empty());
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}
