use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nearfield::channel::ChannelRealization;
use nearfield::harness::RunManifest;

fn nearfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearfield"))
        .args(args)
        .env("NEARFIELD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"bs_horizontal": 8, "bs_vertical": 8, "mr_elements": 2, "clusters": 2, "rays_per_cluster": 4}"#;

#[test]
fn rayleigh_table_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = nearfield(&["rayleigh_table", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.experiments.len(), 1);
    let csv = fs::read_to_string(out.join("rayleigh_table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"bs_horizontal": 8, "bs_vertical": 8, "seed": 4, "realizations": 3, "model": "planar"}"#);
    let out = dir.path().join("run");
    let res = nearfield(&[
        "frequency_cf",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--model",
        "subarray:4x2",
        "--sweep",
        "0,1e6",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 11);
    assert_eq!(manifest.realizations, 3);
    assert_eq!(manifest.model.to_string(), "subarray:4x2");
    assert_eq!(manifest.config.bs_horizontal, 8);
    let csv = fs::read_to_string(out.join("frequency_cf_subarray-4x2.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",3,11"));
}

#[test]
fn invalid_inputs_fail_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let cfg = write_config(dir.path(), r#"{"bs_spacing": 0}"#);
    let res = nearfield(&["rayleigh_table", "--config", &cfg, "--out", out]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("bs_spacing"), "{}", stderr(&res));

    let cfg = write_config(dir.path(), SMALL);
    let res = nearfield(&["temporal_acf", "--config", &cfg, "--out", out, "--model", "subarray:9x9"]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("1 <= size <= 8"), "{}", stderr(&res));

    let res = nearfield(&["temporal_acf", "--config", &cfg, "--out", out, "--sweep", "5:1:1"]);
    assert!(!res.status.success());

    let res = nearfield(&["frequency_cf", "--config", &cfg, "--out", out, "--sweep", "0,30e6"]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("outside the band"), "{}", stderr(&res));

    let res = nearfield(&["rayleigh_table", "--config", "/nonexistent/scenario.json", "--out", out]);
    assert!(!res.status.success());

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let res = nearfield(&["rayleigh_table", "--out", blocker.join("sub").to_str().unwrap()]);
    assert!(!res.status.success());
}

#[test]
fn validate_config_prints_resolved_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"carrier_frequency": 2.4e9}"#);
    let res = nearfield(&["validate_config", "--config", &cfg]);
    assert!(res.status.success(), "{}", stderr(&res));
    let resolved: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let spacing = resolved["bs_spacing"].as_f64().unwrap();
    assert!((spacing - 0.5 * 299_792_458.0 / 2.4e9).abs() < 1e-15);
    assert_eq!(resolved["bs_horizontal"], 64);
}

#[test]
fn exports_field_and_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let field = dir.path().join("field.csv");
    let res = nearfield(&["export_field", "--config", &cfg, "--seed", "3", "--out", field.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = fs::read_to_string(&field).unwrap();
    assert!(text.starts_with("cluster,ray,x,y,z,phase"));
    assert_eq!(text.lines().count(), 1 + 8);

    let bin = dir.path().join("h.bin");
    let res = nearfield(&[
        "export_channel",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--model",
        "subarray:4x4",
        "--format",
        "binary",
        "--time",
        "0.25",
        "--out",
        bin.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let bytes = fs::read(&bin).unwrap();
    let h = ChannelRealization::read_binary_matrix(&bytes, 2, 64).unwrap();

    let csv_path = dir.path().join("h.csv");
    let res = nearfield(&[
        "export_channel",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--model",
        "subarray:4x4",
        "--time",
        "0.25",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let mut n = 0;
    for record in reader.records() {
        let r = record.unwrap();
        let p: usize = r[0].parse().unwrap();
        let q: usize = r[1].parse().unwrap();
        let re: f64 = r[2].parse().unwrap();
        let im: f64 = r[3].parse().unwrap();
        assert_eq!((re, im), (h[(q - 1, p - 1)].re, h[(q - 1, p - 1)].im));
        n += 1;
    }
    assert_eq!(n, 128);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut digests = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let res = Command::new(env!("CARGO_BIN_EXE_nearfield"))
            .args([
                "spatial_ccf",
                "--config",
                &cfg,
                "--realizations",
                "16",
                "--model",
                "subarray:4x4",
                "--out",
                out.to_str().unwrap(),
            ])
            .env("NEARFIELD_THREADS", threads)
            .output()
            .unwrap();
        assert!(res.status.success(), "{}", stderr(&res));
        let manifest: RunManifest =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        digests.push(manifest.digests().cloned().collect::<Vec<_>>());
    }
    assert_eq!(digests[0], digests[1]);
}
