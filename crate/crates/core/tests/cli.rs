use std::path::{Path, PathBuf};
use std::process::Command;

use gyrolab::cli::{run_scenario, run_source, Overrides};
use gyrolab::config::validate_str;
use sha2::{Digest, Sha256};

const FLAT: &str = r#"
[scenario]
name = "flat"
seed = 1
stages = ["simulate"]

[surface]
kind = "torus"

[field]
family = "constant"
value = 1.0

[simulate]
s = 0.1
start = [0.0, 0.0]
t_end = 6.283185307179586
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gyrolab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn minimal_run_lists_two_files_with_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", FLAT);
    let out = dir.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("flat/manifest.json")).unwrap()).unwrap();
    let files = m["files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    assert_eq!(files.iter().filter(|f| f["path"].as_str().unwrap().ends_with(".csv")).count(), 1);
    for f in files {
        let bytes = std::fs::read(out.join("flat").join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f["sha256"].as_str().unwrap());
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
    }
    assert_eq!(m["config_sha256"].as_str().unwrap(), hex::encode(Sha256::digest(FLAT.as_bytes())));
    assert_eq!(m["seed"], 1);
    assert_eq!(m["rotation_sign"], 1.0);
    assert!(m["wall_clock"][0]["seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unknown_family_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &FLAT.replace("\"constant\"", "\"dipole\""));
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dipole"));
    let v = bin().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(v.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&v.stdout).contains("field.family"));
}

#[test]
fn parse_error_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "[scenario]\nname = \"x\"\nstages = [\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let e = String::from_utf8_lossy(&o.stderr);
    assert!(e.contains("line 4, column 1"), "{e}");
}

#[test]
fn numerical_failure_exits_3_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    // The guiding-center Hamiltonian is critical at the maximum of b.
    let src = std::fs::read_to_string(configs().join("torus_saddle.toml"))
        .unwrap()
        .replace("seed_point = [1.0, 1.0]", "seed_point = [0.0, 0.0]")
        .replace("stages = [\"reduce\", \"saddle\"]", "stages = [\"reduce\"]");
    let cfg = write(dir.path(), "crit.toml", &src);
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage reduce"));
}

#[test]
fn unreadable_config_exits_2() {
    let o = bin().args(["validate", "--config", "/nonexistent/gyrolab.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    for e in std::fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        let d = validate_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert!(d.is_empty(), "{}: {d:?}", p.display());
    }
}

#[test]
fn validate_saddle_and_resonant_constraints() {
    let saddle = format!(
        "{FLAT}\n[saddle]\ns = 0.02\nat = [3.14, 0.0]\ndelta = 0.1\neps = 0.1\ndelta_start = 0.05\nhorizon = 1\nsamples = 1\n"
    );
    let d = validate_str(&saddle).unwrap();
    assert_eq!(d.len(), 1);
    assert!(d[0].message.contains("eps < delta"));
    let res = FLAT
        .replace("kind = \"torus\"", "kind = \"sphere\"")
        .replace("family = \"constant\"\nvalue = 1.0", "family = \"resonant\"\nalpha = -1.0\nbeta = 1.0");
    let d = validate_str(&res).unwrap();
    assert_eq!(d.len(), 1, "{d:?}");
    assert!(validate_str(FLAT).unwrap().is_empty());
}

#[test]
fn stage_without_table_is_diagnosed() {
    let d = validate_str(&FLAT.replace("[\"simulate\"]", "[\"simulate\", \"trap\"]")).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].path, "trap");
}

#[test]
fn reruns_reproduce_payloads() {
    // A short stochastic scenario: the trap ensemble draws from the seed.
    let src = std::fs::read_to_string(configs().join("sphere_pipeline.toml"))
        .unwrap()
        .replace("stages = [\"reduce\", \"orbits\", \"trap\"]", "stages = [\"reduce\", \"trap\"]");
    let ov = Overrides { horizon: Some(30), samples: Some(6), ..Default::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_source(&src, a.path(), &ov).unwrap();
    let mb = run_source(&src, b.path(), &ov).unwrap();
    assert_eq!(ma.files, mb.files);
    for f in &ma.files {
        let x = std::fs::read(a.path().join("sphere-affine").join(&f.path)).unwrap();
        let y = std::fs::read(b.path().join("sphere-affine").join(&f.path)).unwrap();
        assert_eq!(x, y, "{}", f.path);
    }
    let other = run_source(&src, b.path(), &Overrides { seed: Some(8), ..ov }).unwrap();
    let trap = |m: &gyrolab::cli::RunManifest| m.files.iter().find(|f| f.path == "trap/trap.json").unwrap().sha256.clone();
    assert_ne!(trap(&ma), trap(&other));
}

#[test]
fn overrides_from_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", FLAT);
    let out = dir.path().join("out");
    let st = bin()
        .args(["run", "--jobs", "1", "--seed", "42", "--tol", "1e-9", "--s", "0.2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let m = run_scenario(&cfg, &dir.path().join("plain")).unwrap();
    assert_eq!(m.seed, 1);
    let j: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("flat/manifest.json")).unwrap()).unwrap();
    assert_eq!(j["seed"], 42);
    assert_eq!(j["tolerances"]["scenario"], 1e-9);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("flat/simulate/summary.json")).unwrap()).unwrap();
    assert_eq!(s["s"], 0.2);
    let bad = bin().args(["run", "--annulus", "1.0", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
