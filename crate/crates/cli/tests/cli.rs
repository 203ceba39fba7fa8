use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vpb-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn vpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpb")).args(args).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn short_run(dir: &Path) -> PathBuf {
    let path = dir.join("short.toml");
    fs::write(
        &path,
        "[time]\ndt = 0.025\nt_end = 0.05\n[initial]\npreset = \"gaussian_bump\"\nx0 = [0.2, 0.0, 0.0]\namplitude = [0.05]\n[norms]\nw1p_every = 1\nmargin_samples = 16\n[output]\nsnapshots = true\n",
    )
    .unwrap();
    path
}

#[test]
fn verify_single_suite_passes_with_envelope() {
    let dir = scratch("verify");
    let out = vpb(&["verify", "--suite", "hopf", "--seed", "5", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&dir.join("verify.json"));
    assert_eq!(doc["tool"], "vpb");
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["seeds"]["scenario"], 5);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(doc["result"]["pass"], true);
    let checks = doc["result"]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["suite"] == "hopf"));
    assert_eq!(out.stdout, fs::read(dir.join("verify.json")).unwrap());
}

#[test]
fn verify_is_byte_identical_across_runs() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for d in [&a, &b] {
        let out = vpb(&["verify", "--suite", "wall,equilibrium", "--seed", "11", "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("verify.json")).unwrap(), fs::read(b.join("verify.json")).unwrap());
}

#[test]
fn seed_changes_the_config_hash() {
    let dir = scratch("hash");
    let d = dir.to_str().unwrap();
    vpb(&["poisson", "--seed", "1", "--out", d]);
    let one = json(&dir.join("poisson.json"))["config_hash"].clone();
    vpb(&["poisson", "--seed", "2", "--out", d]);
    let two = json(&dir.join("poisson.json"))["config_hash"].clone();
    assert_ne!(one, two);
}

#[test]
fn config_errors_exit_two() {
    let dir = scratch("config");
    let d = dir.to_str().unwrap();
    let bad = dir.join("bad.toml");
    fs::write(&bad, "species = 1\n[norms]\np = 7.0\nbeta = 0.9\n").unwrap();
    let out = vpb(&["verify", "--scenario", bad.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("norms.p") && err.contains("(3, 6)"), "{err}");
    assert!(err.contains("norms.beta"), "{err}");

    fs::write(&bad, "species = 1\n[mesh\nv_points = 8\n").unwrap();
    let out = vpb(&["verify", "--scenario", bad.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(vpb(&["verify", "--suite", "nope", "--out", d]).status.code(), Some(2));
    assert_eq!(vpb(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vpb(&["trace", "--x", "1,2"]).status.code(), Some(2));
    assert_eq!(vpb(&["poisson", "--threads", "0", "--out", d]).status.code(), Some(2));
    let missing = dir.join("missing.toml");
    assert_eq!(vpb(&["simulate", "--scenario", missing.to_str().unwrap(), "--out", d]).status.code(), Some(2));
}

#[test]
fn conductor_field_needs_the_unit_ball() {
    let dir = scratch("conductor");
    let sc = dir.join("e.toml");
    fs::write(&sc, "domain = \"ellipsoid(1.0, 0.8, 0.6)\"\n").unwrap();
    let out = vpb(&["trace", "--field", "conductor", "--scenario", sc.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = vpb(&["trace", "--scenario", sc.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let a = scratch("sim-a");
    let b = scratch("sim-b");
    let sc = short_run(&a);
    for d in [&a, &b] {
        let out = vpb(&["simulate", "--scenario", sc.to_str().unwrap(), "--threads", "1", "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["simulate.json", "diagnostics.csv", "density.csv", "field.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let diag = fs::read_to_string(a.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("step,t,mass_plus,"));
    assert_eq!(diag.lines().count(), 4);
    let doc = json(&a.join("simulate.json"));
    assert_eq!(doc["result"]["steps"], 2);
    assert!(doc["result"]["relative_mass_drift"][0].as_f64().unwrap().abs() < 1e-12);
    let density = fs::read_to_string(a.join("density.csv")).unwrap();
    assert!(density.starts_with("species,cell,vnode,f,x,y,z,vx,vy,vz\n"));
}

#[test]
fn trace_cycles_weights_and_poisson() {
    let dir = scratch("tools");
    let d = dir.to_str().unwrap();
    let out = vpb(&["trace", "--x", "0.2,0,0", "--v", "1,0.5,0", "--t", "2", "--field", "conductor", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&dir.join("trace.json"));
    assert_eq!(doc["result"]["exit"]["bounced"], true);
    assert!(fs::read_to_string(dir.join("trace.csv")).unwrap().starts_with("s,x,y,z,vx,vy,vz\n"));

    let out = vpb(&["cycles", "--t", "3", "--count", "20", "--l-max", "6", "--seed", "4", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&dir.join("cycles.json"));
    assert_eq!(doc["result"]["count"], 20);
    assert_eq!(doc["result"]["survival"][0], 1.0);
    assert!(doc["seeds"]["cycles"].is_u64());
    let csv = fs::read_to_string(dir.join("cycles.csv")).unwrap();
    assert!(csv.starts_with("cycle,l,t,x,y,z,vx,vy,vz,weight\n"));
    assert!(csv.lines().count() > 20);

    let out = vpb(&["weights", "--samples", "10", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.join("weights.csv")).unwrap().lines().count(), 11);

    for bc in ["dirichlet", "neumann"] {
        let out = vpb(&["poisson", "--bc", bc, "--source", "gaussian", "--resolution", "12", "--out", d]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let doc = json(&dir.join("poisson.json"));
        assert!(doc["result"]["residual"].as_f64().unwrap() < 1e-6);
        assert_eq!(doc["result"]["hopf"].is_object(), bc == "dirichlet");
    }
}
