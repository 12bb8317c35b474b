use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rotorbit"));
    c.env_remove("ROTORBIT_OUTPUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SPHERE: &str = r#"{
  "schema_version": 1,
  "n": 2,
  "q": "rotation:[1]",
  "hamiltonian": {"kind": "sphere"},
  "period": "2*pi",
  "discretization": {"k_max": 8, "samples": 64}
}"#;

const ELLIPSOID: &str = r#"{
  "schema_version": 1,
  "n": 2,
  "q": "identity",
  "hamiltonian": {"kind": "ellipsoid", "axes": [1.0, 1.06, 1.12, 1.18]},
  "period": 6.283185307179586,
  "discretization": {"k_max": 12, "samples": 96}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn solve_into(dir: &Path, spec: &str, out: &str) -> Output {
    let spec_path = write(dir, "spec_in.json", spec);
    let out_path = dir.join(out);
    run(&["solve", &spec_path, "-o", out_path.to_str().unwrap()])
}

#[test]
fn solve_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve_into(dir.path(), ELLIPSOID, "out");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["report.json", "run_info.json", "spec.json", "orbits/orbit_00.csv", "loops/loop_00.csv", "raw/orbit_00.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "completed");
    assert!(report["certificate"]["count"].as_u64().unwrap() >= 2);
    assert!(report["tolerances"]["shooting"].is_number());
    let v = run(&["verify", out.to_str().unwrap()]);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));
    let vr: serde_json::Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(vr["passed"], true);
}

#[test]
fn report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into(dir.path(), SPHERE, "a")), 0);
    assert_eq!(code(&solve_into(dir.path(), SPHERE, "b")), 0);
    let a = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);
    let ca = std::fs::read(dir.path().join("a/orbits/orbit_00.csv")).unwrap();
    let cb = std::fs::read(dir.path().join("b/orbits/orbit_00.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn corrupted_sample_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into(dir.path(), SPHERE, "out")), 0);
    let csv = dir.path().join("out/orbits/orbit_00.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
    let v: f64 = fields[1].parse().unwrap();
    fields[1] = format!("{:e}", v + 1e-3);
    lines[5] = fields.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let o = run(&["verify", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let vr: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let first = &vr["orbits"][0];
    assert_eq!(first["passed"], false);
    assert!(first["trajectory_deviation"].as_f64().unwrap() > 1e-4);
}

#[test]
fn foreign_orbit_on_wrong_level_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into(dir.path(), SPHERE, "out")), 0);
    // a circle of radius 1.5 is a genuine orbit of the round flow, on the wrong level
    let csv = dir.path().join("out/orbits/orbit_00.csv");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let q = report["pinch"]["q"].as_f64().unwrap();
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count() - 1;
    let n_s = rows - 1;
    let r: f64 = 1.5;
    // 𝓗 = |z|^q/q turns a circle of radius r at speed r^(q−2); period for one turn of e^{iθ}
    let speed = r.powf(q - 2.0);
    let period = 1.0 / speed;
    let mut out = String::from("t,z1,z2,z3,z4\n");
    for m in 0..=n_s {
        let t = period * m as f64 / n_s as f64;
        let phi = speed * t;
        // plane 0 in (z1, z3): z(t) = r (cos φ, ·, −sin φ, ·) under J = [[0, I], [−I, 0]]
        out += &format!("{:e},{:e},0e0,{:e},0e0\n", t, r * phi.cos(), -r * phi.sin());
    }
    std::fs::write(&csv, out).unwrap();
    let o = run(&["verify", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let vr: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let first = &vr["orbits"][0];
    assert!(first["normalization_defect"].as_f64().unwrap() > 0.1);
    assert!(first["shooting_residual"].as_f64().unwrap() < 1e-8, "{first}");
    let failures = first["failures"].to_string();
    assert!(failures.contains("normalized level"), "{failures}");
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ not json");
    assert_eq!(code(&run(&["solve", &bad])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["solve", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["verify", dir.path().join("empty").to_str().unwrap()])), 2);
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(code(&run(&["verify", dir.path().join("empty").to_str().unwrap()])), 2);
    let non_sp = write(dir.path(), "m.csv", "1,0\n0,2\n");
    assert_eq!(code(&run(&["normal-form", &non_sp])), 2);
    let bad_q = SPHERE.replace("\"rotation:[1]\"", "[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,2]]");
    let p = write(dir.path(), "badq.json", &bad_q);
    assert_eq!(code(&run(&["solve", &p])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn normal_form_presets() {
    let o = run(&["normal-form", "identity", "--n", "2"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["theta"].as_array().unwrap().iter().all(|t| t.as_f64() == Some(0.0)));
    let o = run(&["normal-form", "rotation:[pi/3]"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let theta = v["theta"][0].as_f64().unwrap();
    assert!((theta - std::f64::consts::FRAC_PI_3).abs() <= 1e-12);
}

#[test]
fn unpinched_surface_solves_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ELLIPSOID.replace("[1.0, 1.06, 1.12, 1.18]", "[1.0, 1.2, 1.3, 1.6]");
    let spec_path = write(dir.path(), "s.json", &spec);
    let p = run(&["pinch", &spec_path, "--trials", "50"]);
    assert_eq!(code(&p), 0);
    let pv: serde_json::Value = serde_json::from_slice(&p.stdout).unwrap();
    assert_eq!(pv["pinched"], false);
    let o = solve_into(dir.path(), &spec, "out");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["pinch"]["pinched"], false);
    assert!(report["warnings"][0].as_str().unwrap().contains("not pinched"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = write(dir.path(), "s.json", SPHERE);
    let target = dir.path().join("from_env");
    let o = bin()
        .args(["solve", &spec_path])
        .env("ROTORBIT_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(target.join("report.json").exists());
}
