use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const LAMINATE: &str = r#"
tasks = ["verify"]

[lattice]
basis = [[1.0, 0.0], [0.0, 1.0]]

[grid]
shape = [32, 8]

[[obstacle.pieces]]
q = [[-1.0, 0.0], [0.0, 0.0]]
translations = "range"

[load]
f = 1.0
"#;

const VIGDERGAUZ: &str = r#"
[lattice]
basis = [[2.0, 0.0], [0.0, 2.0]]

[grid]
shape = [32, 32]
centered = true

[[obstacle.pieces]]
q = [[-1.0, 0.0], [0.0, -1.0]]

[load]
target_theta = 0.4
"#;

fn einc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_einc")).args(args).env_remove("EINC_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("run.toml").display().to_string()
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, cmd: &str) -> Output {
        einc(&[cmd, "--config", &self.config(), "--out", self.out().to_str().unwrap()])
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out().join(name)).unwrap()).unwrap()
    }
}

fn checks(v: &Value) -> Vec<(String, bool)> {
    v["verification"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["name"].as_str().unwrap().to_string(), c["passed"].as_bool().unwrap()))
        .collect()
}

fn flip(path: &Path) {
    let mut bytes = fs::read(path).unwrap();
    let n = bytes.len();
    // The raster sits at the end of the file.
    let w = 32 * 8;
    for b in &mut bytes[n - w..] {
        *b = 255 - *b;
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn laminate_solve_then_verify_passes() {
    let run = Run::new(LAMINATE);
    let out = run.run("solve");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = run.json("summary.json");
    assert!(checks(&summary).iter().all(|(_, ok)| *ok), "{summary:#}");
    assert_eq!(summary["theta"]["predicted"].as_f64().unwrap(), 0.5);
    assert!((summary["theta"]["measured"].as_f64().unwrap() - 0.5).abs() <= 2.0 / 32.0);

    let out = run.run("verify");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = run.json("verify.json");
    let names: Vec<String> = checks(&v).into_iter().map(|(n, _)| n).collect();
    for want in ["complementarity", "coincident_mask", "labeling", "hessian_1", "necessary_condition", "load_balance"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
    assert!(checks(&v).iter().all(|(_, ok)| *ok));
}

#[test]
fn tampered_component_fails_verification() {
    let run = Run::new(LAMINATE);
    assert_eq!(code(&run.run("solve")), 0);
    flip(&run.out().join("component_1.pgm"));
    let out = run.run("verify");
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let failed: Vec<String> = checks(&run.json("verify.json")).into_iter().filter(|c| !c.1).map(|c| c.0).collect();
    assert!(failed.iter().any(|n| n == "labeling"));
    assert!(failed.iter().any(|n| n == "necessary_condition" || n == "load_balance" || n.starts_with("hessian")));
}

#[test]
fn verification_is_scale_covariant() {
    let run = Run::new(LAMINATE);
    assert_eq!(code(&run.run("solve")), 0);
    let base = checks(&run.json("summary.json"));
    for scale in ["0.25", "3.0"] {
        fs::write(run.dir.path().join("run.toml"), format!("{LAMINATE}\n[verify]\nscale = {scale}\n")).unwrap();
        let out = run.run("verify");
        assert_eq!(code(&out), 0, "scale {scale}: {}", stderr(&out));
        assert_eq!(checks(&run.json("verify.json")), base);
    }
    flip(&run.out().join("component_1.pgm"));
    assert_eq!(code(&run.run("verify")), 5);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = Run::new(VIGDERGAUZ);
    let b = Run::new(VIGDERGAUZ);
    assert_eq!(code(&a.run("solve")), 0);
    assert_eq!(code(&b.run("solve")), 0);
    for name in ["u.csv", "phi.csv", "coincident.pgm", "component_1.pgm", "inclusion.pgm", "summary.json"] {
        assert_eq!(fs::read(a.out().join(name)).unwrap(), fs::read(b.out().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn constant_obstacle_is_degenerate() {
    let run = Run::new(
        r#"
[lattice]
basis = [[1.0, 0.0], [0.0, 1.0]]
[grid]
shape = [8, 8]
[[obstacle.pieces]]
constant = 0.5
[load]
f = 1.0
"#,
    );
    let out = run.run("solve");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = run.json("summary.json");
    assert_eq!(s["theta"]["measured"].as_f64().unwrap(), 1.0);
    assert!(s["warnings"][0].as_str().unwrap().contains("degenerate"));
    let px = fs::read(run.out().join("coincident.pgm")).unwrap();
    assert!(px[px.len() - 64..].iter().all(|&p| p == 255));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let run = Run::new(&LAMINATE.replace("f = 1.0", "f = 1.0\ntarget_theta = 0.3"));
    let out = run.run("solve");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error: load:"), "{}", stderr(&out));

    let run = Run::new(&LAMINATE.replace("[[-1.0, 0.0], [0.0, 0.0]]", "[[-1.0, 0.3], [0.0, 0.0]]"));
    let out = run.run("solve");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("obstacle.pieces[0].q"), "{}", stderr(&out));

    let run = Run::new(&format!("{LAMINATE}\n[solver]\nsweep = \"spiral\"\n"));
    let out = run.run("solve");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("solver.sweep"), "{}", stderr(&out));
}

#[test]
fn solver_budget_exhaustion_exits_3() {
    let run = Run::new(&format!("{VIGDERGAUZ}\n[solver]\nmax_iters = 2\n").replace("target_theta = 0.4", "f = 1.0"));
    let out = run.run("solve");
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn bad_thread_override_exits_2() {
    let run = Run::new(LAMINATE);
    let out = Command::new(env!("CARGO_BIN_EXE_einc"))
        .args(["solve", "--config", &run.config(), "--out", run.out().to_str().unwrap()])
        .env("EINC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("EINC_THREADS"));
}

#[test]
fn unknown_export_format_exits_2() {
    let run = Run::new(LAMINATE);
    assert_eq!(code(&run.run("solve")), 0);
    let art = run.out().join("u.csv");
    let out = einc(&["export", "--artifact", art.to_str().unwrap(), "--format", "vtk", "--out", run.out().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown format"));
}

#[test]
fn exports_round_trip() {
    let run = Run::new(VIGDERGAUZ);
    assert_eq!(code(&run.run("solve")), 0);
    let out_dir = run.dir.path().join("export");
    let ex = |art: &Path, fmt: &str, dir: &Path| {
        let out = einc(&["export", "--artifact", art.to_str().unwrap(), "--format", fmt, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    };
    let u = run.out().join("u.csv");
    assert_eq!(fs::read(ex(&u, "csv", &out_dir)).unwrap(), fs::read(&u).unwrap());
    let mask = run.out().join("inclusion.pgm");
    let as_csv = ex(&mask, "csv", &out_dir);
    let back = ex(&as_csv, "pgm", &run.dir.path().join("again"));
    assert_eq!(fs::read(back).unwrap(), fs::read(&mask).unwrap());
    let summary = run.out().join("summary.json");
    assert_eq!(fs::read(ex(&summary, "json", &out_dir)).unwrap(), fs::read(&summary).unwrap());
}

const MATERIALS: &str = r#"
[homogenize]
fields = [[[1.0, 0.0], [0.0, 1.0]]]

[homogenize.materials]
kind = "conductivity"
a1 = [[4.0, 0.0], [0.0, 4.0]]
a2 = [[1.0, 0.0], [0.0, 1.0]]
"#;

#[test]
fn homogenize_reports_trace_bound_attainment() {
    let run = Run::new(&format!("{VIGDERGAUZ}{MATERIALS}"));
    let out = run.run("homogenize");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let h = &run.json("homogenize.json")["homogenization"];
    let tb = &h["trace_bounds"];
    assert!(tb["satisfied"].as_bool().unwrap());
    assert!(tb["b1_gap"].as_f64().unwrap() < 0.1, "{tb}");
    assert!(tb["b2_gap"].as_f64().unwrap() < 0.15, "{tb}");
    assert!(h["closed_vs_numeric"].as_f64().unwrap() < 0.05);
    assert!(h["bitter_crum"]["relative_error"].as_f64().unwrap() < 1e-2);
    let f = &h["fields"][0];
    assert!(f["gap"].as_f64().unwrap().abs() < 0.1, "{f}");
}

#[test]
fn equal_phases_give_zero_gaps() {
    let same = MATERIALS.replace("[[4.0, 0.0], [0.0, 4.0]]", "[[1.0, 0.0], [0.0, 1.0]]");
    let run = Run::new(&format!("{VIGDERGAUZ}{same}"));
    let out = run.run("homogenize");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let h = &run.json("homogenize.json")["homogenization"];
    let f = &h["fields"][0];
    assert_eq!(f["bound"].as_f64().unwrap(), 0.0);
    assert_eq!(f["gap"].as_f64().unwrap(), 0.0);
    assert_eq!(h["closed_vs_numeric"].as_f64().unwrap(), 0.0);
}

#[test]
fn upper_bound_for_stiffer_inclusion_exits_2() {
    let run = Run::new(&format!("{VIGDERGAUZ}{MATERIALS}").replace("[homogenize]\n", "[homogenize]\ndirection = \"upper\"\n"));
    let out = run.run("homogenize");
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("homogenize.fields[0]"), "{}", stderr(&out));
}

#[test]
fn homogenize_reads_a_stored_mask() {
    let run = Run::new(VIGDERGAUZ);
    assert_eq!(code(&run.run("solve")), 0);
    let cfg = format!("{VIGDERGAUZ}{MATERIALS}").replace("[homogenize]\n", "[homogenize]\nmask = \"out/inclusion.pgm\"\nnumeric = false\n");
    fs::write(run.dir.path().join("run.toml"), cfg).unwrap();
    let out = run.run("homogenize");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = run.json("homogenize.json");
    assert_eq!(v["mask"], "out/inclusion.pgm");
    let solved = run.json("summary.json")["theta"]["measured"].as_f64().unwrap();
    assert_eq!(v["homogenization"]["theta"].as_f64().unwrap(), solved);
    assert!(v["homogenization"].get("numeric").is_none());
}

#[test]
fn three_d_masks_are_sliced() {
    let run = Run::new(
        r#"
[lattice]
basis = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]
[grid]
shape = [12, 12, 12]
centered = true
[[obstacle.pieces]]
q = [[-3.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, -1.0]]
[load]
target_theta = 0.37
"#,
    );
    let out = run.run("solve");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let index: Value = run.json("inclusion.json");
    assert_eq!(index["shape"], serde_json::json!([12, 12, 12]));
    assert_eq!(index["slices"].as_array().unwrap().len(), 12);
    assert!(run.out().join("inclusion_z011.pgm").exists());

    let dir = run.dir.path().join("export");
    let ex = |art: PathBuf, fmt: &str| {
        let out = einc(&["export", "--artifact", art.to_str().unwrap(), "--format", fmt, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    };
    let csv = ex(run.out().join("inclusion.json"), "csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("i1,i2,i3,value\n"));
    let inside = text.lines().skip(1).filter(|l| l.ends_with(",1.0000000000000000e0")).count();
    let theta = run.json("summary.json")["theta"]["measured"].as_f64().unwrap();
    assert!((inside as f64 / 1728.0 - theta).abs() < 1e-12);
    let back = ex(csv, "pgm");
    assert!(back.ends_with("inclusion.json"));
    for k in [0, 6, 11] {
        let name = format!("inclusion_z{k:03}.pgm");
        assert_eq!(fs::read(dir.join(&name)).unwrap(), fs::read(run.out().join(&name)).unwrap());
    }
}
