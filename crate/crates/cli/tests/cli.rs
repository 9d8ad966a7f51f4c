use std::path::{Path, PathBuf};
use std::process::Command;

use hsphere::energy::alpha_energy;
use hsphere::{DomainMesh, FunctionalParams, MapState, TargetManifold};
use serde_json::Value;
use tempfile::TempDir;

const S2: &str = r#"
[mesh]
subdivisions = 2
[target]
kind = "round_sphere"
n = 2
radius = 1.0
"#;

const S3: &str = r#"
[mesh]
subdivisions = 2
[target]
kind = "round_sphere"
n = 3
radius = 1.0
[params]
alpha = 1.0625
lambda = 0.0
"#;

struct Run {
    code: i32,
    out: PathBuf,
    stderr: String,
}

impl Run {
    fn report(&self) -> Value {
        read_json(&self.out.join("report.json"))
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn run_in(dir: &Path, name: &str, cmd: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(name);
    let o = Command::new(env!("CARGO_BIN_EXE_hsphere"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--quiet")
        .args(extra)
        .output()
        .unwrap();
    Run { code: o.status.code().unwrap(), out, stderr: String::from_utf8_lossy(&o.stderr).into() }
}

#[test]
fn solve_from_constant_map_is_immediately_converged() {
    let d = TempDir::new().unwrap();
    let r = run_in(d.path(), "c", "solve", &format!("{S2}\n[init]\nkind = \"constant\"\n"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report();
    assert_eq!(rep["status"], "ok");
    assert_eq!(rep["result"]["converged"], true);
    assert_eq!(rep["result"]["descent"]["iterations"], 0);
    assert!(r.out.join("state.txt").is_file() && r.out.join("trace.csv").is_file());
    assert!(rep["config"]["target"]["kind"] == "round_sphere", "resolved config embedded");
    assert!(r.out.join("metadata.json").is_file());
}

#[test]
fn solve_on_s3_converges_and_refines() {
    let d = TempDir::new().unwrap();
    let cfg = format!("{S3}\n[init]\nkind = \"perturbed\"\namplitude = 0.1\n[solve]\nrefine = true\n");
    let r = run_in(d.path(), "s", "solve", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report();
    assert!(rep["result"]["newton"]["grad_norm"].as_f64().unwrap() < 1e-8);
    let e = rep["result"]["energies"]["dirichlet"].as_f64().unwrap();
    assert!((e - 4.0 * std::f64::consts::PI).abs() < 0.01 * 4.0 * std::f64::consts::PI, "{e}");
}

#[test]
fn scan_lambda_frozen_map_matches_the_comparison_identity() {
    let d = TempDir::new().unwrap();
    let cfg = format!(
        "{S3}\n[form]\nkind = \"volume\"\nscale = 0.7\n[init]\nkind = \"perturbed\"\namplitude = 0.2\n\
         [scan]\nfamily = \"init\"\nalphas = [1.0, 1.2]\nlambdas = [0.5, 1.0, 2.0, 3.0, 5.0]\n"
    );
    let r = run_in(d.path(), "scan", "scan-lambda", &cfg, &["--seed", "11"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(r.out.join("scan.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);

    // recompute E_α of the same seeded state through the library
    let state = run_in(d.path(), "exp", "mesh-export", &cfg, &["--seed", "11"]);
    assert_eq!(state.code, 0, "{}", state.stderr);
    let mesh = DomainMesh::icosphere(2).unwrap();
    let u: MapState = hsphere::io::load_state(state.out.join("state.txt"), &mesh).unwrap();
    assert!(u.is_on(&TargetManifold::round_sphere(3, 1.0).unwrap()));
    for alpha in [1.0, 1.2] {
        let ea = alpha_energy(&mesh, &u, &FunctionalParams::new(alpha, 0.0, 1.0).unwrap());
        let sub: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] == alpha).collect();
        for w in sub.windows(2) {
            let (l1, r1, l2, r2) = (w[0][1], w[0][3], w[1][1], w[1][3]);
            let expected = ea * (1.0 / l2 - 1.0 / l1);
            assert!(((r2 - r1) - expected).abs() <= 1e-12 * expected.abs().max(r1.abs()), "{alpha}: {} vs {expected}", r2 - r1);
            assert!(r2 <= r1);
        }
    }
}

#[test]
fn diagnose_on_stored_state_has_all_blocks() {
    let d = TempDir::new().unwrap();
    let cfg = format!("{S3}\n[init]\nkind = \"perturbed\"\namplitude = 0.1\n");
    let s = run_in(d.path(), "s", "solve", &cfg, &[]);
    assert_eq!(s.code, 0, "{}", s.stderr);
    let path = s.out.join("state.txt");
    let cfg2 = format!("{S3}\n[init]\nkind = \"file\"\npath = {:?}\n", path.to_str().unwrap());
    let r = run_in(d.path(), "d", "diagnose", &cfg2, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let res = &r.report()["result"];
    for block in ["conformality", "pohozaev", "balancing", "energy_identity"] {
        assert!(!res[block].is_null(), "missing {block}");
    }
    assert_eq!(res["pohozaev"].as_array().unwrap().len(), 3);
    assert!(r.out.join("pohozaev.csv").is_file());
    assert!(res["conformality"]["hopf"].as_f64().unwrap() < 0.05);
}

#[test]
fn index_and_bomega_commands() {
    let d = TempDir::new().unwrap();
    let cfg = format!("{S3}\n[mesh]\nsubdivisions = 3\n").replacen("[mesh]\nsubdivisions = 2\n", "", 1);
    let cfg = format!("{cfg}\n[init]\nkind = \"perturbed\"\namplitude = 0.1\n[solve]\nrefine = true\n");
    let s = run_in(d.path(), "s", "solve", &cfg, &[]);
    assert_eq!(s.code, 0, "{}", s.stderr);
    let path = s.out.join("state.txt");
    let cfg2 = cfg.replace("kind = \"perturbed\"\namplitude = 0.1", &format!("kind = \"file\"\npath = {:?}", path.to_str().unwrap()));
    let i = run_in(d.path(), "i", "index", &cfg2, &[]);
    assert_eq!(i.code, 0, "{}", i.stderr);
    assert_eq!(i.report()["result"]["spectrum"]["morse_index"], 1);
    let b = run_in(d.path(), "b", "bomega", &cfg2, &[]);
    assert_eq!(b.code, 0, "{}", b.stderr);
    assert_eq!(b.report()["result"]["b_omega_le_morse"], true);
}

#[test]
fn mesh_export_state_round_trips() {
    let d = TempDir::new().unwrap();
    let r = run_in(d.path(), "m", "mesh-export", S2, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mesh = DomainMesh::icosphere(2).unwrap();
    let t = TargetManifold::round_sphere(2, 1.0).unwrap();
    let u = hsphere::io::load_state(r.out.join("state.txt"), &mesh).unwrap();
    assert_eq!(u, MapState::identity(&mesh, &t).unwrap());
    let obj = std::fs::read_to_string(r.out.join("mesh.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), mesh.num_triangles());
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let d = TempDir::new().unwrap();
    let cfg = format!("{S3}\n[init]\nkind = \"perturbed\"\namplitude = 0.1\n");
    let a = run_in(d.path(), "a", "solve", &cfg, &["--seed", "4", "--threads", "1"]);
    let b = run_in(d.path(), "b", "solve", &cfg, &["--seed", "4", "--threads", "3"]);
    let c = run_in(d.path(), "c", "solve", &cfg, &["--seed", "5"]);
    for r in [&a, &b, &c] {
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    let read = |r: &Run, f: &str| std::fs::read(r.out.join(f)).unwrap();
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));
    assert_eq!(read(&a, "state.txt"), read(&b, "state.txt"));
    assert_ne!(read(&a, "state.txt"), read(&c, "state.txt"));
    assert_eq!(a.report()["config"]["seed"], 4);
}

#[test]
fn expression_form_matches_builtin_volume_form() {
    let d = TempDir::new().unwrap();
    let flat = "[mesh]\nsubdivisions = 2\n[target]\nkind = \"flat_euclidean\"\ndim = 3\n[init]\nkind = \"perturbed\"\namplitude = 0.3\n";
    let builtin = format!("{flat}[form]\nkind = \"volume\"\nscale = 1.5\n");
    let expr = format!(
        "{flat}[form]\nkind = \"expression\"\n\
         [[form.entries]]\ni = 1\nj = 2\nexpr = \"0.5 * y0\"\n\
         [[form.entries]]\ni = 0\nj = 2\nexpr = \"-0.5 * y1\"\n\
         [[form.entries]]\ni = 0\nj = 1\nexpr = \"0.5 * y2\"\n"
    );
    let a = run_in(d.path(), "a", "index", &builtin, &[]);
    let b = run_in(d.path(), "b", "index", &expr, &[]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(b.code, 0, "{}", b.stderr);
    let e = |r: &Run| r.report()["result"]["energies"]["total"].as_f64().unwrap();
    assert!((e(&a) - e(&b)).abs() < 1e-12 * e(&a).abs(), "{} {}", e(&a), e(&b));
    let g = |r: &Run| r.report()["result"]["grad_norm"].as_f64().unwrap();
    assert!((g(&a) - g(&b)).abs() < 1e-6 * g(&a), "{} {}", g(&a), g(&b));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    let code = |name: &str, cmd: &str, cfg: &str| {
        let r = run_in(p, name, cmd, cfg, &[]);
        let err: Value = serde_json::from_str(r.stderr.trim()).unwrap_or(Value::Null);
        (r.code, err["code"].as_i64())
    };
    assert_eq!(code("syntax", "solve", "[mesh\n"), (2, Some(2)));
    assert_eq!(code("unknown", "solve", &format!("{S2}\nbogus = 1\n")), (2, Some(2)));
    assert_eq!(code("subdiv", "solve", &S2.replace("subdivisions = 2", "subdivisions = 9")), (2, Some(2)));
    assert_eq!(code("alpha", "solve", &format!("{S2}\n[params]\nalpha = 0.5\n")), (2, Some(2)));
    let bad_expr = format!("{S2}\n[form]\nkind = \"expression\"\n[[form.entries]]\ni = 0\nj = 1\nexpr = \"y0 +\"\n");
    assert_eq!(code("expr", "solve", &bad_expr), (2, Some(2)));
    let missing = format!("{S2}\n[init]\nkind = \"file\"\npath = \"/nonexistent/state.txt\"\n");
    assert_eq!(code("missing", "solve", &missing), (4, Some(4)));

    // state from a different mesh
    let m = run_in(p, "m3", "mesh-export", &S2.replace("subdivisions = 2", "subdivisions = 1"), &[]);
    assert_eq!(m.code, 0);
    let mism = format!("{S2}\n[init]\nkind = \"file\"\npath = {:?}\n", m.out.join("state.txt").to_str().unwrap());
    assert_eq!(code("mism", "solve", &mism), (4, Some(4)));

    // solver failure still writes the report
    let capped = format!("{S3}\n[init]\nkind = \"perturbed\"\namplitude = 0.1\n[descent]\nmax_iters = 2\n");
    let r = run_in(p, "capped", "solve", &capped, &[]);
    assert_eq!(r.code, 3);
    assert_eq!(r.report()["status"], "solver");

    let o = Command::new(env!("CARGO_BIN_EXE_hsphere"))
        .args(["solve", "--config", "/nonexistent.toml", "--quiet", "--out"])
        .arg(p.join("x"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
}
