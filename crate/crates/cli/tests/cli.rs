//! End-to-end CLI checks: command wiring, artifact emission, config error
//! reporting, and byte-level determinism of the data outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_specfun")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("specfun-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Light grids keep the CLI suite quick; identities are exercised at scale by
/// the core acceptance target.
fn write_light_config(dir: &Path, name: &str, potential: &str, boundary: &str) -> PathBuf {
    let path = dir.join(name);
    let body = format!(
        r#"{{
  "potential": {potential},
  "boundary": {boundary},
  "grids": {{ "x_max": 1.0, "h": 0.002, "rho_max": 60.0, "d_rho": 0.05, "sigma": 0.5, "mollifier_n": 16 }},
  "rho_values": [0.5, 2.0]
}}"#
    );
    fs::write(&path, body).unwrap();
    path
}

const Q10: &str = r#"{ "q": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]] }"#;

#[test]
fn parseval_free_runs_and_is_deterministic() {
    let dir = tmp_dir("pf");
    let cfg = write_light_config(&dir, "cfg.json", r#"{ "family": "zero" }"#, Q10);
    let run = |out: &Path| {
        let st = Command::new(bin())
            .args(["parseval", "--theorem", "free"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    };
    let (o1, o2) = (dir.join("a"), dir.join("b"));
    run(&o1);
    run(&o2);
    for f in ["report.json", "report.txt"] {
        let a = fs::read(o1.join(f)).unwrap();
        let b = fs::read(o2.join(f)).unwrap();
        assert_eq!(a, b, "{f} must be byte-identical across runs");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o1.join("report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["pass"], serde_json::Value::Bool(true));
    assert!(o1.join("manifest.json").exists());
}

#[test]
fn kernel_command_on_commuting_potential() {
    let dir = tmp_dir("kc");
    let cfg = write_light_config(
        &dir,
        "cfg.json",
        r#"{ "family": "commuting_bump", "amp_a": [0.3, 0.0], "amp_b": [0.2, 0.0], "center": 0.5, "half_width": 0.4 }"#,
        Q10,
    );
    let out = dir.join("out");
    let st = Command::new(bin())
        .args(["kernel", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    for f in ["kernel.csv", "trace_j.csv", "trace_l.csv", "report.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    // commuting class: the sup-norm residual entry must pass its 1e-8 budget
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let entries = report[0]["residuals"].as_array().unwrap();
    let sup = entries
        .iter()
        .find(|e| e["what"].as_str().unwrap().contains("commuting"))
        .expect("sup-norm entry");
    assert_eq!(sup["pass"], serde_json::Value::Bool(true));
}

#[test]
fn solve_emits_solution_grids() {
    let dir = tmp_dir("sv");
    let cfg = write_light_config(
        &dir,
        "cfg.json",
        r#"{ "family": "gaussian_bump", "entry": "p21", "amplitude": [0.5, 0.0], "center": 0.5, "width": 0.2 }"#,
        r#"{ "mu": [0.1, 0.0] }"#,
    );
    let out = dir.join("out");
    let st = Command::new(bin())
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    let phi = fs::read_to_string(out.join("solution_phi_0.csv")).unwrap();
    // x_max/h + 1 data rows plus the header
    assert_eq!(phi.lines().count(), 502);
    assert!(phi.lines().next().unwrap().starts_with("x,re11,im11"));
    assert!(out.join("solution_psi_1.csv").exists());
}

#[test]
fn expand_free_emits_reconstruction() {
    let dir = tmp_dir("ex");
    let cfg = write_light_config(&dir, "cfg.json", r#"{ "family": "zero" }"#, Q10);
    let out = dir.join("out");
    let st = Command::new(bin())
        .args(["expand", "--mode", "free", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    assert!(out.join("reconstruction.csv").exists());
}

#[test]
fn config_errors_name_the_offender() {
    let dir = tmp_dir("er");
    // missing boundary entirely
    let path = dir.join("bad.json");
    fs::write(
        &path,
        r#"{
  "potential": { "family": "zero" },
  "boundary": {},
  "grids": { "x_max": 1.0, "rho_max": 10.0, "d_rho": 0.1, "sigma": 0.5 }
}"#,
    )
    .unwrap();
    let st = Command::new(bin())
        .args(["solve", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("boundary"), "stderr: {err}");

    // inadmissible projector
    let path2 = dir.join("badq.json");
    fs::write(
        &path2,
        r#"{
  "potential": { "family": "zero" },
  "boundary": { "q": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]] },
  "grids": { "x_max": 1.0, "rho_max": 10.0, "d_rho": 0.1, "sigma": 0.5 }
}"#,
    )
    .unwrap();
    let st = Command::new(bin())
        .args(["solve", "--config"])
        .arg(&path2)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("config error"), "stderr: {err}");
}

#[test]
fn parseval_theorem2_pipeline_light() {
    let dir = tmp_dir("p2");
    let cfg = write_light_config(
        &dir,
        "cfg.json",
        r#"{ "family": "gaussian_bump", "entry": "p21", "amplitude": [0.4, 0.0], "center": 0.5, "width": 0.15 }"#,
        Q10,
    );
    let out = dir.join("out");
    let st = Command::new(bin())
        .args(["parseval", "--theorem", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    assert!(out.join("density.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["pass"], serde_json::Value::Bool(true));
    let density = fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(density.lines().next().unwrap().starts_with("rho,re11"));
    // symmetric grid: 2*(60/0.05)+1 nodes plus the header
    assert_eq!(density.lines().count(), 2402);
}
