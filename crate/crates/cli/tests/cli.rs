use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FAMILY: &str = "builtin:cycle-family";

fn run(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_planefold"));
    cmd.args(args).arg("--out").arg(out).env_remove("PLANEFOLD_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Value {
    let o = run(out, args, &[]);
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).expect("stdout is JSON");
    assert_eq!(v["schema"], 1);
    v
}

fn code(args: &[&str]) -> i32 {
    let dir = TempDir::new().unwrap();
    run(dir.path(), args, &[]).status.code().expect("exit code")
}

fn num(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn analyze_reference_points() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "builtin:constant", "--cmd", "analyze", "--seed", "0,0,0"]);
    let p = &v["result"]["points"][0];
    assert_eq!(num(&p["k1"]), 0.0);
    assert_eq!(num(&p["k2"]), 0.0);
    assert_eq!(p["umbilic"], true);
    assert_eq!(num(&p["integrability"]), 0.0);

    let v = ok(dir.path(), &["-f", "builtin:radial", "--cmd", "analyze", "--seed", "2,0,0"]);
    let p = &v["result"]["points"][0];
    assert!((num(&p["k1"]) + 0.5).abs() < 1e-12);
    assert!((num(&p["k2"]) + 0.5).abs() < 1e-12);

    let v = ok(
        dir.path(),
        &["-f", FAMILY, "--params", "lambda=0.1,a=0.2,eps=0.5", "--cmd", "analyze", "--seed", "1,0,0"],
    );
    let p = &v["result"]["points"][0];
    assert!((num(&p["k1"]) + 1.0).abs() < 1e-12);
    assert!((num(&p["k2"]) - 0.1).abs() < 1e-12);
}

#[test]
fn report_embeds_config_and_is_written() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "builtin:radial", "--cmd", "analyze", "--seed", "1,2,3", "--tol", "1e-9"]);
    assert_eq!(v["command"], "analyze");
    assert_eq!(v["config"]["tol"], 1e-9);
    assert_eq!(v["config"]["seeds"][0][2], 3.0);
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("analyze.json")).unwrap()).unwrap();
    assert_eq!(file, v);
}

#[test]
fn inline_field_with_parameters() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "(0, 0, c)", "--params", "c=2", "--cmd", "analyze", "--seed", "1,1,1"]);
    assert_eq!(v["result"]["points"][0]["flat"], true);
}

#[test]
fn traces_spiral_onto_the_cycle() {
    let dir = TempDir::new().unwrap();
    let v = ok(
        dir.path(),
        &[
            "-f", FAMILY, "--params", "lambda=0.1,a=0.2,eps=0.5", "--cmd", "trace", "--orient", "0,1,0",
            "--seed", "1.2,0,0", "--seed", "0.8,0,0", "--seed", "1.1,0,0.2", "--arc", "60",
        ],
    );
    let lines = v["result"]["lines"].as_array().unwrap();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let end: Vec<f64> = line["end"].as_array().unwrap().iter().map(num).collect();
        let r = end[0].hypot(end[1]);
        assert!((r - 1.0).abs() < 5e-3 && end[2].abs() < 0.15, "line {i} ends at {end:?}");
        let csv = std::fs::read_to_string(dir.path().join(format!("trace_{i}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("s,x,y,z"));
        assert_eq!(csv.lines().count() - 1, line["points"].as_u64().unwrap() as usize);
    }
}

#[test]
fn constant_field_traces_straight_lines() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "builtin:constant", "--cmd", "trace", "--seed", "0,0,0", "--arc", "5"]);
    let csv = std::fs::read_to_string(dir.path().join("trace_0.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let c: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(c[3].abs() < 1e-12);
        assert!((c[1].hypot(c[2]) - c[0]).abs() < 1e-9);
    }
    assert!((num(&v["result"]["lines"][0]["length"]) - 5.0).abs() < 1e-9);
}

#[test]
fn torus_traces_stay_on_their_torus() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["-f", "builtin:tori", "--cmd", "trace", "--seed", "2.5,0,0", "--seed", "2,0.3,0.2", "--arc", "10"]);
    for (i, rho) in [0.5f64, (0.2f64 * 0.2 + (2f64.hypot(0.3) - 2.0).powi(2)).sqrt()].iter().enumerate() {
        let csv = std::fs::read_to_string(dir.path().join(format!("trace_{i}.csv"))).unwrap();
        for row in csv.lines().skip(1) {
            let c: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
            let d = ((c[1].hypot(c[2]) - 2.0).powi(2) + c[3] * c[3]).sqrt();
            assert!((d - rho).abs() < 1e-6, "trace {i}: {d} vs {rho}");
        }
    }
}

#[test]
fn cycle_classification_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let base = ["-f", FAMILY, "--cmd", "cycle", "--seed", "1,0,0", "--orient", "0,1,0", "--params"];
    for (params, label) in [
        ("lambda=0.1,a=0.2,eps=0.5", "hyperbolic-node"),
        ("lambda=-0.1,a=0.2,eps=0.5", "hyperbolic-saddle"),
        ("lambda=0.2,a=0.2,eps=0.5", "semi-hyperbolic"),
    ] {
        let mut args = base.to_vec();
        args.push(params);
        let v = ok(dir.path(), &args);
        let c = &v["result"]["cycles"][0];
        assert_eq!(c["return_map"]["classification"], label, "{params}");
        let scale = c["return_map"]["eigenvalues"]
            .as_array()
            .unwrap()
            .iter()
            .map(|z| num(&z[0]).hypot(num(&z[1])))
            .fold(1.0, f64::max);
        assert!(num(&c["fd_oracle"]["residual"]) / scale < 5e-3, "{params}");
        assert!((num(&c["cycle"]["length"]) - std::f64::consts::TAU).abs() < 1e-8);
        assert!(c["controllability"].is_null());
    }
    assert!(dir.path().join("cycle_0.csv").is_file());
    assert!(dir.path().join("chart_0.json").is_file());
}

#[test]
fn torus_meridian_is_nonhyperbolic() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "builtin:tori", "--cmd", "cycle", "--seed", "2.5,0,0", "--orient", "0,0,1"]);
    let c = &v["result"]["cycles"][0];
    assert_eq!(c["return_map"]["classification"], "nonhyperbolic");
    let closed = &c["integrable_closed_form"]["monodromy"];
    assert!((num(&closed[0]) - 1.0).abs() < 1e-6);
}

#[test]
fn twisted_cycle_reports_controllability() {
    let dir = TempDir::new().unwrap();
    let v = ok(dir.path(), &["-f", "builtin:twisted", "--cmd", "cycle", "--seed", "1,0,0"]);
    let ctl = &v["result"]["cycles"][0]["controllability"];
    assert_eq!(ctl["rank_depth0"], 3);
    assert_eq!(ctl["rank_depth1"], 4);
    assert_eq!(ctl["controllable"], true);
}

#[test]
fn hyperbolize_certifies_or_passes_through() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["-f", FAMILY, "--cmd", "hyperbolize", "--seed", "1,0,0", "--orient", "0,1,0", "--params"];
    args.push("lambda=0.1,a=0,eps=0.5");
    let r = &ok(dir.path(), &args)["result"];
    assert_eq!(r["status"], "certified");
    assert!(num(&r["spec"]["epsilon"]) > 0.0);
    assert_ne!(r["certified"]["classification"], "semi-hyperbolic");

    *args.last_mut().unwrap() = "lambda=0.1,a=0.2,eps=0.5";
    let r = &ok(dir.path(), &args)["result"];
    assert_eq!(r["status"], "certified");
    assert_eq!(num(&r["spec"]["epsilon"]), 0.0);
}

#[test]
fn hyperbolize_exhausted_exits_4_with_report() {
    let dir = TempDir::new().unwrap();
    let o = run(
        dir.path(),
        &["-f", "builtin:tori", "--cmd", "hyperbolize", "--seed", "2.5,0,0", "--orient", "0,0,1", "--budget", "1e-9"],
        &[],
    );
    assert_eq!(o.status.code(), Some(4));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["status"], "search_exhausted");
}

#[test]
fn sweep_rows_follow_the_grid() {
    let dir = TempDir::new().unwrap();
    let v = ok(
        dir.path(),
        &[
            "-f", FAMILY, "--cmd", "sweep", "--seed", "1,0,0", "--orient", "0,1,0",
            "--params", "lambda=-0.1:0.3:5,a=0.1,eps=0.5",
        ],
    );
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(row["status"], "ok");
        let lambda = num(&row["params"]["lambda"]);
        let semi = (lambda - 0.1).abs() < 1e-12 || lambda.abs() < 1e-12;
        assert_eq!(row["classification"] == "semi-hyperbolic", semi, "lambda {lambda}");
    }
}

#[test]
fn thread_cap_is_honoured() {
    let dir = TempDir::new().unwrap();
    let args = ["-f", "builtin:radial", "--cmd", "analyze", "--seed", "1,0,0"];
    let o = run(dir.path(), &args, &[("PLANEFOLD_THREADS", "1")]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config"]["threads"], 1);
    assert_eq!(run(dir.path(), &args, &[("PLANEFOLD_THREADS", "zero")]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["-f", "builtin:nope", "--cmd", "analyze", "--seed", "0,0,0"]), 2);
    assert_eq!(code(&["-f", "(x, y", "--cmd", "analyze", "--seed", "0,0,0"]), 2);
    assert_eq!(code(&["-f", "builtin:radial", "--cmd", "analyze", "--seed", "1,2"]), 2);
    assert_eq!(code(&["-f", "builtin:radial", "--cmd", "analyze"]), 2);
    assert_eq!(code(&["-f", "builtin:radial", "--cmd", "analyze", "--seed", "0,0,0", "--foliation", "3"]), 2);
    assert_eq!(code(&["-f", "builtin:radial", "--cmd", "analyze", "--seed", "0,0,0", "--tol", "-1"]), 2);
    assert_eq!(code(&["-f", FAMILY, "--cmd", "cycle", "--seed", "1,0,0", "--params", "lambda=0:1:3"]), 2);
    assert_eq!(code(&["-f", "builtin:constant", "--cmd", "cycle", "--seed", "0,0,0"]), 3);
}
