use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn thermonet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermonet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = thermonet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Column of a results file by name.
fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let c = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(c).unwrap().parse().unwrap()).collect()
}

fn single_pipe_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("pipe.csv");
    let mut text = String::from("time,h_up,T_up,T_amb\n");
    for k in 0..1200 {
        let t = k as f64;
        let h = 1.02 + 0.01 * (t / 150.0).sin();
        let tin = if k < 100 { 20.0 } else { 50.0 + 5.0 * (t / 90.0).sin() };
        text.push_str(&format!("{t},{h},{tin},20\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn compare_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let net = data("three_path.toml");
    let scen = data("three_path_scenario.csv");
    ok(&["simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&out)]);
    let metrics = dir.path().join("m.json");
    let text = ok(&["compare", s(&out), s(&out), "--out", s(&metrics)]);
    let overall = text.lines().find(|l| l.starts_with("overall")).unwrap();
    let fields: Vec<f64> = overall.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(fields, vec![0.0, 0.0]);
    let json = std::fs::read_to_string(&metrics).unwrap();
    assert!(json.contains("\"mean_relative_error\": 0.0"));
}

#[test]
fn full_order_reduction_reproduces_full_model() {
    let dir = tempfile::tempdir().unwrap();
    let net = data("single_pipe.toml");
    let scen = single_pipe_scenario(dir.path());
    let rom = dir.path().join("rom.json");
    let text = ok(&["reduce", "--network", s(&net), "--link", "p", "--order", "40", "--out", s(&rom)]);
    assert!(text.contains("order 40 of 40"), "{text}");
    assert!(rom.with_extension("json.meta.json").exists());

    let fom = dir.path().join("fom.csv");
    let red = dir.path().join("rom.csv");
    ok(&["simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&fom), "--model", "fom"]);
    let rom_arg = format!("p={}", s(&rom));
    ok(&["simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&red), "--rom", &rom_arg]);
    let text = ok(&["compare", s(&fom), s(&red), "--columns", "Ts:"]);
    let overall = text.lines().find(|l| l.starts_with("overall")).unwrap();
    let mre: f64 = overall.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(mre <= 1e-8, "{text}");
}

#[test]
fn closed_prefix_relaxes_then_convects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let net = data("three_path.toml");
    let scen = data("three_path_scenario.csv");
    ok(&[
        "simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&out), "--initial-temperature", "40",
    ]);
    let mid = column(&out, "Ts:v1@5");
    let flow = column(&out, "q:v1");
    // valves shut for the first 900 s: stagnant water cools monotonically toward 20 degC
    assert!(flow[..899].iter().all(|q| q.abs() < 1e-3));
    assert!(mid[..899].windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert!(mid[898] < 40.0 && mid[898] > 20.0);
    // once open, the warm feed arrives
    assert!(flow[1000] > 1.0);
    assert!(mid[1200] > 45.0, "{}", mid[1200]);
}

#[test]
fn simulate_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let net = data("three_path.toml");
    let scen = data("three_path_scenario.csv");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&a)]);
    ok(&["simulate", "--network", s(&net), "--scenario", s(&scen), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta = std::fs::read_to_string(dir.path().join("a.csv.meta.json")).unwrap();
    assert!(meta.contains("mean_hydraulic_ms"));
}

#[test]
fn hydraulics_and_build_fom_report() {
    let net = data("three_path.toml");
    let text = ok(&["hydraulics", "--network", s(&net), "--source", "1.5", "--valve", "v1=1", "--demand", "M1=1"]);
    assert!(text.contains("demand at M1"), "{text}");
    assert!(text.lines().last().unwrap().contains("iterations"));

    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("fom.json");
    let text = ok(&["build-fom", "--network", s(&net), "--link", "v2", "--out", s(&dump)]);
    assert!(text.starts_with("link v2: N = 20"), "{text}");
    assert!(std::fs::read_to_string(&dump).unwrap().contains("\"points\":20"));
}

#[test]
fn fit_recovers_coefficients_behind_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let net = data("single_pipe.toml");
    let scen = single_pipe_scenario(dir.path());
    // measurements come from the same reduced model evaluated at other coefficients
    let rom = dir.path().join("rom.json");
    ok(&["reduce", "--network", s(&net), "--link", "p", "--out", s(&rom)]);
    let truth = dir.path().join("truth.toml");
    let text = std::fs::read_to_string(&net)
        .unwrap()
        .replace("lambda = 1e-3", "lambda = 2e-3")
        .replace("diffusion = 1e-4", "diffusion = 3e-4");
    std::fs::write(&truth, text).unwrap();
    let meas = dir.path().join("meas.csv");
    let rom_arg = format!("p={}", s(&rom));
    ok(&["simulate", "--network", s(&truth), "--scenario", s(&scen), "--out", s(&meas), "--rom", &rom_arg]);

    let report = dir.path().join("fit.json");
    ok(&[
        "fit", "--network", s(&net), "--link", "p", "--scenario", s(&scen), "--measurements", s(&meas), "--out",
        s(&report),
    ]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let lambda = json["params"]["lambda"].as_f64().unwrap();
    let diffusion = json["params"]["diffusion"].as_f64().unwrap();
    assert!((lambda / 2e-3 - 1.0).abs() < 0.01, "{json}");
    assert!((diffusion / 3e-4 - 1.0).abs() < 0.01, "{json}");
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let net = data("three_path.toml");
    // usage
    assert_eq!(thermonet(&["simulate", "--network"]).status.code(), Some(2));
    assert_eq!(thermonet(&["hydraulics", "--network", s(&net), "--source", "1", "--valve", "v1=2"]).status.code(), Some(2));
    // parse
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[nodes]]\nid = 3\n").unwrap();
    let out = thermonet(&["hydraulics", "--network", s(&bad), "--source", "1.5"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml line 2"), "{err}");
    // numerical
    let out = thermonet(&["hydraulics", "--network", s(&net), "--source", "1.5", "--valve", "v1=1", "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
    // anything else, e.g. a missing file
    let out = thermonet(&["hydraulics", "--network", "/nonexistent.toml", "--source", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}
