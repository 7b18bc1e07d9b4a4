mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use constlab::links::EARTH_ROTATION_RATE;
use constlab::scenario::Scenario;
use constlab::sim::Simulation;
use constlab::ActorId;

fn constlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_constlab"))
        .args(args)
        .env("CONSTLAB_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn minimal() -> String {
    scenario_path("minimal.toml").to_str().unwrap().to_string()
}

fn telemetry_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["time", "charge_J", "temperature_K", "illuminated"]);
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn run_writes_telemetry_at_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = constlab(&["run", "--scenario", &minimal(), "--until", "6000", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = telemetry_rows(&out.join("telemetry_1.csv"));
    assert_eq!(rows.len(), 101);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<f64>().unwrap(), 60.0 * k as f64);
    }
    for f in ["events.jsonl", "events.csv", "windows.csv", "activities.csv", "rounds.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let events = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    let kinds: Vec<String> = events
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert!(kinds.iter().any(|k| k == "activity-start"));
    assert!(kinds.iter().any(|k| k == "window-open"));

    // the library snapshot agrees with the written row
    let cfg = Scenario::load(&scenario_path("minimal.toml")).unwrap().to_config(None).unwrap();
    let mut sim = Simulation::new(cfg).unwrap();
    sim.advance_to(6_000.0).unwrap();
    for t in [0.0, 3_000.0, 5_940.0] {
        let snap = sim.snapshot_at(ActorId(1), t).unwrap();
        let row = rows.iter().find(|r| r[0].parse::<f64>().unwrap() == t).unwrap();
        assert_eq!(snap.charge_j.unwrap().to_string(), row[1]);
        assert_eq!(snap.temperature_k.unwrap().to_string(), row[2]);
        assert_eq!(snap.illuminated.unwrap().to_string(), row[3]);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let busy = scenario_path("busy.toml");
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = constlab(&[
            "run",
            "--scenario",
            busy.to_str().unwrap(),
            "--until",
            "40000",
            "--seed",
            "77",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(out);
    }
    let mut names: Vec<_> = std::fs::read_dir(&outs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 9);
    for n in &names {
        assert_eq!(std::fs::read(outs[0].join(n)).unwrap(), std::fs::read(outs[1].join(n)).unwrap(), "{n:?}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 77);
}

#[test]
fn invalid_scenarios_exit_two_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario_path("minimal.toml")).unwrap();
    let bad = write(dir.path(), "bad.toml", &text.replace("a_m = 6.871e6", "a_m = -6.871e6"));
    let out = dir.path().join("out");
    let o = constlab(&["run", "--scenario", &bad, "--until", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("actors[0].orbit.a_m"), "{}", stderr(&o));

    let typo = write(dir.path(), "typo.toml", &text.replace("duration_s = 60.0", "duration = 60.0"));
    let o = constlab(&["run", "--scenario", &typo, "--until", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = constlab(&["run", "--scenario", "/nonexistent.toml", "--until", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = constlab(&["run", "--scenario", &minimal(), "--until", "-5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

fn geo_scenario(station_lon_deg: f64) -> String {
    let a = (MU / (EARTH_ROTATION_RATE * EARTH_ROTATION_RATE)).cbrt();
    format!(
        r#"
[metadata]
name = "geo"
t0 = "2025-01-01T00:00:00Z"
seed = 1

[[actors]]
id = 1
name = "geo"
kind = "spacecraft"
links = ["HYPSO1_SBAND"]
orbit = {{ a_m = {a}, e = 0.0, i_deg = 0.0, raan_deg = 0.0, argp_deg = 0.0, m0_deg = 0.0 }}
battery = {{ capacity_j = 1.0e5, charge_j = 8.0e4, discharge_floor = 0.2 }}
panel = {{ area_m2 = 0.1, efficiency = 0.3 }}
thermal = {{ heat_capacity_j_per_k = 5.0e3, temperature_k = 290.0, rad_coeff_w_per_k4 = 2.0e-9, absorbed_solar_w = 10.0, t_min_k = 200.0, t_max_k = 350.0 }}

[[actors]]
id = 2
name = "gs"
kind = "ground_station"
links = ["HYPSO1_SBAND"]
lat_deg = 0.0
lon_deg = {station_lon_deg}
"#
    )
}

#[test]
fn windows_for_fixed_geometries() {
    let dir = tempfile::tempdir().unwrap();
    let always = write(dir.path(), "always.toml", &geo_scenario(0.0));
    let o = constlab(&["windows", "--scenario", &always, "--pair", "2,1", "--span", "100,5000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "peer_a,peer_b,t_open_s,t_close_s,duration_s\n1,2,100.000,5000.000,4900.000\n"
    );

    let never = write(dir.path(), "never.toml", &geo_scenario(180.0));
    let o = constlab(&["windows", "--scenario", &never, "--pair", "1,2", "--span", "0,86400"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "peer_a,peer_b,t_open_s,t_close_s,duration_s\n");

    for (pair, span) in [("1,9", "0,10"), ("1", "0,10"), ("1,2", "10,0"), ("1,2", "a,b")] {
        let o = constlab(&["windows", "--scenario", &always, "--pair", pair, "--span", span]);
        assert_eq!(code(&o), 2, "pair {pair} span {span}");
    }
}

#[test]
fn leo_windows_match_a_dense_scan() {
    let dir = tempfile::tempdir().unwrap();
    let a = R_EARTH + 550e3;
    let text = geo_scenario(0.0)
        .replace(&format!("a_m = {}", (MU / (EARTH_ROTATION_RATE * EARTH_ROTATION_RATE)).cbrt()), &format!("a_m = {a}"))
        .replace("i_deg = 0.0", "i_deg = 97.5")
        .replace("lat_deg = 0.0", "lat_deg = 63.4");
    let path = write(dir.path(), "leo.toml", &text);
    let o = constlab(&["windows", "--scenario", &path, "--pair", "1,2", "--span", "0,86400"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got: Vec<(f64, f64)> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[2], f[3])
        })
        .collect();
    let (lat, min_el) = (63.4f64.to_radians(), 10f64.to_radians());
    let want = dense_scan(0.0, 86_400.0, 0.1, |t| {
        elevation_oracle(circular_position(a, 97.5f64.to_radians(), 0.0, t), lat, 0.0, EARTH_ROTATION_RATE, t) >= min_el
    });
    assert!(want.len() >= 4);
    assert_eq!(got.len(), want.len());
    for ((o1, c1), (o2, c2)) in got.iter().zip(&want) {
        assert!((o1 - o2).abs() <= 0.2 && (c1 - c2).abs() <= 0.2, "[{o1}, {c1}] vs [{o2}, {c2}]");
    }
}

#[test]
fn score_prints_kappa_and_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("diag.csv", "5,0,0\n0,7,0\n0,0,2\n", "kappa=1.000000 L=0.000000\n"),
        ("ref.csv", "20,5\n10,15\n", "kappa=0.400000 L=0.600000\n"),
        ("col.csv", "0,9\n0,4\n", "kappa=0.000000 L=1.000000\n"),
        ("labelled.csv", ",x,y\nx,20,5\ny,10,15\n", "kappa=0.400000 L=0.600000\n"),
    ];
    for (name, body, want) in cases {
        let p = write(dir.path(), name, body);
        let o = constlab(&["score", "--matrix", &p]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert_eq!(stdout(&o), want, "{name}");
    }
    for (name, body) in [("ragged.csv", "1,2\n3\n"), ("text.csv", "a,b\nc,d\n"), ("undef.csv", "4,0\n0,0\n")] {
        let p = write(dir.path(), name, body);
        assert_eq!(code(&constlab(&["score", "--matrix", &p])), 2, "{name}");
    }
    assert_eq!(code(&constlab(&["score", "--matrix", "/nonexistent.csv"])), 2);
}
