use laptime_core::config::VehicleConfig;
use laptime_core::fixtures::{cornered_track, flat_track, motor_map_samples};
use laptime_core::track::{TrackFormat, TrackProfile};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn laptime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laptime"))
        .args(args)
        .env("LAPTIME_NUM_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_track(dir: &Path, name: &str, track: &TrackProfile) -> PathBuf {
    let p = dir.join(name);
    track.save(std::fs::File::create(&p).unwrap(), TrackFormat::Csv).unwrap();
    p
}

fn write_config(dir: &Path, cfg: &VehicleConfig) -> PathBuf {
    let p = dir.join("vehicle.json");
    cfg.save(std::fs::File::create(&p).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_reader(std::fs::File::open(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn flat_track_solve_writes_tables() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "flat.csv", &flat_track());
    let out = dir.path().join("out");
    let o = laptime(&["solve", "--track", s(&track), "--transmission", "cvt", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&out.join("summary.json"));
    let t = summary["lap_time_s"].as_f64().unwrap();
    assert!((t - 20.0).abs() <= 0.02, "{t}");
    assert_eq!(summary["converged"], Value::Bool(true));
    assert_eq!(summary["track"], "flat");
    let table = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(table.starts_with("s_m,v_mps,t_s,p_m_w,gamma"));
    assert_eq!(table.lines().count(), 1 + 101);
}

#[test]
fn format_flag_selects_outputs() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "flat.csv", &flat_track());
    let out = dir.path().join("out");
    let o = laptime(&["solve", "--track", s(&track), "--out-dir", s(&out), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("summary.json").exists());
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn missing_track_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = laptime(&["solve", "--track", s(&dir.path().join("absent.csv")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_overrides_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "flat.csv", &flat_track());
    for extra in [["--eta-gb", "1.5"], ["--energy-budget-mj", "-1"], ["--epsilon-v", "0"]] {
        let mut args = vec!["solve", "--track", s(&track), "--out-dir", s(dir.path())];
        args.extend(extra);
        assert_eq!(code(&laptime(&args)), 2, "{extra:?}");
    }
}

#[test]
fn zero_budget_exits_infeasible_with_certificate() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "flat.csv", &flat_track());
    let o = laptime(&["solve", "--track", s(&track), "--energy-budget-mj", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("energy budget insufficient"), "{err}");
    assert!(err.contains("certificate: PrimalInfeasible"), "{err}");
}

#[test]
fn outer_iteration_cap_exits_not_converged() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "corner.csv", &cornered_track(20.0));
    let mut cfg = VehicleConfig::reference();
    cfg.algorithm.max_outer_iters = 1;
    let vehicle = write_config(dir.path(), &cfg);
    let o = laptime(&[
        "solve",
        "--track",
        s(&track),
        "--vehicle",
        s(&vehicle),
        "--energy-budget-mj",
        "1.6",
        "--epsilon-v",
        "1e-9",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    // the best iterate is still written
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn cvt_not_slower_than_sr_at_equal_efficiency_and_mass() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "corner.csv", &cornered_track(10.0));
    let mut cfg = VehicleConfig::reference();
    cfg.cvt.m_tot = None;
    let vehicle = write_config(dir.path(), &cfg);
    let eta = cfg.sr.transmission.eta_gb.to_string();
    let mut times = Vec::new();
    for kind in ["sr", "cvt"] {
        let out = dir.path().join(kind);
        let o = laptime(&[
            "solve",
            "--track",
            s(&track),
            "--vehicle",
            s(&vehicle),
            "--transmission",
            kind,
            "--eta-gb",
            &eta,
            "--energy-budget-mj",
            "1.6",
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        times.push(read_json(&out.join("summary.json"))["lap_time_s"].as_f64().unwrap());
    }
    assert!(times[1] <= times[0], "cvt {} vs sr {}", times[1], times[0]);

    let cmp = dir.path().join("cmp.csv");
    let o = laptime(&[
        "compare",
        s(&dir.path().join("sr/trajectory.csv")),
        s(&dir.path().join("cvt/trajectory.csv")),
        "--out",
        s(&cmp),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&cmp);
    assert_eq!(rows.len(), 201);
    let last: f64 = rows[200][3].parse().unwrap();
    assert!((last - (times[1] - times[0])).abs() < 1e-9);
}

#[test]
fn sweep_grid_sizes() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "corner.csv", &cornered_track(50.0));
    for (grid, rows) in [("1x1", 1), ("15x15", 225)] {
        let out = dir.path().join(grid);
        let o = laptime(&[
            "sweep",
            "--track",
            s(&track),
            "--grid",
            grid,
            "--energy-range",
            "1.2:2.0",
            "--out-dir",
            s(&out),
            "--format",
            "csv",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let table = csv_rows(&out.join("sweep.csv"));
        assert_eq!(table.len(), rows);
        assert!(table.iter().all(|r| r[5] == "ok"), "{table:?}");
    }
}

#[test]
fn sweep_with_heavier_cvt_has_both_signs() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "corner.csv", &cornered_track(20.0));
    let mut cfg = VehicleConfig::reference();
    cfg.cvt.m_tot = Some(cfg.vehicle.m_tot + 100.0);
    let vehicle = write_config(dir.path(), &cfg);
    let o = laptime(&[
        "sweep",
        "--track",
        s(&track),
        "--vehicle",
        s(&vehicle),
        "--grid",
        "3x3",
        "--eta-range",
        "0.85:0.99",
        "--energy-range",
        "1.2:2.4",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dt: Vec<f64> = csv_rows(&dir.path().join("sweep.csv")).iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(dt.iter().any(|d| *d < 0.0) && dt.iter().any(|d| *d > 0.0), "{dt:?}");
    let json = read_json(&dir.path().join("sweep.json"));
    assert_eq!(json["delta_t"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let track = write_track(dir.path(), "flat.csv", &flat_track());
    let o = laptime(&["sweep", "--track", s(&track), "--grid", "0x3", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_track_straight_and_corner() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("straight.csv");
    let o = laptime(&["gen-track", "--segment", "straight:1000", "--v-cap", "80", "--out", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&p);
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 80.0));

    let p = dir.path().join("scs.json");
    let o = laptime(&[
        "gen-track",
        "--segment",
        "straight:500",
        "--segment",
        "corner:100:45",
        "--segment",
        "straight:400",
        "--a-lat-max",
        "20",
        "--v-cap",
        "80",
        "--out",
        s(&p),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = laptime_core::track::load_track(std::fs::File::open(&p).unwrap(), TrackFormat::Json).unwrap();
    let v = t.v_max();
    assert_eq!(v.len(), 101);
    assert!((v[55] - (20.0f64 * 45.0).sqrt()).abs() < 1e-12);
    assert_eq!(v[20], 80.0);
    assert_eq!(v[90], 80.0);
}

#[test]
fn gen_track_rejects_non_divisible_length() {
    let dir = TempDir::new().unwrap();
    let o = laptime(&["gen-track", "--segment", "straight:1005", "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("multiple"), "{}", stderr(&o));
}

#[test]
fn fit_commands() {
    let dir = TempDir::new().unwrap();
    // exact quadratic losses
    let exact = dir.path().join("exact.csv");
    let mut text = String::from("power_w,loss_w\n");
    for k in -10..=10 {
        let p = 2e4 * k as f64;
        text += &format!("{p},{}\n", 1e-7 * p * p);
    }
    std::fs::write(&exact, text).unwrap();
    let model = dir.path().join("alpha.json");
    let o = laptime(&["fit", "--samples", s(&exact), "--kind", "alpha_m", "--out", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&model);
    assert!(m["report"]["rmse_relative"].as_f64().unwrap() < 1e-12);
    let alpha = m["report"]["coefficients"]["quadratic"]["alpha"].as_f64().unwrap();
    assert!((alpha - 1e-7).abs() < 1e-18);

    // speed-varying motor map: the PSD fit is at least as good
    let map = dir.path().join("map.csv");
    let mut text = String::from("omega_radps,power_w,loss_w\n");
    for x in motor_map_samples(4) {
        text += &format!("{:?},{:?},{:?}\n", x.omega.unwrap(), x.power, x.measured_loss);
    }
    std::fs::write(&map, text).unwrap();
    let mut rmse = Vec::new();
    for kind in ["alpha_m", "psd"] {
        let out = dir.path().join(format!("{kind}.json"));
        let o = laptime(&["fit", "--samples", s(&map), "--kind", kind, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        rmse.push(read_json(&out)["report"]["rmse_relative"].as_f64().unwrap());
    }
    assert!(rmse[1] <= rmse[0], "{rmse:?}");

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = laptime(&["fit", "--samples", s(&empty), "--kind", "psd"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no samples"));
}
