use approx::assert_relative_eq;
use laptime_core::config::VehicleConfig;
use laptime_core::fitting::{fit_alpha, fit_psd_quadratic, read_samples};
use laptime_core::fixtures::{cornered_track, long_track, motor_map_samples};
use laptime_core::track::{generate_track, load_track, Segment, TrackFormat};

#[test]
fn tracks_round_trip_in_both_formats() {
    for track in [cornered_track(10.0), long_track()] {
        for format in [TrackFormat::Csv, TrackFormat::Json] {
            let mut buf = Vec::new();
            track.save(&mut buf, format).unwrap();
            let back = load_track(buf.as_slice(), format).unwrap();
            assert_eq!(back.nodes(), track.nodes());
            assert_eq!(back.step_length(), track.step_length());
        }
    }
}

#[test]
fn generated_track_survives_a_file_round_trip() {
    let segs: Vec<Segment> = ["straight:600", "corner:150:50", "straight:250"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let t = generate_track("gen", &segs, 10.0, 18.0, 85.0).unwrap();
    assert_eq!(t.len(), 101);
    let mut buf = Vec::new();
    t.save(&mut buf, TrackFormat::Json).unwrap();
    let back = load_track(buf.as_slice(), TrackFormat::Json).unwrap();
    assert_eq!(back.name(), "gen");
    assert_relative_eq!(back.v_max()[65], (18.0f64 * 50.0).sqrt(), max_relative = 1e-15);
}

#[test]
fn sample_table_fits_match_in_memory_fits() {
    let samples = motor_map_samples(9);
    let mut text = String::from("omega_radps,power_w,loss_w\n");
    for s in &samples {
        text += &format!("{:?},{:?},{:?}\n", s.omega.unwrap(), s.power, s.measured_loss);
    }
    let parsed = read_samples(text.as_bytes()).unwrap();
    assert_eq!(parsed, samples);
    assert_eq!(fit_alpha(&parsed).unwrap(), fit_alpha(&samples).unwrap());
    let (q, rep) = fit_psd_quadratic(&parsed).unwrap();
    let (_, alpha_rep) = fit_alpha(&parsed).unwrap();
    assert!(rep.rmse_relative <= alpha_rep.rmse_relative);
    assert!(q[0][0] > 0.0);
}

#[test]
fn configuration_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vehicle.json");
    let cfg = VehicleConfig::reference();
    cfg.save(std::fs::File::create(&path).unwrap()).unwrap();
    let back = VehicleConfig::from_reader(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
