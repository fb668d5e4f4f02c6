//! Synthetic reference vehicles, tracks and loss maps.
//!
//! None of these values are measured data. The vehicle masses and the
//! EM-to-wheel efficiencies (0.98 single-ratio, 0.96 CVT) follow the usual
//! race-car comparison; every other constant is a plausible made-up value.

use crate::config::Setup;
use crate::fitting::LossSample;
use crate::powertrain::{quad_loss, BatteryModel, MotorModel, TransmissionKind, TransmissionSpec, VehicleParams};
use crate::track::TrackProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ETA_FD: f64 = 0.99;

pub fn vehicle(m_tot: f64) -> VehicleParams {
    VehicleParams {
        m_tot,
        c_d: 0.8,
        a_f: 1.0,
        rho_air: 1.2041,
        g: 9.81,
        c_r: 0.01,
        eta_fd: ETA_FD,
        r_w: 0.33,
        gamma_fd: 3.0,
        p_aux: 2000.0,
    }
}

pub fn motor() -> MotorModel {
    MotorModel {
        alpha_m: 1.5e-7,
        q: [[500.0, 0.0, 0.0], [0.0, 2e-3, 0.0], [0.0, 0.0, 1e-7]],
        t_max: 400.0,
        c_m1: -20.0,
        c_m2: 3e5,
        omega_max: 1600.0,
    }
}

pub fn battery(budget: f64) -> BatteryModel {
    BatteryModel::with_lap_budget(5e-8, budget, 1)
}

pub fn sr_setup() -> Setup {
    Setup {
        vehicle: vehicle(1341.0),
        transmission: TransmissionSpec {
            kind: TransmissionKind::Sr,
            gamma_1: 1.8,
            gamma_min: 0.5,
            gamma_max: 3.0,
            eta_gb: 0.98 / ETA_FD,
            optimize_sr_ratio: true,
        },
        motor: motor(),
        battery: battery(50e6),
    }
}

pub fn cvt_setup() -> Setup {
    Setup {
        vehicle: vehicle(1395.0),
        transmission: TransmissionSpec {
            kind: TransmissionKind::Cvt,
            gamma_1: 1.8,
            gamma_min: 0.5,
            gamma_max: 3.0,
            eta_gb: 0.96 / ETA_FD,
            optimize_sr_ratio: false,
        },
        motor: motor(),
        battery: battery(50e6),
    }
}

/// 1 km straight with a constant 50 m/s speed limit.
pub fn flat_track() -> TrackProfile {
    TrackProfile::from_profile("flat-1km", 10.0, &[0.0; 101], &[50.0; 101]).expect("valid fixture")
}

/// A corner: apex speed over `[start, start + length]`, braking ramp of
/// constant deceleration before it and a steeper traction ramp after it.
#[derive(Debug, Clone, Copy)]
struct Corner {
    start: f64,
    length: f64,
    v_apex: f64,
}

const BRAKE_DECEL: f64 = 2.5;
const EXIT_ACCEL: f64 = 12.0;

fn ramp_profile(name: &str, length: f64, step: f64, v_cap: f64, corners: &[Corner], grade: f64) -> TrackProfile {
    let n = (length / step).round() as usize;
    let mut vmax = Vec::with_capacity(n + 1);
    let mut theta = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = k as f64 * step;
        let mut v2 = v_cap * v_cap;
        for c in corners {
            // periodic images so ramps wrap across the start line
            for shift in [-length, 0.0, length] {
                let a = c.start + shift;
                let b = a + c.length;
                let lim = if s < a {
                    c.v_apex.powi(2) + 2.0 * BRAKE_DECEL * (a - s)
                } else if s <= b {
                    c.v_apex.powi(2)
                } else {
                    c.v_apex.powi(2) + 2.0 * EXIT_ACCEL * (s - b)
                };
                v2 = v2.min(lim);
            }
        }
        vmax.push(v2.sqrt());
        theta.push(grade * (2.0 * std::f64::consts::PI * s / length).sin());
    }
    TrackProfile::from_profile(name, step, &theta, &vmax).expect("valid fixture")
}

/// 2 km lap with three corners and gentle grade, at step length `step`.
pub fn cornered_track(step: f64) -> TrackProfile {
    let corners = [
        Corner { start: 400.0, length: 60.0, v_apex: 30.0 },
        Corner { start: 1000.0, length: 80.0, v_apex: 45.0 },
        Corner { start: 1600.0, length: 40.0, v_apex: 25.0 },
    ];
    ramp_profile("cornered-2km", 2000.0, step, 80.0, &corners, 0.01)
}

/// 13.57 km lap (1358 nodes at 10 m) with long straights and chicanes.
pub fn long_track() -> TrackProfile {
    let corners = [
        Corner { start: 900.0, length: 80.0, v_apex: 35.0 },
        Corner { start: 2600.0, length: 60.0, v_apex: 28.0 },
        Corner { start: 4700.0, length: 50.0, v_apex: 32.0 },
        Corner { start: 6800.0, length: 120.0, v_apex: 50.0 },
        Corner { start: 9300.0, length: 60.0, v_apex: 30.0 },
        Corner { start: 11200.0, length: 200.0, v_apex: 55.0 },
        Corner { start: 12900.0, length: 50.0, v_apex: 24.0 },
    ];
    ramp_profile("long-13km", 13570.0, 10.0, 90.0, &corners, 0.005)
}

/// Motor loss map sampled on an operating grid with 1% multiplicative noise.
pub fn motor_map_samples(seed: u64) -> Vec<LossSample> {
    let m = motor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..16 {
        let w = 50.0 + 100.0 * i as f64;
        let p_max = (m.t_max * w).min(m.c_m1 * w + m.c_m2);
        for j in 0..=10 {
            let p = p_max * (-1.0 + 0.2 * j as f64);
            let loss = quad_loss(&m.q, w, p) * (1.0 + rng.gen_range(-0.01..0.01));
            out.push(LossSample::new(Some(w), p, loss));
        }
    }
    out
}

/// Battery loss samples `α_b P² (1 + noise)` over charge and discharge.
pub fn battery_samples(seed: u64) -> Vec<LossSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..60)
        .map(|k| {
            let p = -2.5e5 + 1e4 * k as f64;
            LossSample::new(None, p, 5e-8 * p * p * (1.0 + rng.gen_range(-0.02..0.02)))
        })
        .collect()
}
