//! Iterative lap-time minimization, nonlinear verification, the
//! forward-backward envelope oracle and parameter sweeps.

use crate::config::Setup;
use crate::powertrain::{
    battery_internal_power, drag_force, em_electrical_power_sd, gearbox_force_exact, motor_speed,
    propulsion_force_exact, quad_loss, BatteryModel, MotorModel, ParamError, TransmissionKind, TransmissionSpec,
    VehicleParams,
};
use crate::track::TrackProfile;
use crate::transcription::{
    build_problem2, build_problem3, extract_trajectories, LapTrajectories, TranscriptionError, TranscriptionOptions,
};
use laptime_conic::{solve, ConicProgram, ConicSolution, SolveStatus, SolverSettings};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INFEASIBLE_REASON: &str = "energy budget insufficient or envelope unreachable";

/// Environment variable capping the number of sweep workers.
pub const NUM_WORKERS_ENV: &str = "LAPTIME_NUM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmSettings {
    /// Stop once the RMS speed change between outer iterations drops below
    /// this value, m/s.
    pub epsilon_v: f64,
    pub max_outer_iters: usize,
    pub tightness_tol: f64,
    /// Deceleration cap of the envelope oracle, m/s².
    pub max_decel: f64,
    pub solver: SolverSettings,
    pub transcription: TranscriptionOptions,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        AlgorithmSettings {
            epsilon_v: 0.01,
            max_outer_iters: 10,
            tightness_tol: 1e-4,
            max_decel: 30.0,
            solver: SolverSettings::default(),
            transcription: TranscriptionOptions::default(),
        }
    }
}

impl AlgorithmSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon_v > 0.0 && self.epsilon_v.is_finite()) {
            return Err(format!("epsilon_v must be positive, got {}", self.epsilon_v));
        }
        if self.max_outer_iters == 0 {
            return Err("max_outer_iters must be at least 1".into());
        }
        if !(self.tightness_tol > 0.0) {
            return Err(format!("tightness_tol must be positive, got {}", self.tightness_tol));
        }
        if !(self.max_decel > 0.0) {
            return Err(format!("max_decel must be positive, got {}", self.max_decel));
        }
        if !(self.transcription.v_floor > 0.0 && self.transcription.v_floor.is_finite()) {
            return Err(format!("v_floor must be positive, got {}", self.transcription.v_floor));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Error)]
pub enum LapError {
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error("solver stopped with status {status:?} on the speed-independent problem")]
    Seed { status: SolveStatus },
}

/// Farkas-type certificate returned with an infeasible lap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub status: SolveStatus,
    pub solver_iterations: usize,
    /// `bᵀy + hᵀz`, negative for a valid certificate.
    pub dual_objective: f64,
    /// `‖Aᵀy + Gᵀz‖∞ / |bᵀy + hᵀz|`.
    pub relative_residual: f64,
}

impl Certificate {
    fn from_solution(program: &ConicProgram, sol: &ConicSolution) -> Self {
        let mut r = program.a.tmul_vec(&sol.y);
        program.g.gemv_t(1.0, &sol.z, &mut r);
        let obj = dot(&program.b, &sol.y) + dot(&program.h, &sol.z);
        let res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Certificate {
            status: sol.status,
            solver_iterations: sol.iterations,
            dual_objective: obj,
            relative_residual: res / obj.abs().max(f64::MIN_POSITIVE),
        }
    }
}

impl std::fmt::Display for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} after {} iterations, bᵀy + hᵀz = {:.3e}, relative residual {:.3e}",
            self.status, self.solver_iterations, self.dual_objective, self.relative_residual
        )
    }
}

/// Largest gap of every relaxed constraint over the lap. Force gaps are
/// relative to the largest motor force on the lap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    /// `dt/ds · v − 1`
    pub lethargy: f64,
    /// `|E − m v²/2| / E`
    pub kinetic: f64,
    /// `min(η_fd F_gb, F_gb/η_fd) − F_p`, the recovered braking force.
    pub propulsion: f64,
    /// `min(η_gb F_m, F_m/η_gb) − F_gb`
    pub gearbox: f64,
    /// `F_dc − F_m − loss`
    pub motor: f64,
    /// `F_i − F_b − α_b F_b² v`
    pub battery: f64,
    /// Force used to normalize the force gaps, N.
    pub force_scale: f64,
}

impl TightnessReport {
    pub fn max_gap(&self) -> f64 {
        [self.lethargy, self.kinetic, self.propulsion, self.gearbox, self.motor, self.battery]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn is_tight(&self, tol: f64) -> bool {
        self.max_gap() <= tol
    }

    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("lethargy", self.lethargy),
            ("kinetic", self.kinetic),
            ("propulsion", self.propulsion),
            ("gearbox", self.gearbox),
            ("motor", self.motor),
            ("battery", self.battery),
        ]
    }
}

/// Relaxation gaps of a trajectory. `v_bar` selects the speed-dependent motor
/// model evaluated at that reference profile; `None` selects the
/// speed-independent model.
pub fn tightness(
    traj: &LapTrajectories,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
    v_bar: Option<&[f64]>,
) -> TightnessReport {
    let n = traj.len() - 1;
    let scale = traj.f_m[..n]
        .iter()
        .fold(0.0f64, |m, f| m.max(f.abs()))
        .max(1e-6 * vehicle.m_tot * vehicle.g);
    let mut rep = TightnessReport {
        lethargy: 0.0,
        kinetic: 0.0,
        propulsion: 0.0,
        gearbox: 0.0,
        motor: 0.0,
        battery: 0.0,
        force_scale: scale,
    };
    let eta = transmission.eta_gb;
    for k in 0..n {
        let v = traj.v[k];
        let tau = traj.dtds[k];
        rep.lethargy = rep.lethargy.max((tau * v - 1.0).abs());
        let e = traj.e_kin[k];
        rep.kinetic = rep.kinetic.max((e - 0.5 * vehicle.m_tot * v * v).abs() / e);
        rep.propulsion = rep.propulsion.max(traj.f_brk[k].abs() / scale);
        let (fm, fgb) = (traj.f_m[k], traj.f_gb[k]);
        rep.gearbox = rep.gearbox.max(((eta * fm).min(fm / eta) - fgb).abs() / scale);
        let loss = match v_bar {
            Some(vb) => quad_loss(&motor.q, traj.omega_m[k], fm * vb[k]) / vb[k],
            None => motor.alpha_m * fm * fm / tau,
        };
        rep.motor = rep.motor.max((traj.f_dc[k] - fm - loss).abs() / scale);
        let fb = traj.f_b[k];
        rep.battery = rep.battery.max((traj.f_i[k] - fb - battery.alpha_b * fb * fb / tau).abs() / scale);
    }
    rep
}

/// One solve of the outer loop; iteration 0 is the speed-independent seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub lap_time: f64,
    /// RMS of `v − v̄` over the nodes, NaN for the seed.
    pub rms_speed_change: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapResult {
    pub trajectories: Option<LapTrajectories>,
    /// Speed-dependent solves performed.
    pub outer_iterations: usize,
    pub converged: bool,
    pub tightness_report: Option<TightnessReport>,
    pub sr_ratio_optimal: Option<f64>,
    pub energy_used: Option<f64>,
    pub infeasible_reason: Option<String>,
    pub certificate: Option<Certificate>,
    pub history: Vec<OuterIteration>,
    /// Reference profile of the last speed-dependent solve.
    pub reference_speed: Vec<f64>,
}

impl LapResult {
    pub fn lap_time(&self) -> Option<f64> {
        self.trajectories.as_ref().map(|t| t.lap_time)
    }

    pub fn is_infeasible(&self) -> bool {
        self.infeasible_reason.is_some()
    }

    fn infeasible(cert: Certificate, history: Vec<OuterIteration>) -> Self {
        LapResult {
            trajectories: None,
            outer_iterations: history.len().saturating_sub(1),
            converged: false,
            tightness_report: None,
            sr_ratio_optimal: None,
            energy_used: None,
            infeasible_reason: Some(INFEASIBLE_REASON.to_string()),
            certificate: Some(cert),
            history,
            reference_speed: Vec::new(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// RMS difference over the `N` control nodes (node `N` repeats node 0).
fn rms_change(v: &[f64], v_bar: &[f64]) -> f64 {
    let n = v.len() - 1;
    (v[..n].iter().zip(v_bar).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Minimum-lap-time solution: a speed-independent seed followed by
/// speed-dependent solves at the previous speed profile until the profile
/// stops moving.
pub fn solve_lap(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
    settings: &AlgorithmSettings,
) -> Result<LapResult, LapError> {
    settings.validate().map_err(LapError::Settings)?;
    vehicle.validate()?;
    transmission.validate()?;
    motor.validate()?;
    battery.validate()?;
    let opts = &settings.transcription;

    let (p2, map2) = build_problem2(track, vehicle, transmission, motor, battery, opts)?;
    let sol = solve(&p2, &settings.solver);
    let mut history = Vec::new();
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::PrimalInfeasible => {
            let cert = Certificate::from_solution(&p2, &sol);
            info!("lap infeasible: {cert}");
            return Ok(LapResult::infeasible(cert, history));
        }
        status => return Err(LapError::Seed { status }),
    }
    let seed = extract_trajectories(&sol, &map2, track, vehicle)?;
    history.push(OuterIteration {
        lap_time: seed.lap_time,
        rms_speed_change: f64::NAN,
        solver_iterations: sol.iterations,
    });
    debug!("seed: T = {:.6} s in {} iterations", seed.lap_time, sol.iterations);

    let mut v_bar = seed.v.clone();
    let mut best: Option<(LapTrajectories, Vec<f64>)> = None;
    let mut converged = false;
    for it in 1..=settings.max_outer_iters {
        let (p3, map3) = build_problem3(track, vehicle, transmission, motor, battery, &v_bar, opts)?;
        let sol = solve(&p3, &settings.solver);
        if !sol.is_optimal() {
            if sol.status == SolveStatus::PrimalInfeasible && best.is_none() {
                let cert = Certificate::from_solution(&p3, &sol);
                info!("lap infeasible with the speed-dependent model: {cert}");
                return Ok(LapResult::infeasible(cert, history));
            }
            warn!("outer iteration {it} stopped with {:?}; keeping the previous iterate", sol.status);
            break;
        }
        let traj = extract_trajectories(&sol, &map3, track, vehicle)?;
        let rms = rms_change(&traj.v, &v_bar);
        history.push(OuterIteration {
            lap_time: traj.lap_time,
            rms_speed_change: rms,
            solver_iterations: sol.iterations,
        });
        debug!("outer iteration {it}: T = {:.6} s, rms dv = {rms:.3e}", traj.lap_time);
        let next = traj.v.clone();
        best = Some((traj, std::mem::replace(&mut v_bar, next)));
        if rms < settings.epsilon_v {
            converged = true;
            break;
        }
    }
    log_trend(&history);

    let outer_iterations = history.len() - 1;
    let (traj, reference_speed, report) = match best {
        Some((t, vb)) => {
            let r = tightness(&t, vehicle, transmission, motor, battery, Some(&vb));
            (t, vb, r)
        }
        None => {
            let r = tightness(&seed, vehicle, transmission, motor, battery, None);
            (seed, Vec::new(), r)
        }
    };
    if !report.is_tight(settings.tightness_tol) {
        warn!("relaxation gap {:.3e} exceeds {:.1e}", report.max_gap(), settings.tightness_tol);
    }
    Ok(LapResult {
        outer_iterations,
        converged,
        tightness_report: Some(report),
        sr_ratio_optimal: (transmission.kind == TransmissionKind::Sr).then(|| traj.gamma[0]),
        energy_used: traj.delta_eb.last().copied(),
        infeasible_reason: None,
        certificate: None,
        history,
        reference_speed,
        trajectories: Some(traj),
    })
}

fn log_trend(history: &[OuterIteration]) {
    if history.len() < 4 {
        return;
    }
    let d: Vec<f64> = history.windows(2).map(|w| (w[1].lap_time - w[0].lap_time).abs()).collect();
    let (a, b) = (d[d.len() - 2], d[d.len() - 1]);
    if b > a {
        info!("lap time change grew over the last outer iterations: {a:.3e} -> {b:.3e}");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    /// Simulated speed at every node.
    pub speed: Vec<f64>,
    pub max_speed_deviation: f64,
    /// Battery energy drawn over the simulated lap, J.
    pub energy_used: f64,
    pub energy_budget: f64,
    /// Energy use exceeds the budget by more than 0.1%.
    pub energy_exceeded: bool,
}

/// Replays the controls `(F_m, γ, F_brk)` through the nonlinear model with the
/// same Euler step as the transcription.
///
/// The motor draws the larger of its exact speed-dependent requirement and the
/// commanded DC force times speed, so slack left in `F_dc` shows up as energy.
pub fn verify_forward(
    traj: &LapTrajectories,
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
) -> ForwardReport {
    let n = traj.len() - 1;
    let ds = track.step_length();
    let theta = track.theta();
    let m = vehicle.m_tot;
    let mut e = traj.e_kin[0];
    let mut eb = 0.0;
    let mut speed = Vec::with_capacity(n + 1);
    let mut dev = 0.0f64;
    for k in 0..n {
        let v = (2.0 * e / m).sqrt();
        speed.push(v);
        dev = dev.max((v - traj.v[k]).abs());
        let f_gb = gearbox_force_exact(traj.f_m[k], transmission.eta_gb);
        let f_p = propulsion_force_exact(f_gb, traj.f_brk[k].max(0.0), vehicle);
        let omega = motor_speed(v, traj.gamma[k], vehicle).min(motor.omega_max);
        let p_dc = em_electrical_power_sd(omega, traj.f_m[k] * v, motor).max(traj.f_dc[k] * v);
        let p_i = battery_internal_power(p_dc + vehicle.p_aux, battery);
        eb += ds * p_i / v;
        e = (e + ds * (f_p - drag_force(e, theta[k], vehicle))).max(1e-9 * m);
    }
    let v = (2.0 * e / m).sqrt();
    speed.push(v);
    dev = dev.max((v - traj.v[n]).abs());
    let budget = battery.delta_eb_max();
    ForwardReport {
        speed,
        max_speed_deviation: dev,
        energy_used: eb,
        energy_budget: budget,
        energy_exceeded: eb > budget * (1.0 + 1e-3),
    }
}

/// Kinetic energy after coasting `distance` metres at constant grade from
/// `e0`, integrated with `steps` classical Runge–Kutta steps.
pub fn coast_down(e0: f64, theta: f64, distance: f64, steps: usize, vehicle: &VehicleParams) -> f64 {
    let h = distance / steps as f64;
    let f = |e: f64| -drag_force(e.max(0.0), theta, vehicle);
    let mut e = e0;
    for _ in 0..steps {
        let k1 = f(e);
        let k2 = f(e + 0.5 * h * k1);
        let k3 = f(e + 0.5 * h * k2);
        let k4 = f(e + h * k3);
        e += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    e
}

/// Speed profile of the classic two-pass construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeProfile {
    pub v: Vec<f64>,
    /// Ratio applied at each node (constant for an SR).
    pub gamma: Vec<f64>,
    pub lap_time: f64,
}

struct Driveline<'a> {
    vehicle: &'a VehicleParams,
    transmission: &'a TransmissionSpec,
    motor: &'a MotorModel,
    /// Gear factor multiplying the ratio in the motor limits.
    g: f64,
}

impl Driveline<'_> {
    /// Highest motor force at speed `v` with ratio `gamma`, or `None` beyond
    /// the motor speed limit.
    fn motor_force(&self, v: f64, gamma: f64) -> Option<f64> {
        let k = gamma * self.g / self.vehicle.r_w;
        if k * v > self.motor.omega_max * (1.0 + 1e-12) {
            return None;
        }
        Some((k * self.motor.t_max).min(k * self.motor.c_m1 + self.motor.c_m2 / v))
    }

    /// Best ratio within bounds at speed `v` and the force it gives.
    fn best_ratio(&self, v: f64) -> Option<(f64, f64)> {
        let t = self.transmission;
        let hi = t.gamma_max.min(self.motor.omega_max * self.vehicle.r_w / (self.g * v));
        if hi < t.gamma_min {
            return None;
        }
        let mut cands = vec![t.gamma_min, hi];
        // kink where the torque and power limits cross
        let slope = self.g / self.vehicle.r_w * (self.motor.t_max - self.motor.c_m1);
        if slope > 0.0 {
            cands.push((self.motor.c_m2 / v / slope).clamp(t.gamma_min, hi));
        }
        cands
            .into_iter()
            .filter_map(|g| self.motor_force(v, g).map(|f| (g, f)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn propulsion(&self, v: f64, gamma: Option<f64>) -> Option<(f64, f64)> {
        let (g, f) = match gamma {
            Some(g) => (g, self.motor_force(v, g)?),
            None => self.best_ratio(v)?,
        };
        let f_gb = gearbox_force_exact(f, self.transmission.eta_gb);
        Some((g, propulsion_force_exact(f_gb, 0.0, self.vehicle)))
    }
}

/// Envelope for a fixed ratio (`Some`) or a per-node best ratio (`None`).
fn envelope_pass(track: &TrackProfile, d: &Driveline, gamma: Option<f64>, max_decel: f64) -> EnvelopeProfile {
    let veh = d.vehicle;
    let m = veh.m_tot;
    let ds = track.step_length();
    let theta = track.theta();
    let n = track.intervals();
    let a = veh.drag_area_density() / m;
    let b: Vec<f64> = theta.iter().map(|&th| drag_force(0.0, th, veh)).collect();
    let g_lo = gamma.unwrap_or(d.transmission.gamma_min);
    let v_motor = d.motor.omega_max * veh.r_w / (g_lo * d.g);
    let mut cap: Vec<f64> = track.v_max().iter().map(|v| 0.5 * m * v.min(v_motor).powi(2)).collect();

    // backward (braking) pass, wrapped until the start line settles
    for _ in 0..100 {
        let before = cap[0];
        cap[n] = cap[n].min(cap[0]);
        for k in (0..n).rev() {
            let reach = (cap[k + 1] + ds * (m * max_decel + b[k])) / (1.0 - a * ds);
            cap[k] = cap[k].min(reach);
        }
        if cap[0] == before {
            break;
        }
    }
    // forward (traction) pass
    let mut e = cap.clone();
    let mut ratio = vec![g_lo; n + 1];
    for _ in 0..100 {
        let before = e[0];
        for k in 0..n {
            let v = (2.0 * e[k] / m).sqrt();
            let (g, fp) = d.propulsion(v, gamma).unwrap_or((g_lo, 0.0));
            ratio[k] = g;
            let next = e[k] + ds * (fp - drag_force(e[k], theta[k], veh));
            e[k + 1] = cap[k + 1].min(next).max(0.0);
        }
        e[0] = e[0].min(e[n]);
        if e[0] == before {
            break;
        }
    }
    e[n] = e[0];
    ratio[n] = ratio[0];
    let v: Vec<f64> = e.iter().map(|e| (2.0 * e / m).sqrt()).collect();
    let lap_time = v[..n].iter().map(|v| ds / v).sum();
    EnvelopeProfile { v, gamma: ratio, lap_time }
}

/// Unlimited-energy speed profile: forward pass at the largest propulsive
/// force the driveline can deliver, backward pass at `max_decel`, both
/// clipped to `v_max` and closed around the lap. An optimized SR ratio is
/// chosen by a grid scan refined with golden-section search.
pub fn forward_backward_envelope(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    settings: &AlgorithmSettings,
) -> EnvelopeProfile {
    let d = Driveline {
        vehicle,
        transmission,
        motor,
        g: if settings.transcription.speed_limit_includes_final_drive {
            vehicle.gamma_fd
        } else {
            1.0
        },
    };
    let pass = |g: Option<f64>| envelope_pass(track, &d, g, settings.max_decel);
    match transmission.kind {
        TransmissionKind::Cvt => pass(None),
        TransmissionKind::Sr if !transmission.optimize_sr_ratio => pass(Some(transmission.gamma_1)),
        TransmissionKind::Sr => {
            let (lo, hi) = (transmission.gamma_min, transmission.gamma_max);
            if hi - lo < 1e-12 {
                return pass(Some(lo));
            }
            let grid = 40;
            let at = |i: usize| lo + (hi - lo) * i as f64 / grid as f64;
            let best = (0..=grid)
                .min_by(|&i, &j| pass(Some(at(i))).lap_time.total_cmp(&pass(Some(at(j))).lap_time))
                .unwrap_or(0);
            let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(grid)));
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let t = |g: f64| pass(Some(g)).lap_time;
            let mut x1 = b - phi * (b - a);
            let mut x2 = a + phi * (b - a);
            let (mut f1, mut f2) = (t(x1), t(x2));
            while b - a > 1e-9 * (1.0 + b.abs()) {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = t(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = t(x2);
                }
            }
            let refined = pass(Some(0.5 * (a + b)));
            let grid_best = pass(Some(at(best)));
            if refined.lap_time <= grid_best.lap_time {
                refined
            } else {
                grid_best
            }
        }
    }
}

/// Default sweep energy axis for a track, J: 0.55 to 0.95 MJ per km.
pub fn default_energy_range(track: &TrackProfile) -> (f64, f64) {
    let km = track.total_length() / 1000.0;
    (0.55e6 * km, 0.95e6 * km)
}

pub const DEFAULT_ETA_RANGE: (f64, f64) = (0.85, 0.99);

/// `count` evenly spaced values from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lap_time: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Infeasibility or failure message when no lap time is available.
    pub failure: Option<String>,
}

impl SweepCell {
    fn from_result(r: Result<LapResult, LapError>) -> Self {
        match r {
            Ok(res) => SweepCell {
                lap_time: res.lap_time(),
                converged: res.converged,
                outer_iterations: res.outer_iterations,
                failure: res.infeasible_reason,
            },
            Err(e) => SweepCell {
                lap_time: None,
                converged: false,
                outer_iterations: 0,
                failure: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub eta_values: Vec<f64>,
    pub energy_values: Vec<f64>,
    /// One SR solve per energy value.
    pub sr: Vec<SweepCell>,
    /// CVT solves indexed `[eta][energy]`.
    pub cvt: Vec<Vec<SweepCell>>,
    /// `T_SR − T_CVT` indexed `[eta][energy]`.
    pub delta_t: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("invalid sweep value: {0}")]
    Value(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Worker count from `LAPTIME_NUM_WORKERS`; `None` when unset or invalid.
pub fn num_workers() -> Option<usize> {
    std::env::var(NUM_WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

enum Job {
    Sr(usize),
    Cvt(usize, usize),
}

/// Solves the SR once per energy value and the CVT on every
/// `(η_gb, energy)` pair. Failed cells are recorded and the sweep continues.
pub fn sweep(
    track: &TrackProfile,
    sr: &Setup,
    cvt: &Setup,
    eta_values: &[f64],
    energy_values: &[f64],
    settings: &AlgorithmSettings,
) -> Result<SweepResult, SweepError> {
    if eta_values.is_empty() {
        return Err(SweepError::EmptyAxis("eta"));
    }
    if energy_values.is_empty() {
        return Err(SweepError::EmptyAxis("energy"));
    }
    if let Some(e) = eta_values.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(SweepError::Value(format!("efficiency {e} outside (0, 1]")));
    }
    if let Some(e) = energy_values.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(SweepError::Value(format!("energy budget {e} must be nonnegative")));
    }
    settings.validate().map_err(SweepError::Settings)?;

    let mut jobs: Vec<Job> = (0..energy_values.len()).map(Job::Sr).collect();
    for i in 0..eta_values.len() {
        jobs.extend((0..energy_values.len()).map(|j| Job::Cvt(i, j)));
    }
    let run = |job: &Job| -> SweepCell {
        let s = match *job {
            Job::Sr(j) => sr.with_budget(energy_values[j]),
            Job::Cvt(i, j) => cvt.with_budget(energy_values[j]).with_eta_gb(eta_values[i]),
        };
        SweepCell::from_result(solve_lap(track, &s.vehicle, &s.transmission, &s.motor, &s.battery, settings))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = num_workers() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    info!("sweep: {} solves on {} workers", jobs.len(), pool.current_num_threads());
    let cells: Vec<SweepCell> = pool.install(|| jobs.par_iter().map(run).collect());

    let ne = energy_values.len();
    let (sr_cells, cvt_cells) = cells.split_at(ne);
    let cvt: Vec<Vec<SweepCell>> = cvt_cells.chunks(ne).map(|c| c.to_vec()).collect();
    let delta_t = cvt
        .iter()
        .map(|row| {
            row.iter()
                .zip(sr_cells)
                .map(|(c, s)| Some(s.lap_time? - c.lap_time?))
                .collect()
        })
        .collect();
    Ok(SweepResult {
        eta_values: eta_values.to_vec(),
        energy_values: energy_values.to_vec(),
        sr: sr_cells.to_vec(),
        cvt,
        delta_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn default_settings_are_valid() {
        AlgorithmSettings::default().validate().unwrap();
        let mut s = AlgorithmSettings::default();
        s.epsilon_v = 0.0;
        assert!(s.validate().is_err());
        s = AlgorithmSettings::default();
        s.max_outer_iters = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rms_ignores_closing_node() {
        assert_relative_eq!(rms_change(&[1.0, 3.0, 100.0], &[0.0, 0.0, 0.0]), 5f64.sqrt());
    }

    #[test]
    fn coast_down_matches_linear_ode() {
        let veh = fixtures::vehicle(1341.0);
        let theta = 0.02;
        let a = veh.drag_area_density() / veh.m_tot;
        let b = drag_force(0.0, theta, &veh);
        let e0 = 0.5 * veh.m_tot * 50.0f64.powi(2);
        for s in [10.0, 200.0, 1000.0] {
            let exact = (e0 + b / a) * (-a * s).exp() - b / a;
            assert_relative_eq!(coast_down(e0, theta, s, 1000, &veh), exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn envelope_on_flat_track_is_flat() {
        let s = fixtures::cvt_setup();
        let env = forward_backward_envelope(
            &fixtures::flat_track(),
            &s.vehicle,
            &s.transmission,
            &s.motor,
            &AlgorithmSettings::default(),
        );
        assert!(env.v.iter().all(|v| (v - 50.0).abs() < 1e-9));
        assert_relative_eq!(env.lap_time, 20.0, max_relative = 1e-12);
    }

    #[test]
    fn envelope_recovers_at_the_force_limited_rate() {
        let s = fixtures::cvt_setup();
        let mut vmax = vec![60.0; 201];
        vmax[100] = 20.0;
        let track = TrackProfile::from_profile("dip", 10.0, &vec![0.0; 201], &vmax).unwrap();
        let set = AlgorithmSettings::default();
        let env = forward_backward_envelope(&track, &s.vehicle, &s.transmission, &s.motor, &set);
        assert_relative_eq!(env.v[100], 20.0, max_relative = 1e-12);
        let d = Driveline {
            vehicle: &s.vehicle,
            transmission: &s.transmission,
            motor: &s.motor,
            g: s.vehicle.gamma_fd,
        };
        let m = s.vehicle.m_tot;
        let mut e = 0.5 * m * 400.0;
        for k in 100..110 {
            let v = (2.0 * e / m).sqrt();
            let f = d.propulsion(v, None).unwrap().1;
            e += 10.0 * (f - drag_force(e, 0.0, &s.vehicle));
            assert_relative_eq!(env.v[k + 1], (2.0 * e / m).sqrt().min(60.0), max_relative = 1e-12);
        }
        // braking side limited by the deceleration cap
        let e99 = (0.5 * m * 400.0 + 10.0 * (m * 30.0 + drag_force(0.0, 0.0, &s.vehicle)))
            / (1.0 - 10.0 * s.vehicle.drag_area_density() / m);
        assert_relative_eq!(env.v[99], (2.0 * e99 / m).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn best_ratio_beats_every_fixed_ratio() {
        let s = fixtures::cvt_setup();
        let d = Driveline {
            vehicle: &s.vehicle,
            transmission: &s.transmission,
            motor: &s.motor,
            g: s.vehicle.gamma_fd,
        };
        for v in [10.0, 30.0, 60.0, 85.0] {
            let (_, best) = d.best_ratio(v).unwrap();
            for i in 0..=100 {
                let g = 0.5 + 2.5 * i as f64 / 100.0;
                if let Some(f) = d.motor_force(v, g) {
                    assert!(f <= best * (1.0 + 1e-12), "v {v} g {g}: {f} > {best}");
                }
            }
        }
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.85, 0.99, 1), vec![0.85]);
        let v = linspace(0.85, 0.99, 15);
        assert_eq!(v.len(), 15);
        assert_relative_eq!(v[14], 0.99);
    }

    #[test]
    fn empty_axes_are_rejected() {
        let t = fixtures::flat_track();
        let (sr, cvt) = (fixtures::sr_setup(), fixtures::cvt_setup());
        let set = AlgorithmSettings::default();
        assert!(matches!(sweep(&t, &sr, &cvt, &[], &[1e6], &set), Err(SweepError::EmptyAxis("eta"))));
        assert!(matches!(sweep(&t, &sr, &cvt, &[0.9], &[], &set), Err(SweepError::EmptyAxis("energy"))));
        assert!(matches!(sweep(&t, &sr, &cvt, &[1.2], &[1e6], &set), Err(SweepError::Value(_))));
    }
}
