//! Vehicle, transmission, motor and battery parameters, and the unrelaxed
//! physical model used for fitting, forward simulation and verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid parameter {name}: {reason}")]
pub struct ParamError {
    pub name: &'static str,
    pub reason: String,
}

fn check(ok: bool, name: &'static str, reason: impl Into<String>) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError {
            name,
            reason: reason.into(),
        })
    }
}

/// Point-mass vehicle and driveline constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    #[serde(rename = "m_tot_kg")]
    pub m_tot: f64,
    pub c_d: f64,
    #[serde(rename = "A_f_m2")]
    pub a_f: f64,
    #[serde(rename = "rho_air_kgpm3")]
    pub rho_air: f64,
    #[serde(rename = "g_mps2")]
    pub g: f64,
    pub c_r: f64,
    pub eta_fd: f64,
    #[serde(rename = "r_w_m")]
    pub r_w: f64,
    pub gamma_fd: f64,
    #[serde(rename = "P_aux_W")]
    pub p_aux: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        check(pos(self.m_tot), "m_tot", "must be positive")?;
        check(pos(self.c_d), "c_d", "must be positive")?;
        check(pos(self.a_f), "A_f", "must be positive")?;
        check(pos(self.rho_air), "rho_air", "must be positive")?;
        check(pos(self.g), "g", "must be positive")?;
        check(self.c_r >= 0.0 && self.c_r.is_finite(), "c_r", "must be nonnegative")?;
        check(pos(self.eta_fd) && self.eta_fd <= 1.0, "eta_fd", "must lie in (0, 1]")?;
        check(pos(self.r_w), "r_w", "must be positive")?;
        check(pos(self.gamma_fd), "gamma_fd", "must be positive")?;
        check(self.p_aux >= 0.0 && self.p_aux.is_finite(), "P_aux", "must be nonnegative")
    }

    /// `c_d · A_f · ρ`
    pub fn drag_area_density(&self) -> f64 {
        self.c_d * self.a_f * self.rho_air
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmissionKind {
    #[serde(alias = "SR")]
    Sr,
    #[serde(alias = "CVT")]
    Cvt,
}

impl std::fmt::Display for TransmissionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransmissionKind::Sr => "sr",
            TransmissionKind::Cvt => "cvt",
        })
    }
}

/// Single-ratio or continuously variable transmission.
///
/// For an SR with `optimize_sr_ratio`, `gamma_1` is only an initial value
/// and the shared ratio is optimized within `[gamma_min, gamma_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSpec {
    pub kind: TransmissionKind,
    pub gamma_1: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub eta_gb: f64,
    #[serde(default)]
    pub optimize_sr_ratio: bool,
}

impl TransmissionSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(
            self.eta_gb > 0.0 && self.eta_gb <= 1.0,
            "eta_gb",
            "must lie in (0, 1]",
        )?;
        let bounds_ok = self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max && self.gamma_max.is_finite();
        match self.kind {
            TransmissionKind::Sr => {
                check(self.gamma_1 > 0.0 && self.gamma_1.is_finite(), "gamma_1", "must be positive")?;
                if self.optimize_sr_ratio {
                    check(bounds_ok, "gamma_min/gamma_max", "need 0 < gamma_min <= gamma_max")?;
                }
                Ok(())
            }
            TransmissionKind::Cvt => {
                check(
                    !self.optimize_sr_ratio,
                    "optimize_sr_ratio",
                    "cannot be set for a CVT",
                )?;
                check(bounds_ok, "gamma_min/gamma_max", "need 0 < gamma_min <= gamma_max")
            }
        }
    }
}

/// Motor loss models and operating limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    #[serde(rename = "alpha_m_per_watt")]
    pub alpha_m: f64,
    /// Loss form over `x = [1, ω_m, P_m]`.
    #[serde(rename = "Q")]
    pub q: [[f64; 3]; 3],
    #[serde(rename = "T_max_Nm")]
    pub t_max: f64,
    #[serde(rename = "c_m1_Ws_per_rad")]
    pub c_m1: f64,
    #[serde(rename = "c_m2_W")]
    pub c_m2: f64,
    #[serde(rename = "omega_max_radps")]
    pub omega_max: f64,
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order.
pub fn symmetric_eigenvalues(q: &[[f64; 3]; 3]) -> [f64; 3] {
    let m = nalgebra::Matrix3::from_fn(|i, j| q[i][j]);
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    [ev[0], ev[1], ev[2]]
}

impl MotorModel {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.alpha_m >= 0.0 && self.alpha_m.is_finite(), "alpha_m", "must be nonnegative")?;
        check(self.t_max > 0.0 && self.t_max.is_finite(), "T_max", "must be positive")?;
        check(self.c_m1 <= 0.0 && self.c_m1.is_finite(), "c_m1", "must be nonpositive")?;
        check(self.c_m2 >= 0.0 && self.c_m2.is_finite(), "c_m2", "must be nonnegative")?;
        check(self.omega_max > 0.0 && self.omega_max.is_finite(), "omega_max", "must be positive")?;
        for i in 0..3 {
            for j in 0..3 {
                check(self.q[i][j].is_finite(), "Q", "entries must be finite")?;
                let tol = 1e-12 * (self.q[i][j].abs() + self.q[j][i].abs()).max(f64::MIN_POSITIVE);
                check((self.q[i][j] - self.q[j][i]).abs() <= tol, "Q", "must be symmetric")?;
            }
        }
        let lmin = symmetric_eigenvalues(&self.q)[0];
        check(lmin >= -1e-9, "Q", format!("not positive semidefinite (min eigenvalue {lmin:e})"))
    }
}

/// Battery loss model and per-lap energy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "BatteryFile", into = "BatteryFile")]
pub struct BatteryModel {
    pub alpha_b: f64,
    pub e_b0: f64,
    pub n_laps: u32,
    delta_eb_max: f64,
}

#[derive(Serialize, Deserialize)]
struct BatteryFile {
    alpha_b_per_watt: f64,
    #[serde(rename = "E_b0_J")]
    e_b0: f64,
    #[serde(rename = "N_laps")]
    n_laps: u32,
}

impl From<BatteryFile> for BatteryModel {
    fn from(f: BatteryFile) -> Self {
        BatteryModel::new(f.alpha_b_per_watt, f.e_b0, f.n_laps)
    }
}

impl From<BatteryModel> for BatteryFile {
    fn from(b: BatteryModel) -> Self {
        BatteryFile {
            alpha_b_per_watt: b.alpha_b,
            e_b0: b.e_b0,
            n_laps: b.n_laps,
        }
    }
}

impl BatteryModel {
    pub fn new(alpha_b: f64, e_b0: f64, n_laps: u32) -> Self {
        BatteryModel {
            alpha_b,
            e_b0,
            n_laps,
            delta_eb_max: e_b0 / n_laps as f64,
        }
    }

    /// Battery with a per-lap budget of `delta` joules over `n_laps` laps.
    pub fn with_lap_budget(alpha_b: f64, delta: f64, n_laps: u32) -> Self {
        Self::new(alpha_b, delta * n_laps as f64, n_laps)
    }

    /// Energy allotted per lap, `E_b0 / N_laps`.
    pub fn delta_eb_max(&self) -> f64 {
        self.delta_eb_max
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.alpha_b >= 0.0 && self.alpha_b.is_finite(), "alpha_b", "must be nonnegative")?;
        check(self.e_b0 >= 0.0 && self.e_b0.is_finite(), "E_b0", "must be nonnegative and finite")?;
        check(self.n_laps >= 1, "N_laps", "must be at least 1")
    }
}

/// Aerodynamic drag plus grade and rolling resistance at kinetic energy `e_kin`.
pub fn drag_force(e_kin: f64, theta: f64, p: &VehicleParams) -> f64 {
    debug_assert!(e_kin >= 0.0);
    p.drag_area_density() * e_kin / p.m_tot + p.m_tot * p.g * (theta.sin() + p.c_r * theta.cos())
}

/// Two-branch propulsion force at the wheels.
///
/// # Panics
/// If `f_brk` is negative.
pub fn propulsion_force_exact(f_gb: f64, f_brk: f64, p: &VehicleParams) -> f64 {
    assert!(f_brk >= 0.0, "braking force must be nonnegative, got {f_brk}");
    if f_gb >= 0.0 {
        p.eta_fd * f_gb - f_brk
    } else {
        f_gb / p.eta_fd - f_brk
    }
}

/// Same two-branch map for the gearbox: force after the gearbox from motor force.
pub fn gearbox_force_exact(f_m: f64, eta_gb: f64) -> f64 {
    if f_m >= 0.0 {
        eta_gb * f_m
    } else {
        f_m / eta_gb
    }
}

/// Speed-independent motor model: `P_dc = P_m + α_m P_m²`.
pub fn em_electrical_power_si(p_m: f64, m: &MotorModel) -> f64 {
    m.alpha_m * p_m * p_m + p_m
}

/// Quadratic form `xᵀ Q x` with `x = [1, ω, P]`.
pub fn quad_loss(q: &[[f64; 3]; 3], omega: f64, p_m: f64) -> f64 {
    let x = [1.0, omega, p_m];
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += x[i] * q[i][j] * x[j];
        }
    }
    acc
}

/// Speed-dependent motor model: `P_dc = P_m + xᵀ Q x`.
///
/// # Panics
/// If `omega_m` lies outside `[0, omega_max]`.
pub fn em_electrical_power_sd(omega_m: f64, p_m: f64, m: &MotorModel) -> f64 {
    assert!(
        (0.0..=m.omega_max).contains(&omega_m),
        "motor speed {omega_m} outside [0, {}]",
        m.omega_max
    );
    p_m + quad_loss(&m.q, omega_m, p_m)
}

/// Symmetric mechanical power envelope `(P_min, P_max)` at motor speed `omega_m`.
pub fn em_power_limits(omega_m: f64, m: &MotorModel) -> (f64, f64) {
    debug_assert!(omega_m >= 0.0 && omega_m <= m.omega_max * (1.0 + 1e-12));
    let p_max = (m.t_max * omega_m).min(m.c_m1 * omega_m + m.c_m2);
    (-p_max, p_max)
}

/// Battery internal power `α_b P_b² + P_b`.
pub fn battery_internal_power(p_b: f64, b: &BatteryModel) -> f64 {
    b.alpha_b * p_b * p_b + p_b
}

/// Motor speed `γ · v · γ_fd / r_w`.
pub fn motor_speed(v: f64, gamma: f64, p: &VehicleParams) -> f64 {
    debug_assert!(v >= 0.0 && gamma > 0.0);
    gamma * v * p.gamma_fd / p.r_w
}
