//! Space-domain SOCP transcription of the minimum-lap-time problem.
//!
//! States (kinetic energy, battery energy drawn) live on the `N + 1` grid
//! points; lethargy, speed, forces and cones live on the `N` left endpoints
//! (Euler forward). Internally all quantities are scaled to O(1):
//!
//! | quantity | scaled variable |
//! |---|---|
//! | lethargy `dt/ds` | `τ = v_ref · dt/ds` |
//! | speed `v` | `u = v / v_ref` |
//! | kinetic energy | `e = E / (m v_ref² / 2)` |
//! | battery energy | `b = ΔE_b / (F_ref S)` |
//! | forces | `f = F / (m g)` |
//! | motor speed | `ω̂ = ω / ω_max` |

use crate::powertrain::{BatteryModel, MotorModel, ParamError, TransmissionKind, TransmissionSpec, VehicleParams};
use crate::track::TrackProfile;
use laptime_conic::{BuildError, ConicProgram, ConicSolution, LinExpr, ProgramBuilder, SolveStatus};
use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TranscriptionError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid reference speed profile: {0}")]
    ReferenceSpeed(String),
    #[error("loss matrix is not positive semidefinite (smallest scaled eigenvalue {0:e})")]
    NotPsd(f64),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("cannot extract trajectories from a {0:?} solution")]
    NotOptimal(SolveStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriptionOptions {
    /// Include `γ_fd` in the torque, power and speed limits of the motor.
    pub speed_limit_includes_final_drive: bool,
    /// Lower speed bound, m/s.
    pub v_floor: f64,
}

impl Default for TranscriptionOptions {
    fn default() -> Self {
        TranscriptionOptions {
            speed_limit_includes_final_drive: true,
            v_floor: 1.0,
        }
    }
}

/// Reference magnitudes used to scale the program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub v_ref: f64,
    pub f_ref: f64,
    pub e_ref: f64,
    pub eb_ref: f64,
    pub omega_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RatioVars {
    /// SR with a fixed ratio; no variable.
    Fixed(f64),
    /// SR with the ratio as a shared design variable.
    Shared(usize),
    /// CVT ratio per node.
    PerNode(Vec<usize>),
}

/// Column indices of every physical quantity in the emitted program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMap {
    pub dtds: Vec<usize>,
    pub v: Vec<usize>,
    /// `N + 1` entries.
    pub e_kin: Vec<usize>,
    /// `N + 1` entries.
    pub delta_eb: Vec<usize>,
    pub f_p: Vec<usize>,
    pub f_gb: Vec<usize>,
    pub f_m: Vec<usize>,
    pub f_dc: Vec<usize>,
    pub f_b: Vec<usize>,
    pub f_i: Vec<usize>,
    pub gamma: RatioVars,
    /// Motor speed, speed-dependent problem only.
    pub omega_m: Option<Vec<usize>>,
    pub num_vars: usize,
    pub scaling: Scaling,
    pub step_length: f64,
}

impl VariableMap {
    pub fn intervals(&self) -> usize {
        self.dtds.len()
    }

    /// Every index the map refers to, in no particular order.
    pub fn all_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_vars);
        for v in [
            &self.dtds,
            &self.v,
            &self.e_kin,
            &self.delta_eb,
            &self.f_p,
            &self.f_gb,
            &self.f_m,
            &self.f_dc,
            &self.f_b,
            &self.f_i,
        ] {
            out.extend_from_slice(v);
        }
        match &self.gamma {
            RatioVars::Fixed(_) => {}
            RatioVars::Shared(j) => out.push(*j),
            RatioVars::PerNode(v) => out.extend_from_slice(v),
        }
        if let Some(w) = &self.omega_m {
            out.extend_from_slice(w);
        }
        out
    }

    fn gamma_expr(&self, k: usize) -> LinExpr {
        match &self.gamma {
            RatioVars::Fixed(g) => LinExpr::constant(*g),
            RatioVars::Shared(j) => LinExpr::var(*j),
            RatioVars::PerNode(v) => LinExpr::var(v[k]),
        }
    }
}

/// Physical trajectories over all `N + 1` nodes. Controls at the closing
/// node repeat node 0 (the lap is periodic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapTrajectories {
    pub s: Vec<f64>,
    pub dtds: Vec<f64>,
    pub v: Vec<f64>,
    pub e_kin: Vec<f64>,
    pub delta_eb: Vec<f64>,
    pub f_p: Vec<f64>,
    pub f_gb: Vec<f64>,
    pub f_m: Vec<f64>,
    pub f_dc: Vec<f64>,
    pub f_b: Vec<f64>,
    pub f_i: Vec<f64>,
    pub gamma: Vec<f64>,
    pub omega_m: Vec<f64>,
    pub p_m: Vec<f64>,
    pub p_dc: Vec<f64>,
    pub p_b: Vec<f64>,
    pub p_i: Vec<f64>,
    pub f_brk: Vec<f64>,
    pub lap_time: f64,
    pub step_length: f64,
}

impl LapTrajectories {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Time at each node measured from the start line.
    pub fn elapsed(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        t.push(0.0);
        for k in 0..self.len() - 1 {
            acc += self.step_length * self.dtds[k];
            t.push(acc);
        }
        t
    }
}

enum EmModel<'a> {
    SpeedIndependent,
    SpeedDependent(&'a [f64]),
}

/// Problem with the speed-independent motor model.
pub fn build_problem2(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
    options: &TranscriptionOptions,
) -> Result<(ConicProgram, VariableMap), TranscriptionError> {
    build(track, vehicle, transmission, motor, battery, options, EmModel::SpeedIndependent)
}

/// Problem with the speed-dependent motor model evaluated at the reference
/// speed profile `v_bar` (one value per node).
pub fn build_problem3(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
    v_bar: &[f64],
    options: &TranscriptionOptions,
) -> Result<(ConicProgram, VariableMap), TranscriptionError> {
    if v_bar.len() != track.len() {
        return Err(TranscriptionError::Dimension(format!(
            "reference speed profile has {} entries, track has {} nodes",
            v_bar.len(),
            track.len()
        )));
    }
    if let Some((k, v)) = v_bar.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(TranscriptionError::ReferenceSpeed(format!(
            "entry {k} is {v}; all entries must be positive"
        )));
    }
    build(
        track,
        vehicle,
        transmission,
        motor,
        battery,
        options,
        EmModel::SpeedDependent(v_bar),
    )
}

/// `Q = D⁻¹ L Lᵀ D⁻¹` with `D = diag(1, 1/ω_ref, 1/P_ref)`; returns `Lᵀ` so that
/// `xᵀ Q x = ‖Lᵀ x̂‖²` for `x̂ = [1, ω/ω_ref, P/P_ref]`.
fn scaled_loss_factor(q: &[[f64; 3]; 3], omega_ref: f64, p_ref: f64) -> Result<Matrix3<f64>, TranscriptionError> {
    let d = [1.0, omega_ref, p_ref];
    let qs = Matrix3::from_fn(|i, j| 0.5 * (q[i][j] + q[j][i]) * d[i] * d[j]);
    let eig = SymmetricEigen::new(qs);
    let lmax = eig.eigenvalues.max().max(0.0);
    let lmin = eig.eigenvalues.min();
    if lmin < -1e-9 * lmax.max(1.0) {
        return Err(TranscriptionError::NotPsd(lmin));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(Matrix3::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

fn build(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    transmission: &TransmissionSpec,
    motor: &MotorModel,
    battery: &BatteryModel,
    options: &TranscriptionOptions,
    em: EmModel<'_>,
) -> Result<(ConicProgram, VariableMap), TranscriptionError> {
    vehicle.validate()?;
    transmission.validate()?;
    motor.validate()?;
    battery.validate()?;
    if track.len() < 2 {
        return Err(TranscriptionError::Dimension("track needs at least 2 nodes".into()));
    }
    if !(options.v_floor > 0.0 && options.v_floor < track.max_speed()) {
        return Err(ParamError {
            name: "v_floor",
            reason: format!("must lie in (0, {})", track.max_speed()),
        }
        .into());
    }

    let n = track.intervals();
    let ds = track.step_length();
    let m = vehicle.m_tot;
    let v_ref = track.max_speed();
    let f_ref = m * vehicle.g;
    let e_ref = 0.5 * m * v_ref * v_ref;
    let eb_ref = f_ref * track.total_length();
    let omega_ref = motor.omega_max;
    let p_ref = f_ref * v_ref;
    let scaling = Scaling {
        v_ref,
        f_ref,
        e_ref,
        eb_ref,
        omega_ref,
    };

    // variable layout, node-interleaved
    let speed_dependent = matches!(em, EmModel::SpeedDependent(_));
    let per_node_gamma = transmission.kind == TransmissionKind::Cvt;
    let mut next = 0usize;
    let mut take = || {
        next += 1;
        next - 1
    };
    let mut map_dtds = Vec::with_capacity(n);
    let mut map_v = Vec::with_capacity(n);
    let mut map_e = Vec::with_capacity(n + 1);
    let mut map_b = Vec::with_capacity(n + 1);
    let (mut fp, mut fgb, mut fm, mut fdc, mut fb, mut fi) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    let mut gam = Vec::new();
    let mut omg = Vec::new();
    for _ in 0..n {
        map_e.push(take());
        map_b.push(take());
        map_dtds.push(take());
        map_v.push(take());
        fp.push(take());
        fgb.push(take());
        fm.push(take());
        fdc.push(take());
        fb.push(take());
        fi.push(take());
        if per_node_gamma {
            gam.push(take());
        }
        if speed_dependent {
            omg.push(take());
        }
    }
    map_e.push(take());
    map_b.push(take());
    let gamma = match transmission.kind {
        TransmissionKind::Cvt => RatioVars::PerNode(gam),
        TransmissionKind::Sr if transmission.optimize_sr_ratio => RatioVars::Shared(take()),
        TransmissionKind::Sr => RatioVars::Fixed(transmission.gamma_1),
    };
    let map = VariableMap {
        dtds: map_dtds,
        v: map_v,
        e_kin: map_e,
        delta_eb: map_b,
        f_p: fp,
        f_gb: fgb,
        f_m: fm,
        f_dc: fdc,
        f_b: fb,
        f_i: fi,
        gamma,
        omega_m: speed_dependent.then_some(omg),
        num_vars: next,
        scaling,
        step_length: ds,
    };

    let var = LinExpr::var;
    let term = LinExpr::term;
    let one = LinExpr::constant(1.0);
    let mut b = ProgramBuilder::new(map.num_vars);

    let g_eff = if options.speed_limit_includes_final_drive {
        vehicle.gamma_fd
    } else {
        1.0
    };
    let drag_lin = vehicle.drag_area_density() / m;
    let theta = track.theta();
    let vmax = track.v_max();
    let eta_fd = vehicle.eta_fd;
    let eta_gb = transmission.eta_gb;
    let alpha_m = (motor.alpha_m * p_ref).sqrt();
    let alpha_b = (battery.alpha_b * p_ref).sqrt();
    let torque_coef = g_eff * motor.t_max / (vehicle.r_w * f_ref);
    let power_gamma = g_eff * motor.c_m1 / (vehicle.r_w * f_ref);
    let power_tau = motor.c_m2 / p_ref;
    let speed_coef = g_eff * v_ref / (motor.omega_max * vehicle.r_w);
    let aux = vehicle.p_aux / p_ref;
    let l_t = match em {
        EmModel::SpeedDependent(_) => Some(scaled_loss_factor(&motor.q, omega_ref, p_ref)?),
        EmModel::SpeedIndependent => None,
    };
    let inv_sqrt_pref = 1.0 / p_ref.sqrt();

    for k in 0..n {
        let tau = map.dtds[k];
        let u = map.v[k];
        let e = map.e_kin[k];
        b.add_cost(tau, ds / v_ref);

        // lethargy τ·u ≥ 1 and kinetic energy e ≥ u²
        b.add_rotated_soc(&var(tau), &var(u), &[one.clone()]);
        b.add_rotated_soc(&var(e), &one, &[var(u)]);

        // Euler-forward energy dynamics
        let grade = m * vehicle.g * (theta[k].sin() + vehicle.c_r * theta[k].cos());
        b.add_equality(
            &term(map.e_kin[k + 1], 1.0)
                .add_term(e, -(1.0 - ds * drag_lin))
                .add_term(map.f_p[k], -ds * f_ref / e_ref)
                .add_const(ds * grade / e_ref),
        );

        // driveline relaxations
        let (p, gb, fmk) = (map.f_p[k], map.f_gb[k], map.f_m[k]);
        b.add_nonneg(term(gb, eta_fd).add_term(p, -1.0));
        b.add_nonneg(term(gb, 1.0 / eta_fd).add_term(p, -1.0));
        b.add_nonneg(term(fmk, eta_gb).add_term(gb, -1.0));
        b.add_nonneg(term(fmk, 1.0 / eta_gb).add_term(gb, -1.0));

        // motor limits
        let g = map.gamma_expr(k);
        let torque = g.clone().scaled(torque_coef);
        b.add_nonneg(torque.clone().add_term(fmk, -1.0));
        b.add_nonneg(torque.add_term(fmk, 1.0));
        let power = g.clone().scaled(power_gamma).add_term(tau, power_tau);
        b.add_nonneg(power.clone().add_term(fmk, -1.0));
        b.add_nonneg(power.add_term(fmk, 1.0));
        b.add_nonneg(var(tau).minus(&g.clone().scaled(speed_coef)));
        if let RatioVars::PerNode(v) = &map.gamma {
            b.add_nonneg(term(v[k], 1.0).add_const(-transmission.gamma_min));
            b.add_nonneg(term(v[k], -1.0).add_const(transmission.gamma_max));
        }

        // motor losses
        let slack = term(map.f_dc[k], 1.0).add_term(fmk, -1.0);
        match em {
            EmModel::SpeedIndependent => {
                b.add_rotated_soc(&var(tau), &slack, &[term(fmk, alpha_m)]);
            }
            EmModel::SpeedDependent(v_bar) => {
                let w = map.omega_m.as_ref().expect("speed-dependent map has motor speed")[k];
                let vb = v_bar[k];
                // ω̂ = γ v̄ γ_fd / (r_w ω_max)
                b.add_equality(&term(w, 1.0).minus(&g.scaled(vb * vehicle.gamma_fd / (vehicle.r_w * omega_ref))));
                b.add_nonneg(term(w, -1.0).add_const(1.0));
                let lt = l_t.as_ref().expect("factor computed for speed-dependent model");
                let fm_coef = vb / v_ref;
                let z: Vec<LinExpr> = (0..3)
                    .map(|i| {
                        LinExpr::constant(lt[(i, 0)] * inv_sqrt_pref)
                            .add_term(w, lt[(i, 1)] * inv_sqrt_pref)
                            .add_term(fmk, lt[(i, 2)] * fm_coef * inv_sqrt_pref)
                    })
                    .collect();
                b.add_rotated_soc(&slack, &LinExpr::constant(vb / v_ref), &z);
            }
        }

        // battery
        b.add_equality(
            &term(map.f_b[k], 1.0)
                .add_term(map.f_dc[k], -1.0)
                .add_term(tau, -aux),
        );
        b.add_rotated_soc(
            &var(tau),
            &term(map.f_i[k], 1.0).add_term(map.f_b[k], -1.0),
            &[term(map.f_b[k], alpha_b)],
        );
        b.add_equality(
            &term(map.delta_eb[k + 1], 1.0)
                .add_term(map.delta_eb[k], -1.0)
                .add_term(map.f_i[k], -ds * f_ref / eb_ref),
        );

        // box bounds
        b.add_nonneg(term(tau, -1.0).add_const(v_ref / options.v_floor));
        b.add_nonneg(term(tau, 1.0).add_const(-1.0));
        b.add_nonneg(term(u, -1.0).add_const(1.0));
        b.add_nonneg(term(u, 1.0).add_const(-options.v_floor / v_ref));
    }
    for (k, &e) in map.e_kin.iter().enumerate() {
        b.add_nonneg(term(e, -1.0).add_const((vmax[k] / v_ref).powi(2)));
    }
    b.add_equality(&term(map.e_kin[n], 1.0).add_term(map.e_kin[0], -1.0));
    b.add_equality(&var(map.delta_eb[0]));
    b.add_nonneg(term(map.delta_eb[n], -1.0).add_const(battery.delta_eb_max() / eb_ref));
    if let RatioVars::Shared(j) = map.gamma {
        b.add_nonneg(term(j, 1.0).add_const(-transmission.gamma_min));
        b.add_nonneg(term(j, -1.0).add_const(transmission.gamma_max));
    }

    let program = b.finalize()?;
    Ok((program, map))
}

/// Maps an optimal solution back to physical units.
pub fn extract_trajectories(
    solution: &ConicSolution,
    map: &VariableMap,
    track: &TrackProfile,
    vehicle: &VehicleParams,
) -> Result<LapTrajectories, TranscriptionError> {
    if !solution.is_optimal() {
        return Err(TranscriptionError::NotOptimal(solution.status));
    }
    extract_from_point(&solution.x, map, track, vehicle)
}

pub(crate) fn extract_from_point(
    x: &[f64],
    map: &VariableMap,
    track: &TrackProfile,
    vehicle: &VehicleParams,
) -> Result<LapTrajectories, TranscriptionError> {
    let n = map.intervals();
    if track.intervals() != n || x.len() != map.num_vars {
        return Err(TranscriptionError::Dimension(format!(
            "map has {n} intervals and {} variables, track has {} intervals and solution {} entries",
            map.num_vars,
            track.intervals(),
            x.len()
        )));
    }
    let sc = map.scaling;
    // controls: N values closed periodically with node 0
    let ctrl = |idx: &[usize], k: f64| -> Vec<f64> {
        let mut v: Vec<f64> = idx.iter().map(|&j| k * x[j]).collect();
        v.push(v[0]);
        v
    };
    let state = |idx: &[usize], k: f64| -> Vec<f64> { idx.iter().map(|&j| k * x[j]).collect() };
    let dtds = ctrl(&map.dtds, 1.0 / sc.v_ref);
    let v = ctrl(&map.v, sc.v_ref);
    let f_p = ctrl(&map.f_p, sc.f_ref);
    let f_gb = ctrl(&map.f_gb, sc.f_ref);
    let f_m = ctrl(&map.f_m, sc.f_ref);
    let f_dc = ctrl(&map.f_dc, sc.f_ref);
    let f_b = ctrl(&map.f_b, sc.f_ref);
    let f_i = ctrl(&map.f_i, sc.f_ref);
    let gamma = match &map.gamma {
        RatioVars::Fixed(g) => vec![*g; n + 1],
        RatioVars::Shared(j) => vec![x[*j]; n + 1],
        RatioVars::PerNode(idx) => ctrl(idx, 1.0),
    };
    let omega_m = match &map.omega_m {
        Some(idx) => ctrl(idx, sc.omega_ref),
        None => v
            .iter()
            .zip(&gamma)
            .map(|(v, g)| g * v * vehicle.gamma_fd / vehicle.r_w)
            .collect(),
    };
    let power = |f: &[f64]| -> Vec<f64> { f.iter().zip(&v).map(|(f, v)| f * v).collect() };
    let f_brk = f_gb
        .iter()
        .zip(&f_p)
        .map(|(gb, p)| ((vehicle.eta_fd * gb).min(gb / vehicle.eta_fd) - p).max(0.0))
        .collect();
    let lap_time = map.step_length * dtds[..n].iter().sum::<f64>();
    Ok(LapTrajectories {
        s: track.positions(),
        e_kin: state(&map.e_kin, sc.e_ref),
        delta_eb: state(&map.delta_eb, sc.eb_ref),
        p_m: power(&f_m),
        p_dc: power(&f_dc),
        p_b: power(&f_b),
        p_i: power(&f_i),
        dtds,
        v,
        f_p,
        f_gb,
        f_m,
        f_dc,
        f_b,
        f_i,
        gamma,
        omega_m,
        f_brk,
        lap_time,
        step_length: map.step_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use laptime_conic::{solve, ConeKind, SolverSettings};
    use approx::assert_relative_eq;

    fn flat(n: usize) -> TrackProfile {
        TrackProfile::from_profile("flat", 10.0, &vec![0.0; n + 1], &vec![50.0; n + 1]).unwrap()
    }

    #[test]
    fn structural_counts_on_three_nodes() {
        let f = fixtures::sr_setup();
        let track = flat(2);
        let (p, map) = build_problem2(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &Default::default()).unwrap();
        let socs = p.cones.iter().filter(|c| matches!(c, ConeKind::SecondOrder(_))).count();
        // lethargy, kinetic, motor and battery cone per interval
        assert_eq!(socs, 4 * 2);
        // dynamics and battery chains, f_b definition, periodicity, ΔE_b[0] = 0
        assert_eq!(p.num_eq(), 3 * 2 + 2);
        assert_eq!(map.e_kin.len(), 3);
        assert_eq!(map.delta_eb.len(), 3);
        assert_eq!(p.num_vars, 10 * 2 + 2 + 1);
    }

    #[test]
    fn cvt_variable_count() {
        let f = fixtures::cvt_setup();
        let n = 7;
        let (p, map) = build_problem2(&flat(n), &f.vehicle, &f.transmission, &f.motor, &f.battery, &Default::default()).unwrap();
        assert_eq!(p.num_vars, 10 * n + 2 + n);
        let (p3, _) = build_problem3(&flat(n), &f.vehicle, &f.transmission, &f.motor, &f.battery, &vec![40.0; n + 1], &Default::default()).unwrap();
        assert_eq!(p3.num_vars, 10 * n + 2 + 2 * n);
        let mut idx = map.all_indices();
        idx.sort_unstable();
        assert_eq!(idx, (0..map.num_vars).collect::<Vec<_>>());
    }

    #[test]
    fn map_indices_are_dense_in_every_mode() {
        for (f, dep) in [(fixtures::sr_setup(), false), (fixtures::sr_setup(), true), (fixtures::cvt_setup(), true)] {
            let mut t = f.transmission;
            t.optimize_sr_ratio = t.kind == TransmissionKind::Sr && !dep;
            let track = flat(4);
            let (p, map) = if dep {
                build_problem3(&track, &f.vehicle, &t, &f.motor, &f.battery, &[30.0; 5], &Default::default()).unwrap()
            } else {
                build_problem2(&track, &f.vehicle, &t, &f.motor, &f.battery, &Default::default()).unwrap()
            };
            let mut idx = map.all_indices();
            idx.sort_unstable();
            assert_eq!(idx, (0..p.num_vars).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bad_reference_speed_is_rejected() {
        let f = fixtures::cvt_setup();
        let r = build_problem3(&flat(3), &f.vehicle, &f.transmission, &f.motor, &f.battery, &[10.0, 0.0, 10.0, 10.0], &Default::default());
        assert!(matches!(r, Err(TranscriptionError::ReferenceSpeed(_))));
        let r = build_problem3(&flat(3), &f.vehicle, &f.transmission, &f.motor, &f.battery, &[10.0; 3], &Default::default());
        assert!(matches!(r, Err(TranscriptionError::Dimension(_))));
    }

    #[test]
    fn non_psd_loss_matrix_is_rejected() {
        let mut f = fixtures::cvt_setup();
        f.motor.q[0][0] = -1.0;
        assert!(matches!(
            scaled_loss_factor(&f.motor.q, 1600.0, 6e5),
            Err(TranscriptionError::NotPsd(_))
        ));
    }

    #[test]
    fn loss_factor_reproduces_quadratic_form() {
        let f = fixtures::cvt_setup();
        let lt = scaled_loss_factor(&f.motor.q, 1600.0, 6e5).unwrap();
        let (w, p) = (900.0, 1.2e5);
        let xh = nalgebra::Vector3::new(1.0, w / 1600.0, p / 6e5);
        assert_relative_eq!((lt * xh).norm_squared(), crate::powertrain::quad_loss(&f.motor.q, w, p), max_relative = 1e-12);
    }

    #[test]
    fn cvt_with_sr_optimization_flag_is_rejected() {
        let mut f = fixtures::cvt_setup();
        f.transmission.optimize_sr_ratio = true;
        assert!(matches!(
            build_problem2(&flat(3), &f.vehicle, &f.transmission, &f.motor, &f.battery, &Default::default()),
            Err(TranscriptionError::Param(_))
        ));
    }

    #[test]
    fn extraction_sums_lethargy_and_forms_powers() {
        let f = fixtures::sr_setup();
        let track = flat(2);
        let (_, map) = build_problem2(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &Default::default()).unwrap();
        let mut x = vec![0.0; map.num_vars];
        let sc = map.scaling;
        for k in 0..2 {
            x[map.dtds[k]] = 0.02 * sc.v_ref;
            x[map.v[k]] = 50.0 / sc.v_ref;
            x[map.f_m[k]] = 1000.0 / sc.f_ref;
        }
        let t = extract_from_point(&x, &map, &track, &f.vehicle).unwrap();
        assert_relative_eq!(t.lap_time, 0.4, max_relative = 1e-14);
        assert_relative_eq!(t.p_m[0], 50e3, max_relative = 1e-14);
        assert_eq!(t.len(), 3);
        assert_eq!(t.p_m[2], t.p_m[0]);
    }

    #[test]
    fn non_optimal_solution_is_refused() {
        let f = fixtures::sr_setup();
        let track = flat(2);
        let (p, map) = build_problem2(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &Default::default()).unwrap();
        let s = SolverSettings {
            max_iters: 1,
            ..Default::default()
        };
        let sol = solve(&p, &s);
        assert!(matches!(
            extract_trajectories(&sol, &map, &track, &f.vehicle),
            Err(TranscriptionError::NotOptimal(_))
        ));
    }

    #[test]
    fn lossless_motor_has_no_conversion_slack() {
        let mut f = fixtures::cvt_setup();
        f.motor.q = [[0.0; 3]; 3];
        let track = fixtures::cornered_track(10.0);
        f.battery = BatteryModel::with_lap_budget(f.battery.alpha_b, 1.6e6, 1);
        let vb = vec![40.0; track.len()];
        let (p, map) = build_problem3(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &vb, &Default::default()).unwrap();
        let sol = solve(&p, &SolverSettings::default());
        assert!(sol.is_optimal(), "{:?}", sol.status);
        let t = extract_trajectories(&sol, &map, &track, &f.vehicle).unwrap();
        let scale = t.f_m.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..t.len() {
            assert!((t.f_dc[k] - t.f_m[k]).abs() <= 1e-4 * scale, "node {k}");
        }
    }

    #[test]
    fn constant_reference_speed_makes_motor_speed_proportional_to_ratio() {
        let f = fixtures::cvt_setup();
        let track = flat(20);
        let (p, map) = build_problem3(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &vec![50.0; 21], &Default::default()).unwrap();
        let sol = solve(&p, &SolverSettings::default());
        let t = extract_trajectories(&sol, &map, &track, &f.vehicle).unwrap();
        for k in 0..t.len() {
            assert_relative_eq!(t.omega_m[k], t.gamma[k] * 50.0 * f.vehicle.gamma_fd / f.vehicle.r_w, max_relative = 1e-9);
        }
    }

    #[test]
    fn equivalent_quadratic_loss_matches_speed_independent_optimum() {
        let mut f = fixtures::cvt_setup();
        f.battery = BatteryModel::with_lap_budget(f.battery.alpha_b, 1.6e6, 1);
        let track = fixtures::cornered_track(10.0);
        let opts = TranscriptionOptions::default();
        let (p2, m2) = build_problem2(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &opts).unwrap();
        let s2 = solve(&p2, &SolverSettings::default());
        let t2 = extract_trajectories(&s2, &m2, &track, &f.vehicle).unwrap();
        f.motor.q = [[0.0; 3]; 3];
        f.motor.q[2][2] = f.motor.alpha_m;
        let (p3, m3) = build_problem3(&track, &f.vehicle, &f.transmission, &f.motor, &f.battery, &t2.v, &opts).unwrap();
        let s3 = solve(&p3, &SolverSettings::default());
        let t3 = extract_trajectories(&s3, &m3, &track, &f.vehicle).unwrap();
        // the speed-independent optimum is feasible for the frozen-speed
        // problem, which may only improve on it to second order
        assert!(t3.lap_time <= t2.lap_time * (1.0 + 1e-8));
        assert_relative_eq!(t3.lap_time, t2.lap_time, max_relative = 1e-4);
    }
}
