//! Identification of loss-model coefficients from sampled loss maps.

use crate::powertrain::quad_loss;
use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no samples")]
    NoSamples,
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("underdetermined fit: {0}")]
    Underdetermined(String),
    #[error("sample {index} has no motor speed")]
    MissingSpeed { index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One point of a loss map. `omega` is absent for battery samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub omega: Option<f64>,
    /// Mechanical power (motor) or terminal power (battery), watts.
    pub power: f64,
    pub measured_loss: f64,
}

impl LossSample {
    pub fn new(omega: Option<f64>, power: f64, measured_loss: f64) -> Self {
        LossSample {
            omega,
            power,
            measured_loss,
        }
    }
}

/// A fitted loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// `loss = α P²`
    Quadratic { alpha: f64 },
    /// `loss = xᵀ Q x`, `x = [1, ω, P]`
    PsdQuadratic { q: [[f64; 3]; 3] },
}

impl LossModel {
    pub fn loss(&self, s: &LossSample) -> f64 {
        match self {
            LossModel::Quadratic { alpha } => alpha * s.power * s.power,
            LossModel::PsdQuadratic { q } => quad_loss(q, s.omega.unwrap_or(0.0), s.power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: LossModel,
    pub rmse_relative: f64,
    /// Largest absolute residual, watts.
    pub residual_max: f64,
    pub samples: usize,
}

fn report(model: LossModel, samples: &[LossSample]) -> FitReport {
    let residual_max = samples
        .iter()
        .map(|s| (model.loss(s) - s.measured_loss).abs())
        .fold(0.0, f64::max);
    FitReport {
        coefficients: model,
        rmse_relative: evaluate_rmse(&model, samples).unwrap_or(0.0),
        residual_max,
        samples: samples.len(),
    }
}

/// RMS of predicted minus measured electrical power, divided by the largest
/// measured electrical power magnitude (`power + measured_loss`).
pub fn evaluate_rmse(model: &LossModel, samples: &[LossSample]) -> Result<f64, FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    let mut sse = 0.0;
    let mut scale = 0.0f64;
    for s in samples {
        let measured = s.power + s.measured_loss;
        let predicted = s.power + model.loss(s);
        sse += (predicted - measured).powi(2);
        scale = scale.max(measured.abs());
    }
    let rms = (sse / samples.len() as f64).sqrt();
    Ok(if scale > 0.0 { rms / scale } else { rms })
}

/// Least-squares fit of `loss = α P²` through the origin, clamped to `α ≥ 0`.
pub fn fit_alpha(samples: &[LossSample]) -> Result<(f64, FitReport), FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.power).filter(|p| *p != 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.is_empty() {
        return Err(FitError::Degenerate("all powers are zero".into()));
    }
    // normalize powers to keep P⁴ in range
    let ps = samples.iter().fold(0.0f64, |m, s| m.max(s.power.abs()));
    let (mut num, mut den) = (0.0, 0.0);
    for s in samples {
        let p2 = (s.power / ps).powi(2);
        num += s.measured_loss * p2;
        den += p2 * p2;
    }
    let alpha = (num / den / (ps * ps)).max(0.0);
    let model = LossModel::Quadratic { alpha };
    Ok((alpha, report(model, samples)))
}

/// Orthonormal coordinates of a symmetric 3×3 matrix under the Frobenius
/// inner product: diagonal entries, then √2 times the off-diagonals.
fn to_coords(m: &Matrix3<f64>) -> Vector6<f64> {
    let r = std::f64::consts::SQRT_2;
    Vector6::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], r * m[(0, 1)], r * m[(0, 2)], r * m[(1, 2)])
}

fn from_coords(v: &Vector6<f64>) -> Matrix3<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (a, b, c) = (r * v[3], r * v[4], r * v[5]);
    Matrix3::new(v[0], a, b, a, v[1], c, b, c, v[2])
}

fn project_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = eig.eigenvectors;
    let p = v * Matrix3::from_diagonal(&clipped) * v.transpose();
    (p + p.transpose()) * 0.5
}

/// PSD-constrained least squares `min Σ (xᵢᵀ Q xᵢ − lossᵢ)²`, `Q ⪰ 0`.
///
/// Features are normalized to unit range, then an accelerated projected
/// gradient method alternates a gradient step on the least-squares
/// objective with a projection onto the PSD cone (eigenvalue clipping),
/// until the Frobenius change of Q drops below 1e-10. The iteration starts
/// from the better of the projected unconstrained solution and the
/// speed-independent fit `diag(0, 0, α)`, and returns the best iterate, so
/// the result never fits worse than [`fit_alpha`].
pub fn fit_psd_quadratic(samples: &[LossSample]) -> Result<([[f64; 3]; 3], FitReport), FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    let mut omegas = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        omegas.push(s.omega.ok_or(FitError::MissingSpeed { index: i })?);
    }
    if samples.len() < 6 {
        return Err(FitError::Underdetermined(format!(
            "{} samples given, at least 6 are needed for the 6 coefficients",
            samples.len()
        )));
    }
    let distinct = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(&mut omegas.clone()) < 3 {
        return Err(FitError::Underdetermined(
            "speed excitation missing: fewer than 3 distinct motor speeds".into(),
        ));
    }
    if distinct(&mut samples.iter().map(|s| s.power).collect()) < 3 {
        return Err(FitError::Underdetermined(
            "power excitation missing: fewer than 3 distinct powers".into(),
        ));
    }

    let ls = samples.iter().fold(0.0f64, |m, s| m.max(s.measured_loss.abs()));
    if ls == 0.0 {
        let q = [[0.0; 3]; 3];
        return Ok((q, report(LossModel::PsdQuadratic { q }, samples)));
    }
    let ws = omegas.iter().fold(0.0f64, |m, w| m.max(w.abs())).max(f64::MIN_POSITIVE);
    let ps = samples.iter().fold(0.0f64, |m, s| m.max(s.power.abs())).max(f64::MIN_POSITIVE);
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0 / ws, 1.0 / ps));

    // normal equations in orthonormal coordinates of Sym(3)
    let mut gram = Matrix6::zeros();
    let mut rhs = Vector6::zeros();
    let rows: Vec<(Vector6<f64>, f64)> = samples
        .iter()
        .zip(&omegas)
        .map(|(s, &w)| {
            let x = nalgebra::Vector3::new(1.0, w / ws, s.power / ps);
            (to_coords(&(x * x.transpose())), s.measured_loss / ls)
        })
        .collect();
    for (a, l) in &rows {
        gram += a * a.transpose();
        rhs += a * *l;
    }
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 1e-12 * lmax) {
        return Err(FitError::Underdetermined(format!(
            "design matrix is rank deficient (eigenvalue ratio {:.1e}); vary speed and power jointly",
            lmin / lmax
        )));
    }
    let objective = |q: &Vector6<f64>| rows.iter().map(|(a, l)| (a.dot(q) - l).powi(2)).sum::<f64>();
    let project = |q: &Vector6<f64>| to_coords(&project_psd(&from_coords(q)));

    let unconstrained = eig.eigenvectors * eig.eigenvalues.map(|v| 1.0 / v).component_mul(&(eig.eigenvectors.transpose() * rhs));
    let start_ls = project(&unconstrained);
    let (alpha, _) = fit_alpha(samples)?;
    let alpha_n = alpha * ps * ps / ls;
    let start_alpha = to_coords(&Matrix3::from_diagonal(&nalgebra::Vector3::new(0.0, 0.0, alpha_n)));
    let mut best = if objective(&start_ls) <= objective(&start_alpha) {
        start_ls
    } else {
        start_alpha
    };
    let mut best_obj = objective(&best);

    let step = 1.0 / lmax;
    let mut q = best;
    let mut q_prev = best;
    let mut t = 1.0f64;
    let mut prev_obj = best_obj;
    for _ in 0..200_000 {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let yk = q + (q - q_prev) * ((t - 1.0) / t_next);
        let grad = gram * yk - rhs;
        let q_next = project(&(yk - grad * step));
        let change = (q_next - q).norm();
        let obj = objective(&q_next);
        q_prev = q;
        q = q_next;
        t = t_next;
        if obj < best_obj {
            best_obj = obj;
            best = q;
        }
        if obj > prev_obj {
            // adaptive restart
            t = 1.0;
            q_prev = q;
        }
        prev_obj = obj;
        if change < 1e-10 {
            break;
        }
    }

    let qn = project_psd(&from_coords(&best));
    let qm = d * qn * d * ls;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (qm[(i, j)] + qm[(j, i)]);
        }
    }
    Ok((out, report(LossModel::PsdQuadratic { q: out }, samples)))
}

/// Reads `omega_radps,power_w,loss_w` or `power_w,loss_w` sample tables.
pub fn read_samples(r: impl Read) -> Result<Vec<LossSample>, FitError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => {
            return Err(FitError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
    };
    let with_speed = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["omega_radps", "power_w", "loss_w"] => true,
        ["power_w", "loss_w"] => false,
        [] | [""] => return Err(FitError::NoSamples),
        _ => {
            return Err(FitError::Parse {
                line: 1,
                message: "expected header 'omega_radps,power_w,loss_w' or 'power_w,loss_w'".into(),
            })
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FitError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64, FitError> {
            let f = rec.get(i).unwrap_or("");
            f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| FitError::Parse {
                line,
                message: format!("bad number '{f}'"),
            })
        };
        let s = if with_speed {
            LossSample::new(Some(num(0)?), num(1)?, num(2)?)
        } else {
            LossSample::new(None, num(0)?, num(1)?)
        };
        out.push(s);
    }
    if out.is_empty() {
        return Err(FitError::NoSamples);
    }
    Ok(out)
}
