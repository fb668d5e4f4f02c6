//! Primal-dual interior-point method on the homogeneous self-dual embedding
//! with Nesterov–Todd scaling and Mehrotra predictor-corrector steps.

use crate::cones::{self, Block, NtScaling};
use crate::equilibrate::ruiz;
use crate::kkt::KktSystem;
use crate::program::{ConeKind, ConicProgram};
use crate::sparse::{dot, norm_inf, CscMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIters,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap_rel: f64,
    pub max_iters: usize,
    pub static_regularization: f64,
    /// Iterative refinement steps per KKT solve.
    pub refinement_steps: usize,
    /// Fraction of the step to the cone boundary actually taken.
    pub step_fraction: f64,
    pub equilibration_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: 1e-8,
            tol_gap_rel: 1e-8,
            max_iters: 100,
            static_regularization: 1e-7,
            refinement_steps: 3,
            step_fraction: 0.99,
            equilibration_iters: 10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        pos("tol_feas", self.tol_feas)?;
        pos("tol_gap_rel", self.tol_gap_rel)?;
        pos("static_regularization", self.static_regularization)?;
        pos("step_fraction", self.step_fraction)?;
        if self.step_fraction >= 1.0 {
            return Err("step_fraction must be below 1".into());
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        Ok(())
    }
}

/// Scaled residual norms of the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `max(‖Ax − b‖∞ / (1 + ‖b‖∞), ‖Gx + s − h‖∞ / (1 + ‖h‖∞))`
    pub primal: f64,
    /// `‖Aᵀy + Gᵀz + c‖∞ / (1 + ‖c‖∞)`
    pub dual: f64,
    /// `sᵀz / max(1, min(|pcost|, |dcost|))`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Multipliers of `A x = b`.
    pub y: Vec<f64>,
    /// Multipliers of the cone rows (dual cone elements).
    pub z: Vec<f64>,
    /// Slack `h − G x`.
    pub s: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Internal standard form: zero cones folded into the equalities.
struct StandardForm {
    a: CscMatrix,
    b: Vec<f64>,
    g: CscMatrix,
    h: Vec<f64>,
    c: Vec<f64>,
    blocks: Vec<Block>,
    /// original cone row of each internal equality beyond the original ones
    zero_rows: Vec<usize>,
    /// original cone row of each internal cone row
    cone_rows: Vec<usize>,
}

impl StandardForm {
    fn new(p: &ConicProgram) -> Self {
        let mut zero_rows = Vec::new();
        let mut cone_rows = Vec::new();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for k in &p.cones {
            let d = k.dim();
            let rows = offset..offset + d;
            match k {
                ConeKind::Zero(_) => zero_rows.extend(rows),
                ConeKind::Nonnegative(_) => {
                    blocks.push(Block::NonNeg {
                        offset: cone_rows.len(),
                        dim: d,
                    });
                    cone_rows.extend(rows);
                }
                ConeKind::SecondOrder(_) => {
                    blocks.push(Block::Soc {
                        offset: cone_rows.len(),
                        dim: d,
                    });
                    cone_rows.extend(rows);
                }
            }
            offset += d;
        }
        let a = if zero_rows.is_empty() {
            p.a.clone()
        } else {
            p.a.vstack(&p.g.select_rows(&zero_rows))
        };
        let mut b = p.b.clone();
        b.extend(zero_rows.iter().map(|&i| p.h[i]));
        let g = p.g.select_rows(&cone_rows);
        let h = cone_rows.iter().map(|&i| p.h[i]).collect();
        StandardForm {
            a,
            b,
            g,
            h,
            c: p.c.clone(),
            blocks,
            zero_rows,
            cone_rows,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Info {
    pres: f64,
    dres: f64,
    pcost: f64,
    dcost: f64,
    gap_rel: f64,
    pinf: Option<f64>,
    dinf: Option<f64>,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkap: f64,
    /// `W⁻¹ ds` and `W dz`
    ds_l: Vec<f64>,
    dz_l: Vec<f64>,
}

/// Solves the program. Never panics on numerical trouble; the status
/// reports what happened.
///
/// # Panics
/// If `settings` fail [`SolverSettings::validate`].
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    if let Err(e) = settings.validate() {
        panic!("invalid solver settings: {e}");
    }
    let sf = StandardForm::new(program);
    let n = sf.c.len();
    let p = sf.b.len();
    let m = sf.h.len();
    let blocks = sf.blocks.clone();

    // scaled copies
    let mut a = sf.a.clone();
    let mut g = sf.g.clone();
    let eq = ruiz(&mut a, &mut g, &blocks, settings.equilibration_iters);
    let c: Vec<f64> = sf.c.iter().zip(&eq.d).map(|(v, d)| v * d).collect();
    let b: Vec<f64> = sf.b.iter().zip(&eq.e).map(|(v, e)| v * e).collect();
    let h: Vec<f64> = sf.h.iter().zip(&eq.f).map(|(v, f)| v * f).collect();

    let mut kkt = KktSystem::new(
        a.clone(),
        g.clone(),
        blocks.clone(),
        settings.static_regularization,
        settings.refinement_steps,
    );
    let deg = blocks.iter().map(Block::degree).sum::<usize>() as f64;

    let fail = |iters: usize| -> ConicSolution {
        let (x, y, z, s) = (vec![f64::NAN; n], vec![f64::NAN; p], vec![f64::NAN; m], vec![f64::NAN; m]);
        finish(program, &sf, SolveStatus::NumericalFailure, &x, &y, &z, &s, None, iters)
    };

    // initial point: least-squares primal and dual estimates, shifted into the cones
    if kkt.update(&NtScaling::identity(&blocks)).is_err() {
        return fail(0);
    }
    let mut rhs = vec![0.0; n + p + m];
    rhs[n..n + p].copy_from_slice(&b);
    rhs[n + p..].copy_from_slice(&h);
    let sol = kkt.solve(&rhs);
    let mut x = sol[..n].to_vec();
    let mut s: Vec<f64> = sol[n + p..].iter().map(|v| -v).collect();
    let ap = -cones::min_eig(&blocks, &s);
    if ap >= 0.0 {
        cones::add_identity(&blocks, &mut s, 1.0 + ap);
    }
    rhs.iter_mut().for_each(|v| *v = 0.0);
    for (r, cv) in rhs[..n].iter_mut().zip(&c) {
        *r = -cv;
    }
    let sol = kkt.solve(&rhs);
    let mut y = sol[n..n + p].to_vec();
    let mut z = sol[n + p..].to_vec();
    let ad = -cones::min_eig(&blocks, &z);
    if ad >= 0.0 {
        cones::add_identity(&blocks, &mut z, 1.0 + ad);
    }
    if m == 0 {
        // no cones: nothing to shift
        s.clear();
        z.clear();
    }
    let mut tau = 1.0;
    let mut kap = 1.0;
    if x.iter().chain(&y).chain(&z).chain(&s).any(|v| !v.is_finite()) {
        return fail(0);
    }

    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; p];
    let mut rz = vec![0.0; m];
    let mut lambda = vec![0.0; m];
    let mut tmp = vec![0.0; m];

    for iter in 0..=settings.max_iters {
        // residuals of the embedding
        rx.copy_from_slice(&c.iter().map(|v| v * tau).collect::<Vec<_>>());
        a.gemv_t(1.0, &y, &mut rx);
        g.gemv_t(1.0, &z, &mut rx);
        for (r, bv) in ry.iter_mut().zip(&b) {
            *r = bv * tau;
        }
        a.gemv(-1.0, &x, &mut ry);
        for i in 0..m {
            rz[i] = s[i] - h[i] * tau;
        }
        g.gemv(1.0, &x, &mut rz);
        let rt = kap + dot(&c, &x) + dot(&b, &y) + dot(&h, &z);

        let info = evaluate(&sf, &eq, &x, &y, &z, &s, tau, kap);
        log::trace!(
            "iter {iter:3} pcost {:+.6e} dcost {:+.6e} pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kap {:.2e}",
            info.pcost,
            info.dcost,
            info.pres,
            info.dres,
            info.gap_rel,
            tau,
            kap
        );
        let unscaled = |tau: f64| {
            let xs: Vec<f64> = x.iter().zip(&eq.d).map(|(v, d)| v * d / tau).collect();
            let ys: Vec<f64> = y.iter().zip(&eq.e).map(|(v, e)| v * e / tau).collect();
            let zs: Vec<f64> = z.iter().zip(&eq.f).map(|(v, f)| v * f / tau).collect();
            let ss: Vec<f64> = s.iter().zip(&eq.f).map(|(v, f)| v / f / tau).collect();
            (xs, ys, zs, ss)
        };
        if info.pres <= settings.tol_feas && info.dres <= settings.tol_feas && info.gap_rel <= settings.tol_gap_rel
        {
            let (xs, ys, zs, ss) = unscaled(tau);
            return finish(program, &sf, SolveStatus::Optimal, &xs, &ys, &zs, &ss, Some(info), iter);
        }
        if let Some(pinf) = info.pinf {
            if pinf <= settings.tol_feas {
                let (_, ys, zs, _) = unscaled(1.0);
                let scale = -(dot(&sf.b, &ys) + dot(&sf.h, &zs));
                let ys: Vec<f64> = ys.iter().map(|v| v / scale).collect();
                let zs: Vec<f64> = zs.iter().map(|v| v / scale).collect();
                let xs = vec![f64::NAN; n];
                let ss = vec![f64::NAN; m];
                return finish(program, &sf, SolveStatus::PrimalInfeasible, &xs, &ys, &zs, &ss, Some(info), iter);
            }
        }
        if let Some(dinf) = info.dinf {
            if dinf <= settings.tol_feas {
                let (xs, _, _, ss) = unscaled(1.0);
                let scale = -dot(&sf.c, &xs);
                let xs: Vec<f64> = xs.iter().map(|v| v / scale).collect();
                let ss: Vec<f64> = ss.iter().map(|v| v / scale).collect();
                let ys = vec![f64::NAN; p];
                let zs = vec![f64::NAN; m];
                return finish(program, &sf, SolveStatus::DualInfeasible, &xs, &ys, &zs, &ss, Some(info), iter);
            }
        }
        if iter == settings.max_iters {
            let (xs, ys, zs, ss) = unscaled(tau);
            return finish(program, &sf, SolveStatus::MaxIters, &xs, &ys, &zs, &ss, Some(info), iter);
        }

        // scaling and factorization
        let w = match NtScaling::new(&blocks, &s, &z) {
            Ok(w) => w,
            Err(_) => {
                let (xs, ys, zs, ss) = unscaled(tau);
                return finish(program, &sf, SolveStatus::NumericalFailure, &xs, &ys, &zs, &ss, Some(info), iter);
            }
        };
        w.apply(&blocks, &z, &mut lambda);
        if kkt.update(&w).is_err() {
            let (xs, ys, zs, ss) = unscaled(tau);
            return finish(program, &sf, SolveStatus::NumericalFailure, &xs, &ys, &zs, &ss, Some(info), iter);
        }
        let mut rhs1 = vec![0.0; n + p + m];
        for (r, cv) in rhs1[..n].iter_mut().zip(&c) {
            *r = -cv;
        }
        rhs1[n..n + p].copy_from_slice(&b);
        rhs1[n + p..].copy_from_slice(&h);
        let sol1 = kkt.solve(&rhs1);
        let denom = dot(&c, &sol1[..n]) + dot(&b, &sol1[n..n + p]) + dot(&h, &sol1[n + p..]) - kap / tau;

        let mu = (dot(&s, &z) + tau * kap) / (deg + 1.0);

        let direction = |dxr: &[f64], dyr: &[f64], dzr: &[f64], dtr: f64, d_s: &[f64], d_k: f64| -> Direction {
            let mut ls = vec![0.0; m];
            cones::jordan_div(&blocks, &lambda, d_s, &mut ls);
            let mut wls = vec![0.0; m];
            w.apply(&blocks, &ls, &mut wls);
            let mut rhs2 = vec![0.0; n + p + m];
            rhs2[..n].copy_from_slice(dxr);
            for (r, v) in rhs2[n..n + p].iter_mut().zip(dyr) {
                *r = -v;
            }
            for i in 0..m {
                rhs2[n + p + i] = dzr[i] - wls[i];
            }
            let sol2 = kkt.solve(&rhs2);
            let num = dtr - d_k / tau - (dot(&c, &sol2[..n]) + dot(&b, &sol2[n..n + p]) + dot(&h, &sol2[n + p..]));
            let dtau = num / denom;
            let comb = |k: usize| sol2[k] + dtau * sol1[k];
            let dx: Vec<f64> = (0..n).map(comb).collect();
            let dy: Vec<f64> = (n..n + p).map(comb).collect();
            let dz: Vec<f64> = (n + p..n + p + m).map(comb).collect();
            let mut dz_l = vec![0.0; m];
            w.apply(&blocks, &dz, &mut dz_l);
            let ds_l: Vec<f64> = ls.iter().zip(&dz_l).map(|(a, b)| a - b).collect();
            let mut ds = vec![0.0; m];
            w.apply(&blocks, &ds_l, &mut ds);
            let dkap = (d_k - kap * dtau) / tau;
            Direction {
                dx,
                dy,
                dz,
                ds,
                dtau,
                dkap,
                ds_l,
                dz_l,
            }
        };
        let max_alpha = |d: &Direction| -> f64 {
            let mut am = cones::max_step(&blocks, &lambda, &d.ds_l).min(cones::max_step(&blocks, &lambda, &d.dz_l));
            if d.dtau < 0.0 {
                am = am.min(-tau / d.dtau);
            }
            if d.dkap < 0.0 {
                am = am.min(-kap / d.dkap);
            }
            am
        };

        // predictor
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
        cones::jordan_product(&blocks, &lambda, &lambda, &mut tmp);
        let ds_aff = neg(&tmp);
        let aff = direction(&neg(&rx), &neg(&ry), &neg(&rz), -rt, &ds_aff, -tau * kap);
        let alpha_aff = max_alpha(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(1e-4, 1.0);

        // corrector
        let mut d_s = vec![0.0; m];
        cones::jordan_product(&blocks, &aff.ds_l, &aff.dz_l, &mut d_s);
        for i in 0..m {
            d_s[i] = -tmp[i] - d_s[i];
        }
        cones::add_identity(&blocks, &mut d_s, sigma * mu);
        let d_k = -tau * kap - aff.dtau * aff.dkap + sigma * mu;
        let f = -(1.0 - sigma);
        let scale = |v: &[f64]| v.iter().map(|x| f * x).collect::<Vec<f64>>();
        let dir = direction(&scale(&rx), &scale(&ry), &scale(&rz), f * rt, &d_s, d_k);
        let alpha = (settings.step_fraction * max_alpha(&dir)).min(1.0);
        if !(alpha > 1e-12) || !dir.dtau.is_finite() {
            let (xs, ys, zs, ss) = unscaled(tau);
            return finish(program, &sf, SolveStatus::NumericalFailure, &xs, &ys, &zs, &ss, Some(info), iter);
        }

        for (v, d) in x.iter_mut().zip(&dir.dx) {
            *v += alpha * d;
        }
        for (v, d) in y.iter_mut().zip(&dir.dy) {
            *v += alpha * d;
        }
        for (v, d) in z.iter_mut().zip(&dir.dz) {
            *v += alpha * d;
        }
        for (v, d) in s.iter_mut().zip(&dir.ds) {
            *v += alpha * d;
        }
        tau += alpha * dir.dtau;
        kap += alpha * dir.dkap;
    }
    unreachable!("loop returns on its final iteration")
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    sf: &StandardForm,
    eq: &crate::equilibrate::Equilibration,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    s: &[f64],
    tau: f64,
    kap: f64,
) -> Info {
    // homogeneous (not divided by tau) unscaled quantities
    let xh: Vec<f64> = x.iter().zip(&eq.d).map(|(v, d)| v * d).collect();
    let yh: Vec<f64> = y.iter().zip(&eq.e).map(|(v, e)| v * e).collect();
    let zh: Vec<f64> = z.iter().zip(&eq.f).map(|(v, f)| v * f).collect();
    let sh: Vec<f64> = s.iter().zip(&eq.f).map(|(v, f)| v / f).collect();

    let ax = sf.a.mul_vec(&xh);
    let mut gxs = sf.g.mul_vec(&xh);
    for (v, si) in gxs.iter_mut().zip(&sh) {
        *v += si;
    }
    let mut aty = sf.a.tmul_vec(&yh);
    sf.g.gemv_t(1.0, &zh, &mut aty);

    let pres_eq = ax.iter().zip(&sf.b).map(|(v, b)| (v / tau - b).abs()).fold(0.0, f64::max);
    let pres_cone = gxs.iter().zip(&sf.h).map(|(v, h)| (v / tau - h).abs()).fold(0.0, f64::max);
    let pres = (pres_eq / (1.0 + norm_inf(&sf.b))).max(pres_cone / (1.0 + norm_inf(&sf.h)));
    let dres = aty.iter().zip(&sf.c).map(|(v, c)| (v / tau + c).abs()).fold(0.0, f64::max) / (1.0 + norm_inf(&sf.c));
    let ctx = dot(&sf.c, &xh);
    let btyhtz = dot(&sf.b, &yh) + dot(&sf.h, &zh);
    let pcost = ctx / tau;
    let dcost = -btyhtz / tau;
    let gap = dot(&sh, &zh) / (tau * tau);
    let gap_rel = gap / pcost.abs().min(dcost.abs()).max(1.0);

    let pinf = (btyhtz < 0.0 && kap > tau).then(|| norm_inf(&aty) / -btyhtz);
    let dinf = (ctx < 0.0 && kap > tau).then(|| norm_inf(&ax).max(norm_inf(&gxs)) / -ctx);
    Info {
        pres,
        dres,
        pcost,
        dcost,
        gap_rel,
        pinf,
        dinf,
    }
}

/// Maps internal vectors back onto the original program rows.
#[allow(clippy::too_many_arguments)]
fn finish(
    program: &ConicProgram,
    sf: &StandardForm,
    status: SolveStatus,
    x: &[f64],
    y_int: &[f64],
    z_int: &[f64],
    s_int: &[f64],
    info: Option<Info>,
    iterations: usize,
) -> ConicSolution {
    let p0 = program.num_eq();
    let m0 = program.num_cone_rows();
    let y = y_int[..p0].to_vec();
    let mut z = vec![0.0; m0];
    let mut s = vec![0.0; m0];
    for (k, &row) in sf.zero_rows.iter().enumerate() {
        z[row] = y_int[p0 + k];
    }
    for (k, &row) in sf.cone_rows.iter().enumerate() {
        z[row] = z_int[k];
        s[row] = s_int[k];
    }
    let (objective_value, dual_objective) = match status {
        SolveStatus::PrimalInfeasible => (f64::INFINITY, f64::INFINITY),
        SolveStatus::DualInfeasible => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        _ => info.map_or((f64::NAN, f64::NAN), |i| (i.pcost, i.dcost)),
    };
    let residuals = info.map_or(
        Residuals {
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
        },
        |i| Residuals {
            primal: i.pres,
            dual: i.dres,
            gap: i.gap_rel,
        },
    );
    ConicSolution {
        status,
        x: x.to_vec(),
        y,
        z,
        s,
        objective_value,
        dual_objective,
        residuals,
        iterations,
    }
}
