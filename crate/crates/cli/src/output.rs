//! Tables and summaries written by the commands.

use anyhow::{bail, Context, Result};
use laptime_core::config::Setup;
use laptime_core::fitting::FitReport;
use laptime_core::optimizer::{AlgorithmSettings, Certificate, LapResult, OuterIteration, SweepResult, TightnessReport};
use laptime_core::track::TrackProfile;
use laptime_core::transcription::LapTrajectories;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One row of the per-node trajectory table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub s_m: f64,
    pub v_mps: f64,
    /// Elapsed time since the start line.
    pub t_s: f64,
    pub p_m_w: f64,
    pub gamma: f64,
    pub f_brk_n: f64,
    pub delta_eb_j: f64,
}

pub fn write_trajectory(path: &Path, traj: &LapTrajectories) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    let t = traj.elapsed();
    for k in 0..traj.len() {
        w.serialize(TrajectoryRow {
            s_m: traj.s[k],
            v_mps: traj.v[k],
            t_s: t[k],
            p_m_w: traj.p_m[k],
            gamma: traj.gamma[k],
            f_brk_n: traj.f_brk[k],
            delta_eb_j: traj.delta_eb[k],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<TrajectoryRow>, _>>()
        .with_context(|| format!("malformed trajectory table {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub s_m: f64,
    pub t_a_s: f64,
    pub t_b_s: f64,
    /// `t_b − t_a`
    pub delta_t_s: f64,
}

/// Rows present in both tables, matched on position.
pub fn join_on_s(a: &[TrajectoryRow], b: &[TrajectoryRow]) -> Result<Vec<ComparisonRow>> {
    // positions are printed round-trip exact, so millimetre keys are safe
    let key = |s: f64| (s * 1000.0).round() as i64;
    let by_s: BTreeMap<i64, &TrajectoryRow> = b.iter().map(|r| (key(r.s_m), r)).collect();
    let rows: Vec<ComparisonRow> = a
        .iter()
        .filter_map(|ra| {
            by_s.get(&key(ra.s_m)).map(|rb| ComparisonRow {
                s_m: ra.s_m,
                t_a_s: ra.t_s,
                t_b_s: rb.t_s,
                delta_t_s: rb.t_s - ra.t_s,
            })
        })
        .collect();
    if rows.is_empty() {
        bail!("the trajectories share no positions");
    }
    Ok(rows)
}

pub fn write_comparison(w: impl Write, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ModelFile<'a> {
    kind: &'a str,
    report: &'a FitReport,
}

pub fn write_model(path: &Path, kind: &str, report: &FitReport) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(f, &ModelFile { kind, report })?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    track: &'a str,
    nodes: usize,
    step_length_m: f64,
    transmission: String,
    lap_time_s: Option<f64>,
    converged: bool,
    outer_iterations: usize,
    energy_used_j: Option<f64>,
    energy_budget_j: f64,
    sr_ratio_optimal: Option<f64>,
    tightness: Option<TightnessReport>,
    infeasible_reason: Option<&'a str>,
    certificate: Option<Certificate>,
    history: &'a [OuterIteration],
    setup: &'a Setup,
    settings: &'a AlgorithmSettings,
}

pub fn write_summary(
    path: &Path,
    track: &TrackProfile,
    setup: &Setup,
    settings: &AlgorithmSettings,
    r: &LapResult,
) -> Result<()> {
    let s = Summary {
        track: track.name(),
        nodes: track.len(),
        step_length_m: track.step_length(),
        transmission: setup.transmission.kind.to_string(),
        lap_time_s: r.lap_time(),
        converged: r.converged,
        outer_iterations: r.outer_iterations,
        energy_used_j: r.energy_used,
        energy_budget_j: setup.battery.delta_eb_max(),
        sr_ratio_optimal: r.sr_ratio_optimal,
        tightness: r.tightness_report,
        infeasible_reason: r.infeasible_reason.as_deref(),
        certificate: r.certificate,
        history: &r.history,
        setup,
        settings,
    };
    let f = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(f, &s)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    eta_gb: f64,
    energy_mj: f64,
    t_sr_s: Option<f64>,
    t_cvt_s: Option<f64>,
    delta_t_s: Option<f64>,
    status: &'a str,
}

/// One row per `(η_gb, energy)` cell.
pub fn write_sweep_csv(path: &Path, res: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for (i, &eta) in res.eta_values.iter().enumerate() {
        for (j, &e) in res.energy_values.iter().enumerate() {
            let (sr, cvt) = (&res.sr[j], &res.cvt[i][j]);
            let status = match (&sr.failure, &cvt.failure) {
                (Some(f), _) => f.as_str(),
                (None, Some(f)) => f.as_str(),
                _ if !(sr.converged && cvt.converged) => "not converged",
                _ => "ok",
            };
            w.serialize(SweepRow {
                eta_gb: eta,
                energy_mj: e / 1e6,
                t_sr_s: sr.lap_time,
                t_cvt_s: cvt.lap_time,
                delta_t_s: res.delta_t[i][j],
                status,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: f64, t: f64) -> TrajectoryRow {
        TrajectoryRow {
            s_m: s,
            v_mps: 1.0,
            t_s: t,
            p_m_w: 0.0,
            gamma: 1.0,
            f_brk_n: 0.0,
            delta_eb_j: 0.0,
        }
    }

    #[test]
    fn join_keeps_shared_positions() {
        let a = [row(0.0, 0.0), row(10.0, 1.0), row(20.0, 2.0)];
        let b = [row(0.0, 0.0), row(20.0, 2.5)];
        let j = join_on_s(&a, &b).unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j[1].delta_t_s, 0.5);
        assert!(join_on_s(&a, &[row(5.0, 0.0)]).is_err());
    }
}
