//! Discretized racetracks: inclination and maximum-speed profiles on a
//! uniform position grid.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid track: {0}")]
    Validation(String),
    #[error("non-uniform grid: {0}")]
    NonUniform(String),
    #[error("step must divide track length ({length} m is not a multiple of {step} m)")]
    StepDoesNotDivide { length: f64, step: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TrackFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TrackFormat::Csv),
            "json" => Ok(TrackFormat::Json),
            other => Err(format!("unknown track format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackNode {
    #[serde(rename = "s")]
    pub position: f64,
    #[serde(rename = "theta")]
    pub inclination_theta: f64,
    pub v_max: f64,
}

/// A validated track on a uniform grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackProfile {
    name: String,
    #[serde(rename = "step_length_m")]
    step_length: f64,
    nodes: Vec<TrackNode>,
}

#[derive(Deserialize)]
struct TrackFile {
    name: String,
    step_length_m: f64,
    nodes: Vec<TrackNode>,
}

const CSV_HEADER: [&str; 3] = ["position_m", "theta_rad", "v_max_mps"];
const CURVATURE_HEADER: [&str; 2] = ["position_m", "curvature_per_m"];

fn grid_tolerance(step: f64, n: usize) -> f64 {
    1e-9 * step.max(1.0) * (n as f64).max(1.0)
}

impl TrackProfile {
    pub fn new(name: impl Into<String>, step_length: f64, nodes: Vec<TrackNode>) -> Result<Self, TrackError> {
        let t = TrackProfile {
            name: name.into(),
            step_length,
            nodes,
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds a track starting at position 0 from per-node arrays.
    pub fn from_profile(
        name: impl Into<String>,
        step_length: f64,
        theta: &[f64],
        v_max: &[f64],
    ) -> Result<Self, TrackError> {
        if theta.len() != v_max.len() {
            return Err(TrackError::Validation(format!(
                "theta has {} entries but v_max has {}",
                theta.len(),
                v_max.len()
            )));
        }
        let nodes = theta
            .iter()
            .zip(v_max)
            .enumerate()
            .map(|(k, (&th, &v))| TrackNode {
                position: k as f64 * step_length,
                inclination_theta: th,
                v_max: v,
            })
            .collect();
        Self::new(name, step_length, nodes)
    }

    fn validate(&self) -> Result<(), TrackError> {
        let h = self.step_length;
        if !(h > 0.0 && h.is_finite()) {
            return Err(TrackError::Validation(format!("step length {h} must be positive")));
        }
        if self.nodes.len() < 2 {
            return Err(TrackError::Validation("at least two nodes are required".into()));
        }
        for (k, n) in self.nodes.iter().enumerate() {
            if !(n.v_max > 0.0 && n.v_max.is_finite()) {
                return Err(TrackError::Validation(format!("node {k}: v_max {} must be positive", n.v_max)));
            }
            if !(n.inclination_theta.abs() < std::f64::consts::FRAC_PI_2) {
                return Err(TrackError::Validation(format!(
                    "node {k}: inclination {} outside (-pi/2, pi/2)",
                    n.inclination_theta
                )));
            }
            if !n.position.is_finite() {
                return Err(TrackError::Validation(format!("node {k}: position is not finite")));
            }
        }
        let s0 = self.nodes[0].position;
        let tol = grid_tolerance(h, self.nodes.len());
        for (k, w) in self.nodes.windows(2).enumerate() {
            if w[1].position <= w[0].position {
                return Err(TrackError::Validation(format!(
                    "positions must be strictly increasing (node {})",
                    k + 1
                )));
            }
            let expected = s0 + (k + 1) as f64 * h;
            if (w[1].position - expected).abs() > tol {
                return Err(TrackError::NonUniform(format!(
                    "node {} at {} m, expected {} m",
                    k + 1,
                    w[1].position,
                    expected
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn nodes(&self) -> &[TrackNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of Euler intervals (node count − 1).
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn total_length(&self) -> f64 {
        self.step_length * self.intervals() as f64
    }

    pub fn theta(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.inclination_theta).collect()
    }

    pub fn v_max(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.v_max).collect()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.position).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.nodes.iter().fold(0.0f64, |m, n| m.max(n.v_max))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Resamples onto a grid with step `new_step`, which must divide the length.
    pub fn resample(&self, new_step: f64) -> Result<TrackProfile, TrackError> {
        RawTrack {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
        }
        .resample(new_step)
    }

    pub fn save(&self, mut w: impl Write, format: TrackFormat) -> Result<(), TrackError> {
        match format {
            TrackFormat::Json => {
                serde_json::to_writer_pretty(&mut w, self)?;
                writeln!(w)?;
            }
            TrackFormat::Csv => {
                writeln!(w, "{}", CSV_HEADER.join(","))?;
                for n in &self.nodes {
                    writeln!(w, "{:?},{:?},{:?}", n.position, n.inclination_theta, n.v_max)?;
                }
            }
        }
        Ok(())
    }
}

/// Track table that may sit on a non-uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub name: String,
    pub nodes: Vec<TrackNode>,
}

impl RawTrack {
    pub fn from_csv(r: impl Read, name: impl Into<String>) -> Result<Self, TrackError> {
        Ok(RawTrack {
            name: name.into(),
            nodes: read_csv_nodes(r)?,
        })
    }

    /// Linear interpolation of θ; `v_max` at each new node is the minimum of
    /// the original values on `[s_j, s_{j+1})` and the two original nodes
    /// bracketing `s_j`, so the coarse envelope never exceeds the fine one.
    pub fn resample(&self, new_step: f64) -> Result<TrackProfile, TrackError> {
        let nodes = &self.nodes;
        if nodes.len() < 2 {
            return Err(TrackError::Validation("at least two nodes are required".into()));
        }
        for (k, w) in nodes.windows(2).enumerate() {
            if w[1].position <= w[0].position {
                return Err(TrackError::Validation(format!(
                    "positions must be strictly increasing (node {})",
                    k + 1
                )));
            }
        }
        let s0 = nodes[0].position;
        let length = nodes[nodes.len() - 1].position - s0;
        if !(new_step > 0.0 && new_step <= length) {
            return Err(TrackError::Validation(format!(
                "new step {new_step} must lie in (0, {length}]"
            )));
        }
        let ratio = length / new_step;
        let count = ratio.round();
        if (ratio - count).abs() > 1e-9 * ratio.max(1.0) {
            return Err(TrackError::StepDoesNotDivide { length, step: new_step });
        }
        let count = count as usize;
        let tol = 1e-9 * new_step;
        let mut out = Vec::with_capacity(count + 1);
        let mut lo = 0usize; // last original index with position <= s
        for j in 0..=count {
            let s = s0 + j as f64 * new_step;
            while lo + 1 < nodes.len() && nodes[lo + 1].position <= s + tol {
                lo += 1;
            }
            let a = &nodes[lo];
            let theta;
            let mut vmax;
            if (a.position - s).abs() <= tol || lo + 1 == nodes.len() {
                theta = a.inclination_theta;
                vmax = a.v_max;
            } else {
                let b = &nodes[lo + 1];
                let t = (s - a.position) / (b.position - a.position);
                theta = a.inclination_theta + t * (b.inclination_theta - a.inclination_theta);
                vmax = a.v_max.min(b.v_max);
            }
            if j < count {
                let s_next = s + new_step;
                for n in &nodes[lo..] {
                    if n.position >= s_next - tol {
                        break;
                    }
                    if n.position >= s - tol {
                        vmax = vmax.min(n.v_max);
                    }
                }
            }
            out.push(TrackNode {
                position: s,
                inclination_theta: theta,
                v_max: vmax,
            });
        }
        TrackProfile::new(self.name.clone(), new_step, out)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> TrackError {
    TrackError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_reader(r: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

fn header_of(rdr: &mut csv::Reader<impl Read>) -> Result<Vec<String>, TrackError> {
    let h = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    Ok(h.iter().map(|s| s.to_string()).collect())
}

fn parse_f64(field: Option<&str>, line: usize, what: &str) -> Result<f64, TrackError> {
    let f = field.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    let v: f64 = f.parse().map_err(|_| parse_err(line, format!("bad {what} '{f}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} is not finite")));
    }
    Ok(v)
}

fn read_csv_nodes(r: impl Read) -> Result<Vec<TrackNode>, TrackError> {
    let mut rdr = csv_reader(r);
    let header = header_of(&mut rdr)?;
    if header == CURVATURE_HEADER {
        return Err(parse_err(
            1,
            "curvature tracks need a lateral acceleration limit; load them with load_curvature_csv",
        ));
    }
    if header != CSV_HEADER {
        return Err(parse_err(1, format!("expected header '{}'", CSV_HEADER.join(","))));
    }
    let mut nodes = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        nodes.push(TrackNode {
            position: parse_f64(rec.get(0), line, "position")?,
            inclination_theta: parse_f64(rec.get(1), line, "theta")?,
            v_max: parse_f64(rec.get(2), line, "v_max")?,
        });
    }
    Ok(nodes)
}

/// Reads a uniform-grid track. Non-uniform grids are rejected; use
/// [`RawTrack::from_csv`] and [`RawTrack::resample`] for those.
pub fn load_track(r: impl Read, format: TrackFormat) -> Result<TrackProfile, TrackError> {
    match format {
        TrackFormat::Json => {
            let f: TrackFile = serde_json::from_reader(r)?;
            TrackProfile::new(f.name, f.step_length_m, f.nodes)
        }
        TrackFormat::Csv => {
            let nodes = read_csv_nodes(r)?;
            if nodes.len() < 2 {
                return Err(TrackError::Validation("at least two nodes are required".into()));
            }
            let step = nodes[1].position - nodes[0].position;
            TrackProfile::new("track", step, nodes)
        }
    }
}

/// Reads a `position_m,curvature_per_m` table and converts it to a flat
/// track with `v_max` from [`precompute_vmax`].
pub fn load_curvature_csv(r: impl Read, a_lat_max: f64, v_cap: f64) -> Result<TrackProfile, TrackError> {
    let mut rdr = csv_reader(r);
    let header = header_of(&mut rdr)?;
    if header != CURVATURE_HEADER {
        return Err(parse_err(1, format!("expected header '{}'", CURVATURE_HEADER.join(","))));
    }
    let mut pos = Vec::new();
    let mut kappa = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        pos.push(parse_f64(rec.get(0), line, "position")?);
        kappa.push(parse_f64(rec.get(1), line, "curvature")?);
    }
    let vmax = precompute_vmax(&kappa, a_lat_max, v_cap)?;
    if pos.len() < 2 {
        return Err(TrackError::Validation("at least two nodes are required".into()));
    }
    let nodes = pos
        .iter()
        .zip(&vmax)
        .map(|(&p, &v)| TrackNode {
            position: p,
            inclination_theta: 0.0,
            v_max: v,
        })
        .collect();
    TrackProfile::new("track", pos[1] - pos[0], nodes)
}

/// `v_max[k] = min(v_cap, sqrt(a_lat_max / |κ[k]|))`, `v_cap` where `κ = 0`.
pub fn precompute_vmax(curvature: &[f64], a_lat_max: f64, v_cap: f64) -> Result<Vec<f64>, TrackError> {
    if !(a_lat_max > 0.0 && a_lat_max.is_finite()) {
        return Err(TrackError::Validation(format!("a_lat_max {a_lat_max} must be positive")));
    }
    if !(v_cap > 0.0 && v_cap.is_finite()) {
        return Err(TrackError::Validation(format!("v_cap {v_cap} must be positive")));
    }
    curvature
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            if !c.is_finite() {
                Err(TrackError::Validation(format!("curvature at node {k} is not finite")))
            } else if c == 0.0 {
                Ok(v_cap)
            } else {
                Ok(v_cap.min((a_lat_max / c.abs()).sqrt()))
            }
        })
        .collect()
}

/// A piece of a generated track with constant curvature (0 for straights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub length: f64,
    pub curvature: f64,
}

impl std::str::FromStr for Segment {
    type Err = String;

    /// `straight:<length>` or `corner:<length>:<radius>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("bad number '{t}' in segment '{s}'"));
        match parts.as_slice() {
            ["straight", l] => Ok(Segment {
                length: num(l)?,
                curvature: 0.0,
            }),
            ["corner", l, r] => {
                let r = num(r)?;
                if r == 0.0 {
                    return Err(format!("corner radius must be nonzero in '{s}'"));
                }
                Ok(Segment {
                    length: num(l)?,
                    curvature: 1.0 / r,
                })
            }
            _ => Err(format!("segment '{s}' must be straight:<len> or corner:<len>:<radius>")),
        }
    }
}

/// Composes constant-curvature segments into a flat track.
///
/// Node `k` at `s = kΔs` takes the curvature of the segment that contains
/// it; a node on a boundary belongs to both neighbours and takes the larger
/// curvature magnitude.
pub fn generate_track(
    name: &str,
    segments: &[Segment],
    step: f64,
    a_lat_max: f64,
    v_cap: f64,
) -> Result<TrackProfile, TrackError> {
    if segments.is_empty() {
        return Err(TrackError::Validation("no segments".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(TrackError::Validation(format!("step {step} must be positive")));
    }
    let mut bounds = Vec::with_capacity(segments.len() + 1);
    bounds.push(0.0);
    for seg in segments {
        if !(seg.length > 0.0 && seg.length.is_finite()) {
            return Err(TrackError::Validation(format!("segment length {} must be positive", seg.length)));
        }
        bounds.push(bounds.last().unwrap() + seg.length);
    }
    let length = *bounds.last().unwrap();
    let ratio = length / step;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(TrackError::StepDoesNotDivide { length, step });
    }
    let count = ratio.round() as usize;
    let tol = 1e-9 * step;
    let kappa: Vec<f64> = (0..=count)
        .map(|k| {
            let s = k as f64 * step;
            segments
                .iter()
                .enumerate()
                .filter(|(i, _)| s >= bounds[*i] - tol && s <= bounds[i + 1] + tol)
                .map(|(_, seg)| seg.curvature.abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let vmax = precompute_vmax(&kappa, a_lat_max, v_cap)?;
    TrackProfile::from_profile(name, step, &vec![0.0; count + 1], &vmax)
}
