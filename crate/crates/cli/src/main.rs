use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use laptime_core::config::{Setup, VehicleConfig};
use laptime_core::fitting::{fit_alpha, fit_psd_quadratic, read_samples, FitReport, LossModel};
use laptime_core::optimizer::{
    default_energy_range, linspace, solve_lap, sweep, AlgorithmSettings, LapError, LapResult, DEFAULT_ETA_RANGE,
};
use laptime_core::powertrain::TransmissionKind;
use laptime_core::track::{generate_track, load_track, Segment, TrackFormat, TrackProfile};
use log::info;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod output;

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "laptime", version, about = "Minimum-lap-time control of electric race cars")]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a loss model to measured samples.
    Fit {
        /// CSV with `power_w,loss_w` or `omega_radps,power_w,loss_w` columns.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Model file to write; defaults to `<samples>.model.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a single lap.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = Kind::Cvt)]
        transmission: Kind,
        /// Per-lap battery energy budget, MJ.
        #[arg(long)]
        energy_budget_mj: Option<f64>,
        /// Gearbox efficiency.
        #[arg(long)]
        eta_gb: Option<f64>,
    },
    /// Sweep gearbox efficiency (CVT) and energy budget (both drivetrains).
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// CVT gearbox efficiency range `a:b`.
        #[arg(long, value_parser = parse_range)]
        eta_range: Option<(f64, f64)>,
        /// Energy budget range `a:b` in MJ.
        #[arg(long, value_parser = parse_range)]
        energy_range: Option<(f64, f64)>,
        /// Grid size `NxM`: N efficiencies by M energy budgets.
        #[arg(long, value_parser = parse_grid, default_value = "15x15")]
        grid: (usize, usize),
    },
    /// Compose straights and constant-radius corners into a track file.
    GenTrack {
        /// `straight:<length>` or `corner:<length>:<radius>`, in order.
        #[arg(long = "segment", required = true)]
        segments: Vec<Segment>,
        #[arg(long, default_value_t = 10.0)]
        step: f64,
        /// Lateral acceleration limit, m/s².
        #[arg(long, default_value_t = 20.0)]
        a_lat_max: f64,
        /// Speed cap on straights, m/s.
        #[arg(long, default_value_t = 90.0)]
        v_cap: f64,
        #[arg(long, default_value = "generated")]
        name: String,
        /// Output file; `.json` selects JSON, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accumulated time difference between two trajectory files, joined on s.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the joined table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    #[arg(long)]
    track: PathBuf,
    /// Vehicle configuration (JSON); the built-in reference vehicles otherwise.
    #[arg(long)]
    vehicle: Option<PathBuf>,
    /// Velocity fixed-point tolerance, m/s RMS.
    #[arg(long)]
    epsilon_v: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitKind {
    #[value(name = "alpha_m", alias = "alpha-m")]
    AlphaM,
    #[value(name = "alpha_b", alias = "alpha-b")]
    AlphaB,
    Psd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Sr,
    Cvt,
}

impl From<Kind> for TransmissionKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Sr => TransmissionKind::Sr,
            Kind::Cvt => TransmissionKind::Cvt,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got '{s}'"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}'"));
    let (a, b) = (num(a)?, num(b)?);
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(format!("range '{s}' must satisfy a <= b"));
    }
    Ok((a, b))
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got '{s}'"))?;
    let num = |t: &str| match t.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("grid dimension '{t}' must be a positive integer")),
    };
    Ok((num(a)?, num(b)?))
}

fn track_format(path: &Path) -> TrackFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => TrackFormat::Json,
        _ => TrackFormat::Csv,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn load_inputs(common: &CommonArgs) -> Result<(TrackProfile, VehicleConfig, AlgorithmSettings)> {
    let mut track = load_track(open(&common.track)?, track_format(&common.track))
        .with_context(|| format!("cannot load track {}", common.track.display()))?;
    if track_format(&common.track) == TrackFormat::Csv {
        if let Some(stem) = common.track.file_stem().and_then(|s| s.to_str()) {
            track = track.with_name(stem);
        }
    }
    let config = match &common.vehicle {
        Some(p) => VehicleConfig::from_reader(open(p)?).with_context(|| format!("in {}", p.display()))?,
        None => VehicleConfig::reference(),
    };
    let mut settings = config.algorithm;
    if let Some(eps) = common.epsilon_v {
        settings.epsilon_v = eps;
    }
    if let Err(e) = settings.validate() {
        bail!("invalid algorithm settings: {e}");
    }
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("cannot create {}", common.out_dir.display()))?;
    Ok((track, config, settings))
}

fn budget_joules(mj: f64) -> Result<f64> {
    if !(mj >= 0.0 && mj.is_finite()) {
        bail!("energy budget must be nonnegative, got {mj} MJ");
    }
    Ok(mj * 1e6)
}

fn cmd_fit(samples: &Path, kind: FitKind, out: Option<PathBuf>) -> Result<u8> {
    let data = read_samples(open(samples)?).with_context(|| format!("in {}", samples.display()))?;
    let report: FitReport = match kind {
        FitKind::AlphaM | FitKind::AlphaB => fit_alpha(&data)?.1,
        FitKind::Psd => fit_psd_quadratic(&data)?.1,
    };
    let out = out.unwrap_or_else(|| samples.with_extension("model.json"));
    output::write_model(&out, kind_name(kind), &report)?;
    match report.coefficients {
        LossModel::Quadratic { alpha } => println!("alpha = {alpha:e} 1/W"),
        LossModel::PsdQuadratic { q } => println!("Q = {q:?}"),
    }
    println!(
        "rmse = {:.4e} (relative), max residual = {:.4e} W over {} samples",
        report.rmse_relative, report.residual_max, report.samples
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn kind_name(kind: FitKind) -> &'static str {
    match kind {
        FitKind::AlphaM => "alpha_m",
        FitKind::AlphaB => "alpha_b",
        FitKind::Psd => "psd",
    }
}

fn cmd_solve(common: &CommonArgs, kind: Kind, budget_mj: Option<f64>, eta_gb: Option<f64>) -> Result<u8> {
    let (track, config, settings) = load_inputs(common)?;
    let mut setup: Setup = config.setup(kind.into());
    if let Some(mj) = budget_mj {
        setup = setup.with_budget(budget_joules(mj)?);
    }
    if let Some(eta) = eta_gb {
        setup = setup.with_eta_gb(eta);
    }
    setup.validate()?;
    info!("solving {} on {} ({} nodes)", setup.transmission.kind, track.name(), track.len());
    let result: LapResult = solve_lap(
        &track,
        &setup.vehicle,
        &setup.transmission,
        &setup.motor,
        &setup.battery,
        &settings,
    )?;
    if common.format.contains(&Format::Json) {
        let path = common.out_dir.join("summary.json");
        output::write_summary(&path, &track, &setup, &settings, &result)?;
    }
    if let Some(reason) = &result.infeasible_reason {
        eprintln!("infeasible: {reason}");
        if let Some(cert) = &result.certificate {
            eprintln!("certificate: {cert}");
        }
        return Ok(EXIT_INFEASIBLE);
    }
    let traj = result.trajectories.as_ref().expect("feasible result has trajectories");
    if common.format.contains(&Format::Csv) {
        output::write_trajectory(&common.out_dir.join("trajectory.csv"), traj)?;
    }
    println!("lap_time_s = {:.6}", traj.lap_time);
    println!(
        "outer_iterations = {}, converged = {}, energy_used_mj = {:.6}",
        result.outer_iterations,
        result.converged,
        result.energy_used.unwrap_or(f64::NAN) / 1e6
    );
    if let Some(g) = result.sr_ratio_optimal {
        println!("sr_ratio = {g:.6}");
    }
    if !result.converged {
        eprintln!("no convergence within {} outer iterations", settings.max_outer_iters);
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_sweep(
    common: &CommonArgs,
    eta_range: Option<(f64, f64)>,
    energy_range_mj: Option<(f64, f64)>,
    grid: (usize, usize),
) -> Result<u8> {
    let (track, config, settings) = load_inputs(common)?;
    let (e_lo, e_hi) = match energy_range_mj {
        Some((a, b)) => (budget_joules(a)?, budget_joules(b)?),
        None => default_energy_range(&track),
    };
    let (eta_lo, eta_hi) = eta_range.unwrap_or(DEFAULT_ETA_RANGE);
    let etas = linspace(eta_lo, eta_hi, grid.0);
    let energies = linspace(e_lo, e_hi, grid.1);
    let sr = config.setup(TransmissionKind::Sr);
    let cvt = config.setup(TransmissionKind::Cvt);
    let res = sweep(&track, &sr, &cvt, &etas, &energies, &settings)?;
    if common.format.contains(&Format::Csv) {
        output::write_sweep_csv(&common.out_dir.join("sweep.csv"), &res)?;
    }
    if common.format.contains(&Format::Json) {
        let mut w = create(&common.out_dir.join("sweep.json"))?;
        serde_json::to_writer_pretty(&mut w, &res)?;
    }
    let missing = res.delta_t.iter().flatten().filter(|d| d.is_none()).count();
    println!("{} cells, {} without a lap time difference", etas.len() * energies.len(), missing);
    Ok(0)
}

fn cmd_gen_track(segments: &[Segment], step: f64, a_lat_max: f64, v_cap: f64, name: &str, out: &Path) -> Result<u8> {
    let track = generate_track(name, segments, step, a_lat_max, v_cap)?;
    let mut w = create(out)?;
    track.save(&mut w, track_format(out))?;
    println!("{} nodes over {} m -> {}", track.len(), track.total_length(), out.display());
    Ok(0)
}

fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<u8> {
    let ra = output::read_trajectory(a)?;
    let rb = output::read_trajectory(b)?;
    let rows = output::join_on_s(&ra, &rb)?;
    match out {
        Some(p) => output::write_comparison(create(p)?, &rows)?,
        None => output::write_comparison(std::io::stdout().lock(), &rows)?,
    }
    if let Some(last) = rows.last() {
        eprintln!("accumulated time difference at s = {} m: {:.6} s", last.s_m, last.delta_t_s);
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fit { samples, kind, out } => cmd_fit(&samples, kind, out),
        Command::Solve {
            common,
            transmission,
            energy_budget_mj,
            eta_gb,
        } => cmd_solve(&common, transmission, energy_budget_mj, eta_gb),
        Command::Sweep {
            common,
            eta_range,
            energy_range,
            grid,
        } => cmd_sweep(&common, eta_range, energy_range, grid),
        Command::GenTrack {
            segments,
            step,
            a_lat_max,
            v_cap,
            name,
            out,
        } => cmd_gen_track(&segments, step, a_lat_max, v_cap, &name, &out),
        Command::Compare { a, b, out } => cmd_compare(&a, &b, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let solver_failure = e
                .downcast_ref::<LapError>()
                .is_some_and(|l| matches!(l, LapError::Seed { .. }));
            ExitCode::from(if solver_failure { EXIT_NOT_CONVERGED } else { EXIT_INPUT })
        }
    }
}
