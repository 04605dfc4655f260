//! Command-line front end. `skycap <plan|simulate|experiment|reconstruct>`.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration or usage
//! error, 3 safety violation, 4 I/O or input-data error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::capture::{
    capture_records, frames_from_records, read_jsonl, recon_error, reconstruct_sequence, write_jsonl, CaptureRecord,
    GroundTruthRecord, ReconError, SkeletonSequence,
};
use crate::config::{Config, ExperimentSettings};
use crate::error::{Error, Result};
use crate::formation::trace_records;
use crate::geometry::Vec3;
use crate::simulator::{
    capture_and_reconstruct, experiment_robot_sweep, experiment_tilt_sweep, fly, plan_once, run_fixed_vs_adaptive,
    Flight, Scenario, SweepResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SAFETY: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "skycap", version, about = "Multi-drone formation planning and synthetic motion capture")]
pub struct Cli {
    /// TOML configuration file. Omitted keys use the preset defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Nothing is written outside it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed. Experiments use seed, seed+1, ...
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Also write per-step planner and flight traces.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One planning cycle: yaw sequence plus coarse and refined waypoints.
    Plan,
    /// Full closed-loop run with capture and reconstruction.
    Simulate,
    /// Parameter sweeps averaged over the configured seeds.
    Experiment {
        #[arg(long, value_enum)]
        sweep: Sweep,
    },
    /// Triangulates a recorded capture log.
    Reconstruct {
        /// `capture.jsonl` written by `simulate`.
        #[arg(long)]
        capture: PathBuf,
        /// Optional `ground_truth.jsonl`; enables error reporting.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    Tilt,
    Robots,
    FixedVsAdaptive,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::InvalidParameter(_)
        | Error::NegativeWeight { .. }
        | Error::NonPositiveTimeStep(_)
        | Error::NonPositiveNoise(_)
        | Error::GridFormat(_) => EXIT_CONFIG,
        Error::SafetyViolation { .. } => EXIT_SAFETY,
        Error::Io { .. } | Error::Json(_) | Error::Csv(_) | Error::Unsynchronized(_) => EXIT_IO,
        _ => EXIT_INTERNAL,
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.jobs {
        Some(0) => Err(Error::InvalidParameter("--jobs must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| execute(&cli, &argv)),
            Err(e) => Err(Error::InvalidParameter(format!("--jobs: {e}"))),
        },
        None => execute(&cli, &argv),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = Some(seed);
        let count = cfg.experiment.seeds.as_ref().map_or(5, Vec::len) as u64;
        cfg.experiment.seeds = Some((seed..seed + count).collect());
    }
    cfg.resolved()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a [String],
    seed: Option<u64>,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    /// Fully resolved configuration; rerun with `--config` on this text.
    config: Option<String>,
}

struct Output<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let path = self.path(name);
        write_jsonl(&path, items)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn manifest(mut self, mut m: Manifest) -> Result<()> {
        m.outputs = std::mem::take(&mut self.written);
        self.json("manifest.json", &m)
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::Plan => cmd_plan(cli, argv),
        Command::Simulate => cmd_simulate(cli, argv),
        Command::Experiment { sweep } => cmd_experiment(cli, argv, *sweep),
        Command::Reconstruct { capture, ground_truth } => cmd_reconstruct(cli, argv, capture, ground_truth.as_deref()),
    }
}

fn manifest<'a>(command: &'a str, argv: &'a [String], cfg: Option<&Config>, seed: Option<u64>, seeds: Vec<u64>) -> Manifest<'a> {
    Manifest {
        tool: "skycap",
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: argv,
        seed,
        seeds,
        inputs: Vec::new(),
        outputs: Vec::new(),
        config: cfg.map(Config::to_toml),
    }
}

#[derive(Serialize)]
struct YawRow {
    step: usize,
    t: f64,
    cell: usize,
    yaw_deg: f64,
}

#[derive(Serialize)]
struct WaypointRow {
    drone: usize,
    step: usize,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    heading_deg: f64,
    tilt_deg: f64,
}

fn cmd_plan(cli: &Cli, argv: &[String]) -> Result<()> {
    let cfg = load_config(cli)?;
    let s = cfg.scenario()?;
    let world = s.world.build(s.occupancy_threshold)?;
    let (plan, refined) = plan_once(&s, &world)?;
    let mut out = Output::new(&cli.out)?;

    let ts = &plan.targets.timestamps;
    let yaw_rows: Vec<YawRow> = std::iter::once(plan.start_cell)
        .chain(plan.cells.iter().copied())
        .zip(&plan.theta_sequence)
        .enumerate()
        .map(|(k, (cell, theta))| YawRow {
            step: k,
            t: ts[k],
            cell,
            yaw_deg: theta.to_degrees(),
        })
        .collect();
    out.csv("yaw_sequence.csv", &yaw_rows)?;

    let mut coarse = Vec::new();
    for (i, wps) in plan.targets.waypoints.iter().enumerate() {
        for (k, p) in wps.iter().enumerate() {
            coarse.push(waypoint_row(i, k, ts[k], p, &plan.actor_path.position_at(ts[k])));
        }
    }
    out.csv("coarse_waypoints.csv", &coarse)?;

    let mut fine = Vec::new();
    for (i, traj) in refined.iter().enumerate() {
        for (k, (t, p)) in traj.timestamps.iter().zip(&traj.waypoints).enumerate() {
            fine.push(waypoint_row(i, k, *t, p, &plan.actor_path.position_at(*t)));
        }
    }
    out.csv("refined_waypoints.csv", &fine)?;

    if cli.trace {
        out.jsonl("plan_trace.jsonl", &trace_records(&plan))?;
    }
    println!(
        "planned {} steps for {} drones; yaw cells {:?}",
        plan.cells.len(),
        s.formation.n,
        yaw_rows.iter().map(|r| r.cell).collect::<Vec<_>>()
    );
    out.manifest(manifest("plan", argv, Some(&cfg), Some(s.seed), vec![s.seed]))
}

fn waypoint_row(drone: usize, step: usize, t: f64, p: &Vec3, actor: &Vec3) -> WaypointRow {
    let pose = crate::geometry::Pose::looking_at(*p, actor);
    WaypointRow {
        drone,
        step,
        t,
        x: p.x,
        y: p.y,
        z: p.z,
        heading_deg: pose.psi.to_degrees(),
        tilt_deg: pose.camera_tilt.to_degrees(),
    }
}

#[derive(Serialize)]
struct ErrorRow {
    frame: usize,
    timestamp: f64,
    sq_error_m2: f64,
    mpjpe_m: f64,
    carried_joints: usize,
}

#[derive(Serialize)]
struct TrajectoryRow {
    frame: usize,
    t: f64,
    drone: usize,
    x: f64,
    y: f64,
    z: f64,
    heading_deg: f64,
    tilt_deg: f64,
    formation_yaw_deg: f64,
}

#[derive(Serialize)]
struct RunSummary {
    frames: usize,
    total_e_recon: f64,
    mean_mpjpe_m: f64,
    carried_joints: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_tilt_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tilt_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_clearance_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degraded_refines: Option<usize>,
}

#[derive(Serialize)]
struct SafetyReport {
    frame: usize,
    drone: usize,
    clearance_m: f64,
    margin_m: f64,
}

fn error_rows(seq: &SkeletonSequence, gt: &[Vec<Vec3>], err: &ReconError) -> Vec<ErrorRow> {
    seq.frames
        .iter()
        .zip(gt)
        .zip(&err.per_frame_mpjpe)
        .map(|((f, g), &mpjpe)| ErrorRow {
            frame: f.frame,
            timestamp: f.timestamp,
            sq_error_m2: f.joints.iter().zip(g).map(|(a, b)| (a - b).norm_squared()).sum(),
            mpjpe_m: mpjpe,
            carried_joints: f.carried.iter().filter(|&&c| c).count(),
        })
        .collect()
}

fn cmd_simulate(cli: &Cli, argv: &[String]) -> Result<()> {
    let cfg = load_config(cli)?;
    let s = cfg.scenario()?;
    let world = s.world.build(s.occupancy_threshold)?;
    let mut out = Output::new(&cli.out)?;
    let m = manifest("simulate", argv, Some(&cfg), Some(s.seed), vec![s.seed]);

    let flight = match fly(&s, &world) {
        Ok(f) => f,
        Err(Error::SafetyViolation { frame, drone, clearance }) => {
            out.json(
                "safety_report.json",
                &SafetyReport {
                    frame,
                    drone,
                    clearance_m: clearance,
                    margin_m: s.safety_margin,
                },
            )?;
            let report = out.dir.join("safety_report.json");
            out.manifest(m)?;
            eprintln!("safety report written to {}", report.display());
            return Err(Error::SafetyViolation { frame, drone, clearance });
        }
        Err(e) => return Err(e),
    };
    let result = capture_and_reconstruct(&flight, &world, &s.intrinsics, &s.noise)?;
    let gt: Vec<Vec<Vec3>> = flight.frames.iter().map(|f| f.skeleton.joints.clone()).collect();

    out.csv("errors.csv", &error_rows(&result.reconstruction, &gt, &result.error))?;
    out.csv("trajectory.csv", &trajectory_rows(&flight))?;
    out.jsonl("capture.jsonl", &capture_records(&result.capture))?;
    let gt_records: Vec<GroundTruthRecord> = flight
        .frames
        .iter()
        .map(|f| GroundTruthRecord {
            frame: f.frame,
            timestamp: f.t,
            joints: f.skeleton.joints.clone(),
        })
        .collect();
    out.jsonl("ground_truth.jsonl", &gt_records)?;
    out.jsonl("reconstruction.jsonl", &result.reconstruction.frames)?;
    if cli.trace {
        out.jsonl("run_trace.jsonl", &flight.frames)?;
    }
    let summary = RunSummary {
        frames: flight.frames.len(),
        total_e_recon: result.error.total,
        mean_mpjpe_m: result.error.mean_mpjpe,
        carried_joints: result.reconstruction.carried_count(),
        mean_tilt_deg: Some(flight.mean_tilt().to_degrees()),
        max_tilt_deg: Some(flight.max_tilt().to_degrees()),
        min_clearance_m: Some(flight.min_clearance),
        degraded_refines: Some(flight.degraded_refines),
    };
    out.json("summary.json", &summary)?;
    println!(
        "{}: {} frames, E_recon {:.4} m^2, mean MPJPE {:.4} m, mean tilt {:.1} deg, min clearance {:.2} m",
        s.name,
        summary.frames,
        summary.total_e_recon,
        summary.mean_mpjpe_m,
        flight.mean_tilt().to_degrees(),
        flight.min_clearance
    );
    out.manifest(m)
}

fn trajectory_rows(flight: &Flight) -> Vec<TrajectoryRow> {
    flight
        .frames
        .iter()
        .flat_map(|f| {
            f.poses.iter().enumerate().map(move |(i, p)| TrajectoryRow {
                frame: f.frame,
                t: f.t,
                drone: i,
                x: p.position.x,
                y: p.position.y,
                z: p.position.z,
                heading_deg: p.psi.to_degrees(),
                tilt_deg: p.camera_tilt.to_degrees(),
                formation_yaw_deg: f.formation_yaw.to_degrees(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TiltRow {
    tilt_deg: f64,
    noise_sigma_m: f64,
    seed: u64,
    #[serde(rename = "total_E_recon")]
    total_e_recon: f64,
    mean_mpjpe_m: f64,
    mean_camera_tilt_deg: f64,
    min_clearance_m: f64,
}

#[derive(Serialize)]
struct RobotRow {
    n: usize,
    noise_sigma_m: f64,
    seed: u64,
    #[serde(rename = "total_E_recon")]
    total_e_recon: f64,
    mean_mpjpe_m: f64,
    mean_camera_tilt_deg: f64,
    min_clearance_m: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    param: f64,
    noise_sigma_m: f64,
    mean_mpjpe_m: f64,
    std_mpjpe_m: f64,
    #[serde(rename = "mean_total_E_recon")]
    mean_e_recon: f64,
    seeds: usize,
}

#[derive(Serialize)]
struct ModeRow {
    mode: &'static str,
    #[serde(rename = "total_E_recon")]
    total_e_recon: f64,
    mean_mpjpe_m: f64,
    mean_tilt_deg: f64,
    max_tilt_deg: f64,
    min_clearance_m: f64,
}

fn summary_rows(r: &SweepResult) -> Vec<SummaryRow> {
    r.cells
        .iter()
        .map(|c| SummaryRow {
            param: c.param,
            noise_sigma_m: c.noise_sigma,
            mean_mpjpe_m: c.mean_mpjpe,
            std_mpjpe_m: c.std_mpjpe,
            mean_e_recon: c.mean_e_recon,
            seeds: c.seeds,
        })
        .collect()
}

fn print_table(label: &str, r: &SweepResult, noise_levels: &[f64]) {
    let mut params: Vec<f64> = r.cells.iter().map(|c| c.param).collect();
    params.dedup();
    print!("{label:>8}");
    for s in noise_levels {
        print!("  sigma={s:<5}");
    }
    println!();
    for p in params {
        print!("{p:>8}");
        for &s in noise_levels {
            match r.cell(p, s) {
                Some(c) => print!("  {:>11.4}", c.mean_mpjpe),
                None => print!("  {:>11}", "-"),
            }
        }
        println!();
    }
}

fn cmd_experiment(cli: &Cli, argv: &[String], sweep: Sweep) -> Result<()> {
    let cfg = load_config(cli)?;
    let x: ExperimentSettings = cfg.experiment()?;
    let mut out = Output::new(&cli.out)?;
    let m = manifest("experiment", argv, Some(&cfg), cli.seed, x.seeds.clone());
    match sweep {
        Sweep::Tilt => {
            let base = cfg.scenario()?;
            let r = experiment_tilt_sweep(&base, &x.tilts_deg, &x.noise_levels, &x.seeds)?;
            let rows: Vec<TiltRow> = r
                .rows
                .iter()
                .map(|r| TiltRow {
                    tilt_deg: r.param,
                    noise_sigma_m: r.noise_sigma,
                    seed: r.seed,
                    total_e_recon: r.total_e_recon,
                    mean_mpjpe_m: r.mean_mpjpe,
                    mean_camera_tilt_deg: r.mean_tilt_deg,
                    min_clearance_m: r.min_clearance,
                })
                .collect();
            out.csv("tilt_sweep.csv", &rows)?;
            out.csv("tilt_summary.csv", &summary_rows(&r))?;
            println!("mean MPJPE (m) by formation tilt (deg) and pose noise (m)");
            print_table("tilt", &r, &x.noise_levels);
        }
        Sweep::Robots => {
            let base = cfg.scenario()?;
            let r = experiment_robot_sweep(&base, &x.robots, &x.noise_levels, &x.seeds)?;
            let rows: Vec<RobotRow> = r
                .rows
                .iter()
                .map(|r| RobotRow {
                    n: r.param as usize,
                    noise_sigma_m: r.noise_sigma,
                    seed: r.seed,
                    total_e_recon: r.total_e_recon,
                    mean_mpjpe_m: r.mean_mpjpe,
                    mean_camera_tilt_deg: r.mean_tilt_deg,
                    min_clearance_m: r.min_clearance,
                })
                .collect();
            out.csv("robot_sweep.csv", &rows)?;
            out.csv("robot_summary.csv", &summary_rows(&r))?;
            println!("mean MPJPE (m) by team size and pose noise (m)");
            print_table("n", &r, &x.noise_levels);
        }
        Sweep::FixedVsAdaptive => {
            let base: Scenario = cfg.scenario()?;
            let r = run_fixed_vs_adaptive(&base, &x.seeds)?;
            let row = |mode, m: &crate::simulator::ModeResult| ModeRow {
                mode,
                total_e_recon: m.total_e_recon,
                mean_mpjpe_m: m.mean_mpjpe,
                mean_tilt_deg: m.mean_tilt_deg,
                max_tilt_deg: m.max_tilt_deg,
                min_clearance_m: m.min_clearance,
            };
            let rows = [row("adaptive", &r.adaptive), row("fixed", &r.fixed)];
            out.csv("fixed_vs_adaptive.csv", &rows)?;
            println!("{:>9}  {:>12}  {:>10}  {:>9}  {:>9}  {:>10}", "mode", "E_recon", "MPJPE", "tilt", "max tilt", "clearance");
            for r in &rows {
                println!(
                    "{:>9}  {:>12.4}  {:>10.4}  {:>9.1}  {:>9.1}  {:>10.2}",
                    r.mode, r.total_e_recon, r.mean_mpjpe_m, r.mean_tilt_deg, r.max_tilt_deg, r.min_clearance_m
                );
            }
        }
    }
    out.manifest(m)
}

fn cmd_reconstruct(cli: &Cli, argv: &[String], capture: &Path, ground_truth: Option<&Path>) -> Result<()> {
    let records: Vec<CaptureRecord> = read_jsonl(capture)?;
    let frames = frames_from_records(records);
    let seq = reconstruct_sequence(&frames)?;
    let mut out = Output::new(&cli.out)?;
    let mut m = manifest("reconstruct", argv, None, None, Vec::new());
    m.inputs.push(capture.display().to_string());
    out.jsonl("reconstruction.jsonl", &seq.frames)?;

    let carried = seq.carried_count();
    if carried > 0 {
        eprintln!("warning: {carried} joint estimates carried forward from earlier frames");
    }
    if let Some(gt_path) = ground_truth {
        m.inputs.push(gt_path.display().to_string());
        let gt_records: Vec<GroundTruthRecord> = read_jsonl(gt_path)?;
        let gt: Vec<Vec<Vec3>> = gt_records.into_iter().map(|r| r.joints).collect();
        let err = recon_error(&seq.joints(), &gt)?;
        out.csv("errors.csv", &error_rows(&seq, &gt, &err))?;
        out.json(
            "summary.json",
            &RunSummary {
                frames: seq.len(),
                total_e_recon: err.total,
                mean_mpjpe_m: err.mean_mpjpe,
                carried_joints: carried,
                mean_tilt_deg: None,
                max_tilt_deg: None,
                min_clearance_m: None,
                degraded_refines: None,
            },
        )?;
        println!(
            "reconstructed {} frames, E_recon {:.4} m^2, mean MPJPE {:.4} m",
            seq.len(),
            err.total,
            err.mean_mpjpe
        );
    } else {
        println!("reconstructed {} frames", seq.len());
    }
    out.manifest(m)
}
