//! Command-line front end. `run` returns the process exit code:
//! 0 ok, 1 usage, 2 I/O or parse, 3 registration unsuccessful, 4 invalid input.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analytics::{learning_curve, pooled_stats};
use crate::biopsy::{map_session, MappedSession, VolumeRegistration};
use crate::error::{Error, Result};
use crate::fiducial::{tre, FiducialFile};
use crate::io::{
    self, load_mapped, load_session, metrics_name, read_json, read_mha, read_path_list, read_phantom_config,
    report_csv, transform_name, write_json, write_mha, LearningCurveFile, MetricsFile, PhantomFile, ReportFile,
    SessionFile, TreFile,
};
use crate::phantom::{generate_session, Phantom, PhantomConfig, SessionSpec};
use crate::registration::{register, RegistrationConfig};
use crate::sector::DEFAULT_MIN_LEN_MM;
use crate::transform::{RigidTransform, TransformFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_REGISTRATION_FAILED: i32 = 3;
pub const EXIT_INVALID: i32 = 4;

pub const THREADS_ENV: &str = "TRUSMAP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "trusmap", version, about = "3D TRUS registration, biopsy mapping and targeting analytics")]
pub struct Cli {
    /// Worker threads; TRUSMAP_THREADS overrides. Defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic phantom volumes.
    Phantom {
        #[command(subcommand)]
        action: PhantomCommand,
    },
    /// Register a moving volume onto a reference volume.
    Register(RegisterArgs),
    /// Map a session's needles into the reference frame.
    Map(MapArgs),
    /// Per-target hit statistics over mapped sessions.
    Report(ReportArgs),
    /// Hit-rate comparison between early and late sessions.
    LearningCurve(LearningCurveArgs),
    /// Fiducial target registration error of a transform.
    Validate(ValidateArgs),
    /// Time repeated registrations of one pair.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Write a reference volume, or a whole biopsy session with --session.
    Gen(PhantomGenArgs),
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of biopsies (one moving volume each).
    #[arg(long)]
    pub session: Option<usize>,
    /// Motion bound per volume, e.g. "10mm,10deg".
    #[arg(long, default_value = "10mm,10deg")]
    pub motion: Motion,
    /// Needle aiming error σ in mm.
    #[arg(long, default_value_t = 0.0)]
    pub aim_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub mm: f64,
    pub deg: f64,
}

impl FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or("expected '<x>mm,<y>deg'")?;
        let num = |v: &str, unit: &str| -> std::result::Result<f64, String> {
            let v = v.trim();
            let v = v.strip_suffix(unit).unwrap_or(v);
            match v.trim().parse::<f64>() {
                Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
                _ => Err(format!("bad motion component '{v}'")),
            }
        };
        Ok(Motion { mm: num(a, "mm")?, deg: num(b, "deg")? })
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to `<out stem>.metrics.json` next to the transform.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Directory holding `<volume stem>.json` transforms and optional `<volume stem>.metrics.json`.
    #[arg(long)]
    pub transforms: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "mapped")]
    pub mapped: Vec<PathBuf>,
    #[arg(long)]
    pub mapped_list: Option<PathBuf>,
    /// CSV output; a `.json` extension writes the JSON report instead.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_LEN_MM)]
    pub min_len: f64,
}

#[derive(Debug, Args)]
pub struct LearningCurveArgs {
    #[arg(long)]
    pub mapped_list: PathBuf,
    /// Number of sessions in the first half.
    #[arg(long)]
    pub split: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_LEN_MM)]
    pub min_len: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub fiducials: PathBuf,
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Optional JSON with per-run and median seconds.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    init_threads(cli.threads);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io_or_parse() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn init_threads(flag: Option<usize>) {
    let env = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    let Some(n) = env.or(flag).filter(|&n| n > 0) else { return };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already initialised: {e}");
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Phantom { action: PhantomCommand::Gen(a) } => phantom_gen(a),
        Command::Register(a) => register_cmd(a),
        Command::Map(a) => map_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::LearningCurve(a) => learning_curve_cmd(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_registration_config(path: Option<&Path>) -> Result<RegistrationConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => RegistrationConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn phantom_gen(a: PhantomGenArgs) -> Result<i32> {
    let cfg = match &a.config {
        Some(p) => read_phantom_config(p)?,
        None => PhantomConfig::default(),
    };
    create_dir(&a.out_dir)?;
    write_json(a.out_dir.join("phantom.json"), &PhantomFile { schema_version: io::PHANTOM_SCHEMA.into(), config: cfg.clone() })?;

    let Some(n) = a.session else {
        let ph = Phantom::new(&cfg)?;
        write_mha(&ph.reference(), a.out_dir.join("reference.mha"))?;
        let gt = ph.ground_truth(&RigidTransform::identity());
        write_json(a.out_dir.join("fiducials.json"), &FiducialFile::from_pairs(&gt.fiducial_pairs()))?;
        return Ok(EXIT_OK);
    };

    let spec = SessionSpec { n_biopsies: n, motion_mm: a.motion.mm, motion_deg: a.motion.deg, aim_sigma_mm: a.aim_sigma, seed: cfg.seed };
    let mut s = generate_session(&cfg, &spec)?;
    s.session.reference_volume_id = "reference.mha".into();
    write_mha(&s.reference, a.out_dir.join("reference.mha"))?;
    let truth_dir = a.out_dir.join("truth");
    create_dir(&truth_dir)?;
    for ((rec, vol), gt) in s.session.records.iter_mut().zip(&s.moving).zip(&s.truths) {
        let name = format!("{}.mha", rec.needle.volume_id);
        write_mha(vol, a.out_dir.join(&name))?;
        write_json(truth_dir.join(transform_name(&name)), &TransformFile::from_transform(&gt.transform)?)?;
        write_json(
            truth_dir.join(format!("{}.fiducials.json", rec.needle.volume_id)),
            &FiducialFile::from_pairs(&gt.fiducial_pairs()),
        )?;
        rec.needle.volume_id = name;
    }
    write_json(a.out_dir.join("session.json"), &SessionFile::from_session(&s.session, &s.grid))?;
    log::info!("wrote session with {n} biopsies to {}", a.out_dir.display());
    Ok(EXIT_OK)
}

fn default_metrics_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("transform");
    out.with_file_name(format!("{stem}.metrics.json"))
}

fn register_cmd(a: RegisterArgs) -> Result<i32> {
    let cfg = load_registration_config(a.config.as_deref())?;
    let reference = read_mha(&a.reference)?;
    let moving = read_mha(&a.moving)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| default_metrics_path(&a.out));
    let started = std::time::Instant::now();
    match register(&reference, &moving, &cfg) {
        Ok(r) => {
            log::info!(
                "score {:.4}, success {}, {} iterations, {:.2} s",
                r.score,
                r.success,
                r.iterations,
                r.elapsed_seconds
            );
            write_json(&a.out, &TransformFile::from_transform(&r.transform)?)?;
            write_json(&metrics_path, &MetricsFile::from_result(&r))?;
            Ok(if r.success { EXIT_OK } else { EXIT_REGISTRATION_FAILED })
        }
        Err(e @ crate::registration::RegistrationError::BadConfig(_)) => Err(e.into()),
        Err(e) => {
            log::error!("registration failed: {e}");
            write_json(&a.out, &TransformFile::from_transform(&RigidTransform::identity())?)?;
            write_json(&metrics_path, &MetricsFile::failed(&e, started.elapsed().as_secs_f64()))?;
            Ok(EXIT_REGISTRATION_FAILED)
        }
    }
}

fn map_cmd(a: MapArgs) -> Result<i32> {
    let (session, grid) = load_session(&a.session)?;
    let regs = session
        .records
        .iter()
        .map(|r| {
            let vol = &r.needle.volume_id;
            let tf: TransformFile = read_json(a.transforms.join(transform_name(vol)))?;
            let metrics_path = a.transforms.join(metrics_name(vol));
            let (success, score) = if metrics_path.exists() {
                let m: MetricsFile = read_json(&metrics_path)?;
                (m.success, m.score)
            } else {
                (true, None)
            };
            Ok(VolumeRegistration { volume_id: vol.clone(), transform: tf.to_transform(), success, score })
        })
        .collect::<Result<Vec<_>>>()?;
    let mapped = MappedSession {
        patient_id: session.patient_id.clone(),
        chronological_rank: session.chronological_rank,
        grid,
        biopsies: map_session(&session, &regs)?,
    };
    log::info!("mapped {} of {} biopsies", mapped.mapped_count(), mapped.biopsies.len());
    write_json(&a.out, &io::MappedFile::from_mapped(&mapped))?;
    Ok(EXIT_OK)
}

fn load_sessions(paths: &[PathBuf]) -> Result<Vec<MappedSession>> {
    let mut sessions = paths.iter().map(load_mapped).collect::<Result<Vec<_>>>()?;
    sessions.sort_by_key(|s| s.chronological_rank);
    Ok(sessions)
}

fn check_min_len(min_len: f64) -> Result<()> {
    if !(min_len >= 0.0) || !min_len.is_finite() {
        return Err(Error::Invalid(format!("--min-len must be >= 0, got {min_len}")));
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<i32> {
    check_min_len(a.min_len)?;
    let mut paths = a.mapped.clone();
    if let Some(list) = &a.mapped_list {
        paths.extend(read_path_list(list)?);
    }
    let sessions = load_sessions(&paths)?;
    let report = pooled_stats(&sessions, a.min_len)?;
    report.check_consistency()?;
    if a.out.extension().is_some_and(|e| e == "json") {
        write_json(&a.out, &ReportFile { schema_version: io::REPORT_SCHEMA, report: &report })?;
    } else {
        fs::write(&a.out, report_csv(&report)).map_err(|e| Error::io(&a.out, e))?;
    }
    Ok(EXIT_OK)
}

fn learning_curve_cmd(a: LearningCurveArgs) -> Result<i32> {
    check_min_len(a.min_len)?;
    let sessions = load_sessions(&read_path_list(&a.mapped_list)?)?;
    let lc = learning_curve(&sessions, a.split, a.min_len)?;
    write_json(&a.out, &LearningCurveFile { schema_version: io::LEARNING_CURVE_SCHEMA, result: &lc })?;
    Ok(EXIT_OK)
}

fn validate_cmd(a: ValidateArgs) -> Result<i32> {
    let fid: FiducialFile = read_json(&a.fiducials)?;
    let tf: TransformFile = read_json(&a.transform)?;
    let summary = tre(&fid.to_pairs(), &tf.to_transform())?;
    log::info!("TRE mean {:.3} mm, max {:.3} mm over {} pairs", summary.mean_mm, summary.max_mm, summary.n);
    write_json(&a.out, &TreFile { schema_version: io::TRE_SCHEMA, summary: &summary })?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct BenchReport {
    schema_version: &'static str,
    threads: usize,
    runs_seconds: Vec<f64>,
    median_seconds: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn bench_cmd(a: BenchArgs) -> Result<i32> {
    if a.repeat == 0 {
        return Err(Error::Invalid("--repeat must be >= 1".into()));
    }
    let cfg = load_registration_config(a.config.as_deref())?;
    let reference = read_mha(&a.reference)?;
    let moving = read_mha(&a.moving)?;
    let mut runs = Vec::with_capacity(a.repeat);
    for i in 0..a.repeat {
        let r = register(&reference, &moving, &cfg)?;
        eprintln!("run {}: {:.3} s (score {:.4})", i + 1, r.elapsed_seconds, r.score);
        runs.push(r.elapsed_seconds);
    }
    let med = median(&runs);
    let threads = rayon::current_num_threads();
    eprintln!("median: {med:.3} s over {} runs, {threads} threads", a.repeat);
    if let Some(out) = &a.out {
        write_json(out, &BenchReport { schema_version: "trusmap.bench/1", threads, runs_seconds: runs, median_seconds: med })?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_parsing() {
        assert_eq!("10mm,10deg".parse::<Motion>().unwrap(), Motion { mm: 10.0, deg: 10.0 });
        assert_eq!("2.5, 3".parse::<Motion>().unwrap(), Motion { mm: 2.5, deg: 3.0 });
        assert!("10mm".parse::<Motion>().is_err());
        assert!("-1mm,2deg".parse::<Motion>().is_err());
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["trusmap"]), EXIT_USAGE);
        assert_eq!(run(["trusmap", "register", "--ref", "a.mha"]), EXIT_USAGE);
        assert_eq!(run(["trusmap", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.json");
        let code = run(["trusmap", "register", "--ref", "/nonexistent/a.mha", "--moving", "/nonexistent/b.mha", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_IO);
    }
}
