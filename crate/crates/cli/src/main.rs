//! `tsdrive`: offline synthesis, closed-loop simulation and run comparison.
//!
//! Exit codes: 0 success, 1 other errors (I/O, invalid configuration, divergence),
//! 2 infeasible synthesis or failed certification, 3 artifact/config hash mismatch,
//! 4 schema mismatch. The log level comes from `TSDRIVE_LOG_LEVEL` (default `info`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use tsdrive::sim::{compare, Metrics, SimLog};
use tsdrive::{synthesize, Error, RunConfig, SchedulingMode, SynthesisArtifact};

#[derive(Parser)]
#[command(name = "tsdrive", version, about = "TS-MPC / TS-LQR / MHE-UIO vehicle guidance stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the offline LMIs, certify the result and write the artifact.
    Synthesize {
        /// Run configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "artifact.json")]
        out: PathBuf,
    },
    /// Run the closed-loop simulation and write logs and metrics.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact from `synthesize`; synthesized on the fly when omitted.
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to the config's `output_dir`, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the RMSE of two or more runs.
    Compare {
        /// `metrics.json` files; logs next to them are used to align run lengths.
        #[arg(required = true, num_args = 2..)]
        metrics: Vec<PathBuf>,
        /// Directory for `comparison.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Configuration the runs used (sample time and warm-up).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Frozen,
    Reference,
}

impl From<Mode> for SchedulingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Frozen => SchedulingMode::Frozen,
            Mode::Reference => SchedulingMode::Reference,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::Certification(_) => 2,
        Error::Artifact(_) => 3,
        Error::Schema(_) => 4,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> tsdrive::Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn cmd_synthesize(config: Option<&Path>, out: &Path) -> tsdrive::Result<()> {
    let cfg = load_config(config)?;
    let art = synthesize(&cfg.synthesis_inputs())?;
    art.save(out)?;
    let (k, d) = (&art.kinematic.report, &art.dynamic.report);
    println!("artifact {} (config {})", out.display(), art.config_hash);
    println!(
        "kinematic: {} gains, blended rho <= {:.4}, terminal level <= {:.4}",
        art.kinematic.gains.vertex_count(),
        k.blend_max_spectral_radius,
        k.terminal.as_ref().map_or(f64::NAN, |t| t.max_level)
    );
    println!(
        "dynamic:   {} gains, blended rho <= {:.4}",
        art.dynamic.gains.vertex_count(),
        d.blend_max_spectral_radius
    );
    let s = &art.kinematic.terminal.s;
    println!("S = {:?}", (0..3).map(|i| [s[(i, 0)], s[(i, 1)], s[(i, 2)]]).collect::<Vec<_>>());
    Ok(())
}

fn cmd_simulate(
    config: Option<&Path>,
    artifact: Option<&Path>,
    mode: Option<Mode>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> tsdrive::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.mpc.mode = m.into();
    }
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    let inputs = cfg.synthesis_inputs();
    let art = match artifact {
        Some(p) => SynthesisArtifact::load(p, Some(&inputs.hash()))?,
        None => {
            info!("no artifact given; synthesizing");
            synthesize(&inputs)?
        }
    };
    let dir = out.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| "out".into());
    let res = tsdrive::run(&cfg, &art)?;
    res.write(&dir)?;
    let m = &res.metrics;
    println!("{:>9} {:>8} {:>8} {:>8} {:>8} {:>8}", "mode", "x", "y", "theta", "v", "omega");
    println!(
        "{:>9} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        m.mode.to_string(),
        m.rmse_x,
        m.rmse_y,
        m.rmse_theta,
        m.rmse_v,
        m.rmse_omega
    );
    println!(
        "solve time (ms): MPC p50 {:.3} p95 {:.3}, MHE p50 {:.3} p95 {:.3}",
        m.mpc_time.p50 * 1e3,
        m.mpc_time.p95 * 1e3,
        m.mhe_time.p50 * 1e3,
        m.mhe_time.p95 * 1e3
    );
    if !m.completed {
        println!("run stopped early: {}", m.failure.as_deref().unwrap_or("unknown"));
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn label(path: &Path) -> String {
    let from_dir = path.parent().and_then(Path::file_name).map(|s| s.to_string_lossy().into_owned());
    from_dir.filter(|s| !s.is_empty()).unwrap_or_else(|| path.display().to_string())
}

fn cmd_compare(paths: &[PathBuf], out: Option<&Path>, config: Option<&Path>) -> tsdrive::Result<()> {
    let cfg = load_config(config)?;
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let metrics = Metrics::load(p)?;
        let dir = p.parent().unwrap_or(Path::new("."));
        let log = if dir.join("inner.csv").exists() && dir.join("outer.csv").exists() {
            Some(SimLog::read_dir(dir)?)
        } else {
            None
        };
        runs.push((label(p), metrics, log));
    }
    let table = compare(runs, cfg.td, cfg.sim.warmup)?;
    print!("{}", table.to_text());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("comparison.csv"), table.to_csv()?)?;
        println!("wrote {}", dir.join("comparison.csv").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TSDRIVE_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Synthesize { config, out } => cmd_synthesize(config.as_deref(), out),
        Command::Simulate { config, artifact, mode, seed, out } => {
            cmd_simulate(config.as_deref(), artifact.as_deref(), *mode, *seed, out.as_deref())
        }
        Command::Compare { metrics, out, config } => cmd_compare(metrics, out.as_deref(), config.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
