use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dphi::dphi::DStepMode;
use dphi::harness::{
    cmd_dphi, cmd_dstep, cmd_lqr, cmd_ring_gen, cmd_sweep, cmd_verify, output_dir_or, ControllerDocument, DStepRequest,
    ExperimentConfig, VerifyOptions, EXIT_ERROR, EXIT_STALLED, EXIT_TARGET_MET,
};
use dphi::model::Plant;
use dphi::norms::NormKind;
use dphi::phistep::AdmmConfig;
use dphi::Result;

/// Distributed robust controller synthesis by D-Phi iteration.
///
/// Exit status: 0 target met, 2 stalled, 1 error.
#[derive(Parser)]
#[command(name = "dphi", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    L1,
    Linf,
    Nu,
}

impl From<Kind> for NormKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::L1 => NormKind::L1RowMax,
            Kind::Linf => NormKind::LinfColMax,
            Kind::Nu => NormKind::NuMaxElt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Minimize,
    IterativelyMinimize,
    Randomize,
}

impl From<Mode> for DStepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Minimize => DStepMode::Minimize,
            Mode::IterativelyMinimize => DStepMode::IterativelyMinimize,
            Mode::Randomize => DStepMode::Randomize,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a random ring plant as JSON.
    RingGen {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 3.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (default: plant.json in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one D-Phi iteration; writes trace.csv and controller.json.
    Dphi {
        config: PathBuf,
        /// Write wall-clock times into the trace (makes it run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Run the configured algorithm for every beta_max; writes sweep.csv.
    Sweep { config: PathBuf },
    /// D step on a stored controller's magnitude matrix; writes scaling.csv.
    Dstep {
        controller: PathBuf,
        plant: PathBuf,
        /// Defaults to the controller's kind.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long, value_enum, default_value = "minimize")]
        mode: Mode,
        #[arg(long)]
        consensus: bool,
        /// Level for the randomizing step (default: the stored level).
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        beta_step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// LQR cost and margin for a configuration.
    Lqr { config: PathBuf },
    /// Re-check a stored controller against a plant.
    Verify {
        controller: PathBuf,
        plant: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
}

fn read_controller(path: &Path) -> Result<ControllerDocument> {
    ControllerDocument::from_json(&fs::read_to_string(path)?)
}

fn read_plant(path: &Path) -> Result<Plant> {
    Plant::from_json(&fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::RingGen { n, rho, seed, out } => {
            let out = out.unwrap_or_else(|| output_dir_or(Path::new("out")).join("plant.json"));
            cmd_ring_gen(n, rho, seed, &out)?;
            println!("wrote {}", out.display());
            Ok(EXIT_TARGET_MET)
        }
        Command::Dphi { config, timing } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cmd_dphi(&cfg, &cfg.resolved_output_dir(), timing)?;
            println!("{}", out.summary);
            Ok(out.summary.exit_code())
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.resolved_output_dir();
            let lines = cmd_sweep(&cfg, &dir)?;
            println!("wrote {} rows to {}", lines.len(), dir.join("sweep.csv").display());
            Ok(EXIT_TARGET_MET)
        }
        Command::Dstep {
            controller,
            plant,
            kind,
            mode,
            consensus,
            beta,
            beta_step,
            seed,
            out_dir,
        } => {
            let req = DStepRequest {
                kind: kind.map(Into::into),
                mode: mode.into(),
                consensus,
                beta,
                beta_step,
                seed,
                admm: AdmmConfig::default(),
            };
            let dir = out_dir.unwrap_or_else(|| output_dir_or(Path::new("out")));
            let report = cmd_dstep(&read_controller(&controller)?, &read_plant(&plant)?, &req, &dir)?;
            println!("{report}");
            Ok(if report.scaling.is_some() { EXIT_TARGET_MET } else { EXIT_STALLED })
        }
        Command::Lqr { config } => {
            println!("{}", cmd_lqr(&ExperimentConfig::load(&config)?)?);
            Ok(EXIT_TARGET_MET)
        }
        Command::Verify {
            controller,
            plant,
            seeds,
            steps,
        } => {
            let opts = VerifyOptions {
                rollout_seeds: seeds,
                rollout_steps: steps,
                ..VerifyOptions::default()
            };
            let report = cmd_verify(&read_controller(&controller)?, &read_plant(&plant)?, &opts)?;
            print!("{report}");
            Ok(if report.passed() { EXIT_TARGET_MET } else { EXIT_ERROR })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
