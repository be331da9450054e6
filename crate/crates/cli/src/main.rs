use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tofcal::commands::{self, Context};
use tofcal::config::parse_window;
use tofcal::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "tofcal", version, about = "Coincidence time calibration pipeline")]
struct Cli {
    /// Configuration file (`dotted.key = value unit` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the campaign and detector seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Restricts evaluation and explanation to one window, `LO,HI` in keV.
    #[arg(long, global = true, value_name = "LO,HI")]
    energy_window: Option<String>,
    /// Directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "tofcal-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the measurement campaign.
    Simulate {
        /// Also write one CSV row per hit for inspection.
        #[arg(long)]
        csv: bool,
    },
    /// Reconstruct coincidences and estimate positions and energies.
    Preprocess,
    /// Fit and apply the analytical timing calibration.
    Calibrate,
    /// Train the residual timing models over the hyperparameter grid.
    Train,
    /// CTR, MAE and linearity tables.
    Evaluate,
    /// Attributions of the best model on the performance set.
    Explain,
    /// Print the summaries as markdown tables.
    Report,
}

fn load_config(cli: &Cli) -> tofcal::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.campaign.seed = seed;
        cfg.sim.detector_seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(w) = &cli.energy_window {
        cfg.evaluation.windows = vec![parse_window(w).map_err(|m| CliError::Config(format!("--energy-window: {m}")))?];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> tofcal::Result<()> {
    let cfg = load_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let ctx = Context { cfg, out: cli.out };
    match cli.command {
        Command::Simulate { csv } => {
            let s = commands::simulate(&ctx, csv)?;
            for c in &s.splits {
                println!("{}: {} records", c.split, c.records);
            }
        }
        Command::Preprocess => {
            let s = commands::preprocess(&ctx)?;
            for st in &s.splits {
                println!("{}: {} coincidences", st.split, st.recon.kept - st.position_dropped);
            }
        }
        Command::Calibrate => {
            let s = commands::calibrate(&ctx)?;
            let last = s.iterations.last().and_then(|r| r.ctr_ps);
            println!("CTR {:?} ps -> {:?} ps", s.initial_ctr_ps, last);
        }
        Command::Train => {
            let s = commands::train(&ctx)?;
            println!("{} models, best {}", s.grid.len(), s.best);
        }
        Command::Evaluate => {
            let s = commands::evaluate(&ctx)?;
            for r in &s.evaluation.ctr {
                println!("{} {}: CTR {:.1} +- {:.1} ps", r.window, r.method, r.ctr_ps, r.ctr_err_ps);
            }
        }
        Command::Explain => {
            let s = commands::explain(&ctx)?;
            println!("{}: {} samples, separation rho {:.3}", s.model, s.n_samples, s.separation.rho);
        }
        Command::Report => print!("{}", commands::report(&ctx)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOFCAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tofcal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
