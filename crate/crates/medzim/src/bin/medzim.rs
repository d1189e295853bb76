//! Command-line entry point for the mediation screen.

use clap::{Args, Parser, Subcommand, ValueEnum};
use medzim::cli::{
    run, AnalyzeConfig, RunConfig, Scenario, Simulate1Config, Simulate2Config,
};
use medzim::effects::ExposureContrast;
use medzim::model::ZeroMechanism;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "medzim", version, about = "Mediation analysis for zero-inflated microbiome mediators")]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Lod,
    Exp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Low,
    High,
}

#[derive(Args)]
struct CommonArgs {
    /// Zero-observation mechanism.
    #[arg(long, value_enum, default_value = "lod")]
    mechanism: MechanismArg,
    /// Thinning rate for the exponential mechanism (required with it).
    #[arg(long)]
    eta: Option<f64>,
    /// Reference exposure level.
    #[arg(long, default_value_t = 0.0)]
    x1: f64,
    /// Comparison exposure level.
    #[arg(long, default_value_t = 1.0)]
    x2: f64,
    /// Fixed mediator value for the controlled direct effect.
    #[arg(long)]
    cde_m: Option<f64>,
    /// Drop the exposure-by-presence interaction term.
    #[arg(long)]
    no_beta4: bool,
    /// Drop the exposure-by-abundance interaction term.
    #[arg(long)]
    no_beta5: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Never changes numeric output.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Screen every taxon of a relative-abundance table as a mediator.
    Analyze {
        /// Relative-abundance file (samples as rows, first column sample ID).
        #[arg(long)]
        ra: PathBuf,
        /// Metadata file with columns sample_id, library_size, x, y.
        #[arg(long)]
        meta: PathBuf,
        /// Target false discovery rate.
        #[arg(long, default_value_t = 0.2)]
        fdr: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Replicated single-taxon study: bias, SE and coverage table.
    Simulate1 {
        #[arg(long, value_enum, default_value = "low")]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Replicated compositional screening study: discovery metrics.
    Simulate2 {
        #[arg(long, default_value_t = 300)]
        n: usize,
        /// Number of taxa including the reference component.
        #[arg(long, default_value_t = 10)]
        taxa: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0.2)]
        fdr: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn mechanism(common: &CommonArgs) -> Result<ZeroMechanism, String> {
    match common.mechanism {
        MechanismArg::Lod => Ok(ZeroMechanism::Lod),
        MechanismArg::Exp => {
            let eta = common
                .eta
                .ok_or("--eta is required with --mechanism exp")?;
            Ok(ZeroMechanism::Exponential { eta })
        }
    }
}

fn contrast(common: &CommonArgs) -> Result<ExposureContrast, String> {
    let c = ExposureContrast::new(common.x1, common.x2).map_err(|e| e.to_string())?;
    match common.cde_m {
        Some(m) => c.with_controlled_mediator(m).map_err(|e| e.to_string()),
        None => Ok(c),
    }
}

fn build_config(cmd: Command) -> Result<RunConfig, String> {
    match cmd {
        Command::Analyze {
            ra,
            meta,
            fdr,
            common,
        } => Ok(RunConfig::Analyze(AnalyzeConfig {
            ra_path: ra,
            meta_path: meta,
            mechanism: mechanism(&common)?,
            contrast: contrast(&common)?,
            include_interaction_indicator: !common.no_beta4,
            include_interaction_linear: !common.no_beta5,
            fdr,
            seed: common.seed,
            threads: common.threads,
            out_dir: common.out,
        })),
        Command::Simulate1 {
            scenario,
            n,
            reps,
            common,
        } => Ok(RunConfig::Simulate1(Simulate1Config {
            scenario: match scenario {
                ScenarioArg::Low => Scenario::LowAbundance,
                ScenarioArg::High => Scenario::HighAbundance,
            },
            n,
            reps,
            mechanism: mechanism(&common)?,
            contrast: contrast(&common)?,
            include_interaction_indicator: !common.no_beta4,
            include_interaction_linear: !common.no_beta5,
            seed: common.seed,
            threads: common.threads,
            out_dir: common.out,
        })),
        Command::Simulate2 {
            n,
            taxa,
            reps,
            fdr,
            common,
        } => Ok(RunConfig::Simulate2(Simulate2Config {
            n,
            taxa,
            reps,
            fdr,
            seed: common.seed,
            threads: common.threads,
            out_dir: common.out,
        })),
    }
}

fn main() -> ExitCode {
    let args = CliArgs::parse();
    let cfg = match build_config(args.command) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::FAILURE;
        }
    };
    match run(&cfg) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
