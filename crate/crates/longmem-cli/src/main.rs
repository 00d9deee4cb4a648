//! Command-line front end for the long-memory mapping pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longmem::pipeline::{self, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "longmem",
    version,
    about = "Voxelwise long-memory mapping: wavelet-domain Bayesian estimation, composite-basis reduction, group regression, joint significance maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker thread count (0 = library default).
    #[arg(long)]
    threads: Option<usize>,
    /// Print stage progress.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject study with ground truth.
    Simulate(Common),
    /// Estimate per-voxel long-memory maps for every subject.
    EstimateSubject {
        #[command(flatten)]
        common: Common,
        /// Run on one explicit 4-D volume instead of the configured set.
        #[arg(long, requires = "mask")]
        volume: Option<PathBuf>,
        /// Mask volume for --volume.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output directory for --volume (default: config out_dir/est-single).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the two-level composite basis and project the subject maps.
    BuildBasis(Common),
    /// Gibbs-sample the group regression in the reduced space.
    GroupRegress(Common),
    /// Build joint credible bands, FDR maps, clusters and intersections.
    Infer(Common),
    /// Emit the machine-readable summary and plot-ready tables.
    Report(Common),
    /// Run all stages (or a subset) in dependency order.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated stage subset, e.g. "simulate,estimate".
        #[arg(long)]
        stage: Option<String>,
    },
    /// Dump the explicit wavelet transform matrix as CSV (debug).
    DumpW {
        /// Dyadic length (power of two).
        #[arg(long)]
        t: usize,
        #[arg(long, default_value = "db2")]
        wavelet: String,
        #[arg(long)]
        levels: usize,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> longmem::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.run.threads = threads;
    }
    Ok(config)
}

fn run_stages(common: &Common, stages: &[Stage]) -> longmem::Result<()> {
    let config = load_config(common)?;
    if common.verbose {
        for s in stages {
            eprintln!("stage: {}", s.name());
        }
    }
    pipeline::run_pipeline(&config, stages)?;
    Ok(())
}

fn dispatch(cli: Cli) -> longmem::Result<()> {
    match cli.command {
        Command::Simulate(c) => run_stages(&c, &[Stage::Simulate]),
        Command::EstimateSubject { common, volume, mask, out } => match volume {
            Some(vol) => {
                let config = load_config(&common)?;
                let mask = mask.expect("clap enforces --mask with --volume");
                let out = out.unwrap_or_else(|| config.run.out_dir.join("est-single"));
                pipeline::estimate_single_volume(&config, &vol, &mask, &out)
            }
            None => run_stages(&common, &[Stage::Estimate]),
        },
        Command::BuildBasis(c) => run_stages(&c, &[Stage::Basis]),
        Command::GroupRegress(c) => run_stages(&c, &[Stage::Group]),
        Command::Infer(c) => run_stages(&c, &[Stage::Infer]),
        Command::Report(c) => run_stages(&c, &[Stage::Report]),
        Command::Run { common, stage } => {
            let stages: Vec<Stage> = match stage {
                Some(list) => list
                    .split(',')
                    .map(|s| Stage::parse(s.trim()))
                    .collect::<longmem::Result<Vec<_>>>()?,
                None => {
                    let config = load_config(&common)?;
                    if config.data.volumes.is_empty() {
                        Stage::ALL.to_vec()
                    } else {
                        // External data: the simulate stage does not apply.
                        Stage::ALL.iter().copied().filter(|s| *s != Stage::Simulate).collect()
                    }
                }
            };
            run_stages(&common, &stages)
        }
        Command::DumpW { t, wavelet, levels, out } => match out {
            Some(path) => {
                let mut file = std::fs::File::create(&path)
                    .map_err(|e| longmem::Error::io(&path, e))?;
                pipeline::dump_w_matrix(t, &wavelet, levels, &mut file)
            }
            None => pipeline::dump_w_matrix(t, &wavelet, levels, &mut std::io::stdout().lock()),
        },
    }
}

fn main() -> ExitCode {
    // Usage errors exit 1; clap's default of 2 is reserved for data errors.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
