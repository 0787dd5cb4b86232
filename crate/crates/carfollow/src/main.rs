use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carfollow::adapters::{adapt_highd, adapt_ngsim, ColumnMap, SourceFormat};
use carfollow::canonical::write_canonical_with_source;
use carfollow::commands::{self, SynthOverrides};
use carfollow::config::{parse_models, RunConfig, TargetSelection};
use carfollow::{CliError, Result};
use carfollow_core::filter::ProposalMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "carfollow", version, about = "Car-following parameter estimation and trajectory benchmarking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampling interval, s (synth), or the expected trace dt (estimate, benchmark).
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Simulated (synth) or predicted (benchmark) duration, s.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Particles per filter.
    #[arg(long, global = true)]
    particles: Option<usize>,
    #[arg(long, global = true, value_enum)]
    proposal: Option<Proposal>,
    /// Comma-separated: estimated, default, nonlinear_fit, const_vel, const_acc.
    #[arg(long, global = true)]
    models: Option<String>,
    /// all, a count per scenario, or ids:1,2,3
    #[arg(long, global = true)]
    targets: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "CARFOLLOW_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Proposal {
    Literal,
    Sweep,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic platoon trace from a spec file.
    Synth {
        spec: PathBuf,
        /// Number of independent scenarios.
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Estimate driver parameters for every selected vehicle.
    Estimate { trace: PathBuf },
    /// Roll out models and score them against the trace.
    Benchmark { trace: PathBuf },
    /// Convert a dataset export to the canonical trace.
    Adapt {
        /// Column map JSON.
        #[arg(long)]
        map: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.particles {
        cfg.filter.particle_count = n;
    }
    if let Some(p) = common.proposal {
        cfg.filter.proposal = match p {
            Proposal::Literal => ProposalMode::Literal,
            Proposal::Sweep => ProposalMode::Sweep,
        };
    }
    if let Some(m) = &common.models {
        cfg.benchmark.models = parse_models(m)?;
    }
    if let Some(t) = &common.targets {
        let sel: TargetSelection = t.parse()?;
        cfg.estimate.targets = sel.clone();
        cfg.benchmark.targets = sel;
    }
    if let Some(h) = common.horizon {
        cfg.benchmark.horizon = h;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn adapt(map_path: &Path, files: &[PathBuf], out: &Path) -> Result<()> {
    let map = ColumnMap::load(map_path)?;
    let paths: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    let trace = match map.format {
        SourceFormat::Ngsim => {
            let mut all = adapt_ngsim(paths[0], &map)?;
            for p in &paths[1..] {
                all.rows.extend(adapt_ngsim(p, &map)?.rows);
            }
            all
        }
        SourceFormat::Highd => adapt_highd(&paths, &map)?,
    };
    // surface invariant violations now rather than at estimation time
    if !trace.rows.is_empty() {
        trace.scenarios()?;
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let source = if map.format == SourceFormat::Ngsim { "ngsim" } else { "highd" };
    write_canonical_with_source(&out.join("trace.csv"), &trace, Some(source))?;
    println!("wrote {} rows to {}", trace.rows.len(), out.join("trace.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = resolve(common)?;
    init_threads(cfg.threads)?;
    match &cli.command {
        Command::Synth { spec, scenarios } => {
            let overrides = SynthOverrides {
                seed: common.seed,
                dt: common.dt,
                horizon: common.horizon,
                scenarios: *scenarios,
            };
            let trace = commands::synth(spec, &overrides, &common.out)?;
            println!("wrote {} rows to {}", trace.rows.len(), common.out.display());
        }
        Command::Estimate { trace } => {
            let out = commands::estimate(trace, &cfg, common.dt, common.config.as_deref(), &common.out)?;
            let warnings = out.warnings();
            if warnings > 0 {
                log::warn!("{warnings} vehicles skipped or degenerate, see posteriors.csv");
            }
            println!(
                "estimated {} vehicles in {:.3} s ({} warnings)",
                out.estimates.len() - warnings,
                out.seconds,
                warnings
            );
        }
        Command::Benchmark { trace } => {
            let out = commands::benchmark(trace, &cfg, common.dt, common.config.as_deref(), &common.out)?;
            for rep in &out.report.reports {
                println!(
                    "{:<14} position RMSE {:.3} ± {:.3} m, velocity RMSE {:.3} ± {:.3} m/s, collisions {:.1} ± {:.1}",
                    rep.model,
                    rep.position_rmse.mean,
                    rep.position_rmse.std,
                    rep.velocity_rmse.mean,
                    rep.velocity_rmse.std,
                    rep.collisions.mean,
                    rep.collisions.std,
                );
            }
        }
        Command::Adapt { map, files } => adapt(map, files, &common.out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
