//! `lidarsphere`: terrestrial-laser-scan semantic annotation from the
//! command line.
//!
//! Each subcommand runs one pipeline stage over every discovered scan;
//! stages communicate through files under `<output>/<scan_id>/<stage>/`, so
//! any stage can be re-run in isolation. Exit codes: 0 on success, 2 for
//! configuration problems, 3 for broken or missing data, 4 for internal
//! invariant violations.

use clap::{Parser, Subcommand};
use lidarsphere_cli::config::PipelineConfig;
use lidarsphere_cli::scans::discover_scans;
use lidarsphere_cli::{pipeline, CliError, CliResult};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "lidarsphere",
    version,
    about = "Spherical-projection annotation pipeline for terrestrial laser scans"
)]
struct Cli {
    /// JSON pipeline configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Process only scans whose id matches (`*` and `?` wildcards).
    #[arg(long, global = true, value_name = "GLOB")]
    scan: Option<String>,

    /// Master seed override; drives member, component, and refinement RNG.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads (0 = one per core). Outputs are identical at any
    /// worker count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Feature-set override, e.g. IRZ_N3_CAP or IRZ_N3_CAP_PCA.
    #[arg(long, global = true, value_name = "NAME")]
    feature_set: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project scans onto the angular grid; write index, density report,
    /// raw channels, and rasterized ground truth.
    Project,
    /// Materialize the configured feature channels with previews.
    Featurize,
    /// Fit component models (PCA, MNF, ICA) on the feature cube.
    Reduce,
    /// Fuse member logits into pseudo-labels and uncertainty maps.
    Fuse {
        /// Train seeded members on the rasterized ground truth instead of
        /// reading logit files.
        #[arg(long)]
        baseline: bool,
    },
    /// Transfer pseudo-labels back onto the 3-D points.
    Backproject,
    /// Refine back-projected labels in 3-D, then re-rasterize them.
    Refine,
    /// Render the feature raster onto a virtual-sphere PLY.
    Sphere,
    /// Score predictions against the rasterized ground truth.
    Eval,
    /// Report per-pixel beam density without writing rasters.
    Density,
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("cannot apply --workers {n}: {e}")))?;
        }
    }
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, cli.feature_set.as_deref())?;
    cfg.validate()?;
    let jobs = discover_scans(&cfg, cli.scan.as_deref())?;

    if let Command::Eval = cli.command {
        let mut summaries = Vec::with_capacity(jobs.len());
        for job in &jobs {
            let (line, summary) = pipeline::cmd_eval(&cfg, job)?;
            println!("{line}");
            summaries.push(summary);
        }
        println!("{}", pipeline::write_aggregate(&cfg, &summaries)?);
        return Ok(());
    }

    for job in &jobs {
        let line = match &cli.command {
            Command::Project => pipeline::cmd_project(&cfg, job)?,
            Command::Featurize => pipeline::cmd_featurize(&cfg, job)?,
            Command::Reduce => pipeline::cmd_reduce(&cfg, job)?,
            Command::Fuse { baseline } => pipeline::cmd_fuse(&cfg, job, *baseline)?,
            Command::Backproject => pipeline::cmd_backproject(&cfg, job)?,
            Command::Refine => pipeline::cmd_refine(&cfg, job)?,
            Command::Sphere => pipeline::cmd_sphere(&cfg, job)?,
            Command::Density => pipeline::cmd_density(&cfg, job)?,
            Command::Eval => unreachable!("eval returns before this loop"),
        };
        println!("{line}");
    }
    Ok(())
}

fn panic_text(panic: &(dyn std::any::Any + Send)) -> &str {
    if let Some(s) = panic.downcast_ref::<&str>() {
        s
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s
    } else {
        "unexpected panic"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("LIDARSPHERE_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
        Err(panic) => {
            eprintln!("internal error: {}", panic_text(&*panic));
            ExitCode::from(4)
        }
    }
}
