//! `tempdrift`: generate drift corpora, run temporal-adaptation
//! experiments, and tabulate their results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tempdrift::experiment::{
    cmd_generate, cmd_report, cmd_run, cmd_tr, render_report, write_report, RunConfig, Scale,
};

#[derive(Parser)]
#[command(name = "tempdrift", version, about = "Temporal drift experiments for text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic drift corpus and its generator sidecar.
    Generate(ConfigArgs),
    /// Train every seed on the configured split and write a run directory.
    Run(ConfigArgs),
    /// Tabulate CONT / TEMP / DIFF (plus TR and NMI) from run directories.
    Report(ReportArgs),
    /// Build the bin-by-bin score matrix and report temporal rigidity.
    Tr(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`, then `runs`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use seeds 1..=N instead of the configured list.
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing metrics.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Compare two of the listed runs with McNemar's test: `A,B`.
    #[arg(long, value_name = "A,B")]
    pair: Vec<String>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Unit)]
    scale: ScaleArg,
    /// Also write the report as JSON to `<DIR>/report.json`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Unit,
    Percent,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Unit => Scale::Unit,
            ScaleArg::Percent => Scale::Percent,
        }
    }
}

fn load(args: &ConfigArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::from_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(n) = args.seeds {
        if n == 0 {
            bail!("--seeds must be positive");
        }
        cfg = cfg.with_seed_count(n);
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, out))
}

fn resolve_pair(spec: &str, runs: &[PathBuf]) -> Result<(usize, usize)> {
    let Some((a, b)) = spec.split_once(',') else {
        bail!("--pair expects two run directories separated by a comma, got {spec:?}");
    };
    let find = |name: &str| {
        runs.iter()
            .position(|r| r == Path::new(name))
            .with_context(|| format!("--pair names {name}, which is not among the listed runs"))
    };
    Ok((find(a)?, find(b)?))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let (cfg, out) = load(&args)?;
            let path = cmd_generate(&cfg, &out)?;
            println!("{}", path.display());
        }
        Command::Run(args) => {
            let (cfg, out) = load(&args)?;
            let (dir, metrics) = cmd_run(&cfg, &out)?;
            log::info!("{} {}: f1 {:.4}", metrics.setting, metrics.variant, metrics.f1);
            println!("{}", dir.display());
        }
        Command::Report(args) => {
            let pairs = args.pair.iter().map(|p| resolve_pair(p, &args.runs)).collect::<Result<Vec<_>>>()?;
            let report = cmd_report(&args.runs, &pairs)?;
            if let Some(dir) = &args.out {
                write_report(&report, &dir.join("report.json"))?;
            }
            print!("{}", render_report(&report, args.scale.into()));
        }
        Command::Tr(args) => {
            let (cfg, out) = load(&args)?;
            let (dir, report) = cmd_tr(&cfg, &out)?;
            println!("TR {} = {:.6}", report.variant, report.tr);
            for row in &report.mean_matrix.f {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                println!("{}", cells.join(" "));
            }
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
