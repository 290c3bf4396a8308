use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ylab::config::{load_document, IniDocument, RunManifest};
use ylab::report::{parse_audit_list, report};
use ylab::run::{prescribe, scalar_flat, sign, simulate};
use ylab::sweep::{sweep, SweepParam};
use ylab::CliResult;

/// Radial Yamabe-flow lab.
#[derive(Debug, Parser)]
#[command(name = "ylab", version)]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = "YLAB_OUT", default_value = "ylab-out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reserved; every pipeline is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// INI config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Background override, e.g. `flat3` or `synthetic:A=-50,rc=2`.
    #[arg(long)]
    background: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the flow and write a run directory.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Replace an existing run directory with the same run_id.
        #[arg(long)]
        force: bool,
    },
    /// Solve for the scalar-flat conformal factor.
    ScalarFlat {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify the sign of the Yamabe constant with a certificate.
    YamabeSign {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Find the conformal factor realizing a target curvature.
    Prescribe {
        #[command(flatten)]
        run: RunArgs,
        /// `neg-power:c=..,tau=..` or a `r,value` CSV on the run grid.
        #[arg(long)]
        target: String,
    },
    /// Run every combination of the given parameters, then report.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `section.key=v1|v2`; repeat for more axes.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Audit run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Comma-separated audits that must pass (default: those applicable to each run).
        #[arg(long)]
        require: Option<String>,
        /// Also draw SVG charts under <run>/plots.
        #[arg(long)]
        svg: bool,
        /// Aggregate JSON path (default: <out>/report.json).
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn load_manifest(args: &RunArgs, seed: Option<u64>) -> CliResult<RunManifest> {
    let (mut doc, origin, stem) = match &args.config {
        Some(path) => load_document(path)?,
        None => (IniDocument::default(), "<defaults>".to_string(), "default".to_string()),
    };
    if let Some(bg) = &args.background {
        doc.set("background", "name", bg);
    }
    let mut manifest = RunManifest::from_document(doc, &origin, &stem)?;
    manifest.seed = seed;
    Ok(manifest)
}

fn execute(cli: Cli) -> CliResult<i32> {
    let out = cli.out;
    match cli.command {
        Command::Simulate { run, force } => {
            let manifest = load_manifest(&run, cli.seed)?;
            let outcome = simulate(&manifest, &out, force)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            if let Some(reason) = &outcome.summary.halt_reason {
                eprintln!("run halted: {reason:?}");
            }
            Ok(outcome.exit_code())
        }
        Command::ScalarFlat { run } => {
            let dir = scalar_flat(&load_manifest(&run, cli.seed)?, &out)?;
            println!("{}", dir.join("u_inf.csv").display());
            Ok(0)
        }
        Command::YamabeSign { run } => {
            let (_, summary) = sign(&load_manifest(&run, cli.seed)?, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Prescribe { run, target } => {
            let dir = prescribe(&load_manifest(&run, cli.seed)?, &out, &target)?;
            println!("{}", dir.join("phi.csv").display());
            Ok(0)
        }
        Command::Sweep { config, params, force } => {
            let params = params.iter().map(|p| SweepParam::parse(p)).collect::<CliResult<Vec<_>>>()?;
            let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let outcome = sweep(&config, &params, &out, jobs, force)?;
            for e in &outcome.entries {
                println!("{}  {}  {:?}", e.run_id, e.status, e.params);
            }
            if let Some(r) = &outcome.report {
                print!("{}", r.table());
            }
            Ok(outcome.exit_code())
        }
        Command::Report { runs, require, svg, json } => {
            let required = require.as_deref().map(parse_audit_list).transpose()?;
            let aggregate = json.unwrap_or_else(|| out.join("report.json"));
            let outcome = report(&runs, required.as_deref(), svg, &aggregate)?;
            print!("{}", outcome.table());
            Ok(outcome.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

