//! Experiment harness: configuration, orchestration and reporting for the
//! gsurf verification suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use gsurf_core::ibp_verifier::DensitySource;
use gsurf_core::path_engine::ProcessKind;
use gsurf_core::GsurfError;

use config::{load_file, parse_list, Experiment, ExperimentConfig, Layer};
use error::{CliError, Result};
use experiments::{run_experiment, SweepRow};
use report::{write_report, write_sweep, RunReport};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "GSURF_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(name = "gsurf", version, about = "Surface-measure and integration-by-parts verification runs")]
pub struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// Process: bm, bridge, distorted, geometric or ou.
    #[arg(long)]
    pub process: Option<String>,
    /// Drift of the distorted and geometric processes.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    /// Volatility of the distorted and geometric processes.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Mean reversion of the OU process.
    #[arg(long)]
    pub a: Option<f64>,
    /// Comma-separated levels.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<String>,
    /// Comma-separated, strictly decreasing shell half-widths.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Number of time steps on [0, 1].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncation order of the Neumann suite.
    #[arg(long)]
    pub k: Option<usize>,
    /// Kernel bandwidth in g.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Cutoff threshold of lemma21.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// ibp-halfspace: check the joint (g, tau) form.
    #[arg(long)]
    pub joint: bool,
    /// ibp-halfspace: source of rho(r), oracle or estimated.
    #[arg(long)]
    pub density: Option<String>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json and sweep.csv.
    #[arg(long, default_value = "gsurf-out")]
    pub out: PathBuf,
}

impl Args {
    fn layer(&self) -> Result<Layer> {
        let mut l = Layer::default();
        l.run.n_paths = self.n_paths;
        l.run.grid = self.grid;
        l.run.seed = self.seed;
        l.process.kind = self.process.as_deref().map(str::parse::<ProcessKind>).transpose()?;
        l.process.b = self.b;
        l.process.sigma = self.sigma;
        l.process.a = self.a;
        l.params.r = self.r.as_deref().map(parse_list).transpose()?;
        l.params.eps = self.eps.as_deref().map(parse_list).transpose()?;
        l.params.k = self.k;
        l.params.bandwidth = self.bandwidth;
        l.params.cutoff = self.cutoff;
        l.params.joint = self.joint.then_some(true);
        l.params.density = match self.density.as_deref() {
            None => None,
            Some("oracle") => Some(DensitySource::Oracle),
            Some("estimated") => Some(DensitySource::Estimated),
            Some(other) => return Err(GsurfError::Config(format!("unknown density source '{other}'")).into()),
        };
        Ok(l)
    }

    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut layers = match &self.config {
            Some(p) => load_file(p, self.experiment)?,
            None => Vec::new(),
        };
        layers.push(self.layer()?);
        ExperimentConfig::resolve(self.experiment, &layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub sweep: Vec<SweepRow>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let outcome = run_experiment(cfg)?;
    let report = RunReport::new(cfg, &outcome.results, start.elapsed().as_secs_f64());
    Ok(RunOutput { report, sweep: outcome.sweep })
}

/// Sizes the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| GsurfError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 when every
/// check passes, 1 when one fails or the run errors, 2 on a configuration or
/// usage error.
pub fn main_with(args: &Args) -> i32 {
    match execute(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gsurf: {e}");
            e.exit_code()
        }
    }
}

fn execute(args: &Args) -> std::result::Result<i32, CliError> {
    configure_threads()?;
    let cfg = args.resolve()?;
    let out = run(&cfg)?;
    write_report(&out.report, &args.out)?;
    if !out.sweep.is_empty() {
        write_sweep(&out.sweep, &args.out)?;
    }
    for r in &out.report.results {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        let flags = if r.flags.is_empty() { String::new() } else { format!(" [{}]", r.flags.join(",")) };
        println!(
            "{verdict} {} lhs={:.6} ({:.2e}) rhs={:.6} ({:.2e}) z={:.2}{flags}",
            r.identity_tag, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.z_score
        );
    }
    let s = out.report.summary;
    println!("{}: {} checks, {} failed, {:.1} s", cfg.experiment.as_str(), s.n_checks, s.n_fail, out.report.runtime_sec);
    Ok(if out.report.all_pass() { 0 } else { 1 })
}
