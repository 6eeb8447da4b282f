use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rcm_cli::config::{parse_law, ExperimentConfig, ExperimentKind, ValidationError};
use rcm_cli::manifest::{reproduce, RunManifest};
use rcm_cli::report::emit_report;
use rcm_cli::run::{run_experiment, sample_to, OUTPUT_ROOT_VAR};

#[derive(Parser)]
#[command(name = "rcm", version, about = "Random conductance model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one field and write it with its component table.
    Sample {
        #[arg(long)]
        law: String,
        #[arg(short, long, default_value_t = 2)]
        d: usize,
        #[arg(short = 'L', long = "radius")]
        radius: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Threshold for the component table.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Exact return-probability series and decay fits.
    Kernel {
        #[command(flatten)]
        exp: ExpArgs,
        /// Average over the ensemble before fitting.
        #[arg(long)]
        annealed: bool,
    },
    /// Coarse-grained chain checks on sampled anchors.
    Coarse {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Boundary-to-volume ratios of grown sets at the radii in the grid.
    Iso {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Frequency of the good-block event at the block scales in the grid.
    Gn {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Trap census, or trap lower bounds against exact kernels.
    Traps {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        bound: bool,
    },
    /// Run an experiment from a JSON config, or replay a manifest.
    Run {
        #[arg(long, conflicts_with = "replay", required_unless_present = "replay")]
        config: Option<PathBuf>,
        /// Re-run a manifest's config and compare output checksums.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarise a finished run. Exits 1 when an invariant failed.
    Report {
        /// Manifest file or output directory.
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// `homogeneous:v`, `bernoulli:p`, `two-value:p,n`, `dyadic:p1,eps` or a JSON law.
    #[arg(long)]
    law: String,
    #[arg(short, long, default_value_t = 2)]
    d: usize,
    #[arg(short = 'L', long = "radius")]
    radius: u32,
    #[arg(long)]
    alpha: Option<f64>,
    /// Explicit grid, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["n_max", "stride"])]
    n_grid: Option<Vec<usize>>,
    /// Grid `stride, 2 stride, ..., n_max`.
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    /// Inclusive fit window `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    fit_range: Option<Vec<usize>>,
    #[arg(long)]
    with_log: Option<bool>,
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    walkers: u64,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    weak_max: Option<f64>,
    /// Bytes.
    #[arg(long)]
    memory_cap: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Parent of generated output directories.
    #[arg(long, env = OUTPUT_ROOT_VAR)]
    output_root: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl ExpArgs {
    fn config(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let law = parse_law(&self.law).map_err(Usage)?;
        let grid = match (&self.n_grid, self.n_max) {
            (Some(g), _) => g.clone(),
            (None, Some(top)) => {
                if self.stride == 0 {
                    bail!(Usage(anyhow::anyhow!("--stride must be positive")));
                }
                (1..=top / self.stride).map(|k| k * self.stride).collect()
            }
            (None, None) => bail!(Usage(anyhow::anyhow!("give --n-grid or --n-max"))),
        };
        let mut c = ExperimentConfig::new(kind, law, self.d, self.radius, grid, self.seed);
        c.alpha = self.alpha;
        c.fit_range = self.fit_range.as_ref().map(|r| (r[0], r[1]));
        c.with_log = self.with_log;
        c.ensemble = self.ensemble;
        c.walkers = self.walkers;
        if let Some(s) = self.samples {
            c.samples = s;
        }
        if let Some(w) = self.weak_max {
            c.weak_max = w;
        }
        if let Some(m) = self.memory_cap {
            c.memory_cap = m;
        }
        c.threads = self.threads;
        c.output = match (&self.output, &self.output_root) {
            (Some(o), _) => Some(o.clone()),
            (None, Some(root)) => Some(root.join(format!("{}-{}", kind.as_str(), &c.hash()[..12]))),
            (None, None) => None,
        };
        Ok(c)
    }
}

/// Marks an error as a usage error (exit code 2).
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn finish(manifest: &RunManifest) -> Result<ExitCode> {
    let report = emit_report(manifest)?;
    fs::write(manifest.output_dir.join("report.md"), &report.text)?;
    print!("{}", report.text);
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_config(config: ExperimentConfig) -> Result<ExitCode> {
    let manifest = run_experiment(&config)?;
    finish(&manifest)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sample { law, d, radius, seed, alpha, output } => {
            let law = parse_law(&law).map_err(Usage)?;
            let (path, fingerprint) = sample_to(&output, &law, d, radius, seed, alpha)?;
            println!("{} fingerprint {fingerprint:016x}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Kernel { exp, annealed } => {
            let kind = if annealed { ExperimentKind::Annealed } else { ExperimentKind::DecayFit };
            run_config(exp.config(kind)?)
        }
        Command::Coarse { exp } => run_config(exp.config(ExperimentKind::CoarseCheck)?),
        Command::Iso { exp } => run_config(exp.config(ExperimentKind::IsoProfile)?),
        Command::Gn { exp } => run_config(exp.config(ExperimentKind::GnScan)?),
        Command::Traps { exp, bound } => {
            let kind = if bound { ExperimentKind::TrapBound } else { ExperimentKind::TrapCensus };
            run_config(exp.config(kind)?)
        }
        Command::Run { config, replay, output, threads } => {
            if let Some(path) = replay {
                let old = RunManifest::load(&path)?;
                let dir = output.context("--replay needs --output for the fresh run")?;
                let (_, same) = reproduce(&old, &dir)?;
                println!("{}", if same { "checksums reproduced" } else { "checksums differ" });
                return Ok(if same { ExitCode::SUCCESS } else { ExitCode::from(1) });
            }
            let path = config.expect("clap requires --config without --replay");
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut c = ExperimentConfig::from_json(&text).map_err(Usage)?;
            if output.is_some() {
                c.output = output;
            }
            if threads.is_some() {
                c.threads = threads;
            }
            run_config(c)
        }
        Command::Report { manifest } => finish(&RunManifest::load(&manifest)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<ValidationError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
