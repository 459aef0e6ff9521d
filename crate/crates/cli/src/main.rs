use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kac_core::dynamics::{Formulation, InitKind};
use kac_core::experiment::{parse_config, run_experiment, ExperimentKind, PartialConfig};
use kac_core::mean_field::PartnerRule;

/// Monte Carlo experiments for Kac's one-dimensional collision model.
#[derive(Debug, Parser)]
#[command(name = "kac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact exponential decay of the coupled energy cost.
    Contraction(CommonArgs),
    /// Order-four cost bound, sign agreement and collision-rate telemetry.
    Corollary(CommonArgs),
    /// Two-sample KS comparison of the rotation and radial dynamics.
    Equivalence(CommonArgs),
    /// Contraction of two coupled mean-field ensembles.
    Meanfield(CommonArgs),
    /// Long-time fourth moment against the uniform-sphere value.
    Equilibrium(CommonArgs),
    /// Decay rate of the fourth-moment eigenfunction.
    Eigenfunction(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Particle count N.
    #[arg(long)]
    n: Option<usize>,
    /// Ensemble size M (meanfield only).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of grid points on [0, horizon].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// axis, sphere, twolevel[:fraction:energy] or custom:v1,v2,...
    #[arg(long)]
    init_v: Option<InitKind>,
    #[arg(long)]
    init_w: Option<InitKind>,
    /// rotation, radial or energy.
    #[arg(long)]
    formulation: Option<Formulation>,
    /// Mean-field partner rule: quantile or label.
    #[arg(long)]
    partner: Option<PartnerRule>,
    /// Significance level of two-sample tests.
    #[arg(long)]
    significance: Option<f64>,
    /// Directory receiving one sub-directory per run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> PartialConfig {
        PartialConfig {
            experiment: None,
            n_particles: self.n,
            ensemble_size: self.m,
            horizon: self.horizon,
            grid_points: self.grid,
            replicas: self.replicas,
            seed: self.seed,
            init_v: self.init_v.clone(),
            init_w: self.init_w.clone(),
            formulation: self.formulation,
            partner: self.partner,
            significance: self.significance,
            output_dir: self.out.clone(),
            threads: self.threads,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Contraction(a) => (ExperimentKind::Contraction, a),
        Command::Corollary(a) => (ExperimentKind::Corollary, a),
        Command::Equivalence(a) => (ExperimentKind::Equivalence, a),
        Command::Meanfield(a) => (ExperimentKind::MeanField, a),
        Command::Equilibrium(a) => (ExperimentKind::Equilibrium, a),
        Command::Eigenfunction(a) => (ExperimentKind::Eigenfunction, a),
    };
    let result = parse_config(kind, args.config.as_deref(), args.overrides()).and_then(|config| run_experiment(&config));
    match result {
        Ok(out) => {
            for line in out.report.summary_lines() {
                println!("{line}");
            }
            println!("wrote {}", out.dir.display());
            if out.report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
