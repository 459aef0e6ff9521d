use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{ExperimentReport, Table, Telemetry, Verdict, SCHEMA_VERSION};
use crate::coupling::{
    eigen_constant, lambda_theory, simulate_coupled, verify_cost4_bound, verify_eigenfunction_decay, verify_energy_contraction, AggregatedCoupling,
    CouplingConfig, SingleSystemConfig, POINTWISE_Z,
};
use crate::dynamics::{init_state, Formulation, InitKind, ParticleSystem};
use crate::event_stream::{EventStream, StreamConfig};
use crate::mean_field::{simulate_mean_field, verify_mean_field, MeanFieldConfig, MEAN_FIELD_RATE};
use crate::replicas::{fold_replicas, with_threads, Merge};
use crate::rng::{replica_rng, Domain};
use crate::stats::{ks_critical_value, ks_statistic, RunningStats};
use crate::{Error, Result};

/// Relative conservation tolerance per unit of `N`.
pub const CONSERVATION_TOL: f64 = 1e-9;

/// Relative tolerance on the fitted coupling contraction rate. The fit's own
/// stderr treats grid points as independent although they share replicas, so
/// it is reported but not used for the verdict.
pub const RATE_TOL: f64 = 0.02;

/// Mean per-particle collision rate of the finite system.
pub const PARTICLE_COLLISION_RATE: f64 = 2.0;

/// Pure part of an experiment: everything except writing files.
struct Outcome {
    table: Table,
    rate_fit: Option<crate::stats::RateFit>,
    verdicts: Vec<Verdict>,
    events: u64,
}

/// Runs the experiment without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let (outcome, threads) = with_threads(config.threads, || {
        let out = match config.experiment {
            ExperimentKind::Contraction => contraction(config),
            ExperimentKind::Corollary => corollary(config),
            ExperimentKind::Equivalence => equivalence(config),
            ExperimentKind::MeanField => mean_field(config),
            ExperimentKind::Equilibrium => equilibrium(config),
            ExperimentKind::Eigenfunction => eigenfunction(config),
        };
        (out, rayon::current_num_threads())
    });
    let outcome = outcome?;
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        experiment: config.experiment,
        config: config.clone(),
        pass: outcome.verdicts.iter().all(|v| v.pass),
        table: outcome.table,
        rate_fit: outcome.rate_fit,
        verdicts: outcome.verdicts,
        telemetry: Telemetry {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            events: outcome.events,
            replicas: config.replicas,
            threads,
        },
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub dir: PathBuf,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Creates `<output_dir>/<experiment>-<timestamp>-seed<seed>`, adding a
/// numeric suffix if that name is taken.
fn fresh_run_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{}-{stamp}-seed{}", config.experiment, config.seed);
    for attempt in 0u32.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
        let dir = config.output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!("u32 range exhausted")
}

/// Runs the experiment and writes `series.csv` and `report.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let report = execute(config)?;
    let dir = fresh_run_dir(config)?;
    let csv_path = dir.join("series.csv");
    fs::write(&csv_path, report.table.to_csv()?).map_err(io_err(&csv_path))?;
    let report_path = dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?).map_err(io_err(&report_path))?;
    Ok(RunOutput {
        report,
        dir,
        csv_path,
        report_path,
    })
}

fn coupling_config(config: &ExperimentConfig) -> Result<CouplingConfig> {
    CouplingConfig::new(
        config.n_particles,
        config.horizon,
        config.grid_points,
        config.init_v.clone(),
        config.init_w.clone(),
        config.seed,
    )
}

fn conservation_verdict(n: usize, drift: f64) -> Verdict {
    let tol = CONSERVATION_TOL * n as f64;
    Verdict::new("energy conservation", drift <= tol, format!("max |sum v^2 - N| <= {tol:e}"))
        .with("max_drift", drift)
        .with("tolerance", tol)
}

fn collision_rate_verdict(agg: &AggregatedCoupling) -> Verdict {
    let r = agg.collision_rate;
    Verdict::new(
        "per-particle collision rate",
        (r.mean - PARTICLE_COLLISION_RATE).abs() <= POINTWISE_Z * r.stderr,
        format!("|rate - {PARTICLE_COLLISION_RATE}| <= {POINTWISE_Z} stderr"),
    )
    .with("mean", r.mean)
    .with("stderr", r.stderr)
    .with("theory", PARTICLE_COLLISION_RATE)
}

fn contraction(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_particles;
    let agg = simulate_coupled(&coupling_config(config)?, config.replicas)?;
    let check = verify_energy_contraction(&agg, n)?;
    let mut table = Table::new(&["time", "mean_cost2E", "stderr_cost2E", "mean_cost4", "stderr_cost4", "theory_cost2E"]);
    for (k, p) in check.points.iter().enumerate() {
        table.push(vec![p.time, p.mean, p.stderr, agg.cost4[k].mean, agg.cost4[k].stderr, p.reference]);
    }
    let worst = check
        .points
        .iter()
        .filter(|p| p.stderr > 0.0)
        .map(|p| (p.mean - p.reference).abs() / p.stderr)
        .fold(0.0, f64::max);
    let fit = check.fit.clone();
    let verdicts = vec![
        Verdict::new(
            "exact exponential decay of cost2E",
            check.pass,
            format!("|mean(t) - exp(-lambda t) mean(0)| <= {POINTWISE_Z} stderr at every grid point"),
        )
        .with("lambda_theory", check.lambda)
        .with("worst_deviation_in_stderr", worst),
        Verdict::new(
            "fitted rate matches lambda_N",
            fit.relative_error().is_some_and(|e| e <= RATE_TOL),
            format!("|lambda_hat - lambda_N| / lambda_N <= {RATE_TOL}"),
        )
        .with("lambda_hat", fit.lambda_hat)
        .with("fit_stderr", fit.stderr)
        .with("lambda_theory", check.lambda)
        .with("relative_error", fit.relative_error().unwrap_or(f64::NAN)),
        conservation_verdict(n, agg.max_energy_drift),
    ];
    Ok(Outcome {
        table,
        rate_fit: Some(fit),
        verdicts,
        events: agg.events,
    })
}

fn corollary(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_particles;
    let agg = simulate_coupled(&coupling_config(config)?, config.replicas)?;
    let check = verify_cost4_bound(&agg, n)?;
    let mut table = Table::new(&[
        "time",
        "mean_cost4",
        "stderr_cost4",
        "bound_cost4",
        "mean_cost2E",
        "stderr_cost2E",
        "survival",
        "stderr_survival",
        "exp_minus_t",
        "exp_minus_2t",
    ]);
    for (k, p) in check.points.iter().enumerate() {
        let s = &check.survival[k];
        table.push(vec![
            p.time,
            p.mean_cost4,
            p.stderr_cost4,
            p.bound,
            agg.cost2e[k].mean,
            agg.cost2e[k].stderr,
            s.mean,
            s.stderr,
            s.exp_minus_t,
            s.exp_minus_2t,
        ]);
    }
    let last = check.survival.last().expect("grid has points");
    let verdicts = vec![
        Verdict::new(
            "cost4 bound",
            check.bound_pass,
            format!("mean cost4(t) <= exp(-lambda t) cost2E(0) + exp(-t) cost4(0) + {POINTWISE_Z} stderr"),
        )
        .with("lambda_theory", check.lambda),
        Verdict::new("sign agreement after first collision", check.sign_pass, "zero violations")
            .with("checks", check.sign_checks as f64)
            .with("violations", check.sign_violations as f64),
        collision_rate_verdict(&agg)
            .with("survival_at_horizon", last.mean)
            .with("exp_minus_t_at_horizon", last.exp_minus_t)
            .with("exp_minus_2t_at_horizon", last.exp_minus_2t),
        conservation_verdict(n, agg.max_energy_drift),
    ];
    Ok(Outcome {
        table,
        rate_fit: None,
        verdicts,
        events: agg.events,
    })
}

/// Terminal `V_1` and `(1/N) Σ v⁴` samples, one per replica.
#[derive(Debug, Clone, Default)]
pub struct TerminalSamples {
    pub v1: Vec<f64>,
    pub fourth_moment: Vec<f64>,
    pub events: u64,
}

impl Merge for TerminalSamples {
    fn merge(&mut self, other: Self) -> Result<()> {
        self.v1.extend(other.v1);
        self.fourth_moment.extend(other.fourth_moment);
        self.events += other.events;
        Ok(())
    }
}

/// Evolves `replicas` independent systems to `horizon`. `events_domain` and
/// `init_domain` select the random streams, so two calls differing in them
/// give independent samples.
#[allow(clippy::too_many_arguments)]
pub fn terminal_samples(
    n: usize,
    horizon: f64,
    init: &InitKind,
    formulation: Formulation,
    seed: u64,
    events_domain: Domain,
    init_domain: Domain,
    replicas: u64,
) -> Result<TerminalSamples> {
    if formulation == Formulation::EnergyE {
        return Err(Error::FormulationMismatch {
            formulation: "energy",
            state: "velocity",
        });
    }
    let stream = StreamConfig::new(n, horizon, seed)?;
    fold_replicas(replicas, TerminalSamples::default, |acc, r| {
        let mut state = init_state(init, n, &mut replica_rng(seed, init_domain, r))?;
        let events: Vec<_> = EventStream::with_domain(&stream, events_domain, r).collect();
        state.evolve(formulation, &events, horizon)?;
        acc.v1.push(state.v[0]);
        acc.fourth_moment.push(state.fourth_moment_sum() / n as f64);
        acc.events += events.len() as u64;
        Ok(())
    })
}

fn empirical_quantile_of(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[k]
}

fn equivalence(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_particles;
    let rotation = terminal_samples(
        n,
        config.horizon,
        &config.init_v,
        Formulation::RotationA,
        config.seed,
        Domain::Events,
        Domain::InitV,
        config.replicas,
    )?;
    let other = terminal_samples(
        n,
        config.horizon,
        &config.init_v,
        config.formulation,
        config.seed,
        Domain::EventsAlt,
        Domain::InitW,
        config.replicas,
    )?;
    let size = rotation.v1.len();
    let critical = ks_critical_value(size, other.v1.len(), config.significance);
    let mut verdicts = Vec::new();
    let mut sorted = Vec::new();
    for (name, a, b) in [
        ("v1", &rotation.v1, &other.v1),
        ("fourth_moment", &rotation.fourth_moment, &other.fourth_moment),
    ] {
        let d = ks_statistic(a, b)?;
        verdicts.push(
            Verdict::new(
                &format!("KS law equivalence of {name} (rotation vs {})", config.formulation),
                d <= critical,
                format!("KS statistic <= asymptotic critical value at alpha = {}", config.significance),
            )
            .with("ks_statistic", d)
            .with("critical_value", critical)
            .with("alpha", config.significance),
        );
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        sorted.push((sa, sb));
    }
    let mut table = Table::new(&["quantile", "v1_rotation", "v1_other", "fourth_moment_rotation", "fourth_moment_other"]);
    for k in 1..100 {
        let q = k as f64 / 100.0;
        table.push(vec![
            q,
            empirical_quantile_of(&sorted[0].0, q),
            empirical_quantile_of(&sorted[0].1, q),
            empirical_quantile_of(&sorted[1].0, q),
            empirical_quantile_of(&sorted[1].1, q),
        ]);
    }
    Ok(Outcome {
        table,
        rate_fit: None,
        verdicts,
        events: rotation.events + other.events,
    })
}

fn mean_field(config: &ExperimentConfig) -> Result<Outcome> {
    let mf = MeanFieldConfig::new(
        config.ensemble_size,
        config.horizon,
        config.grid_points,
        config.init_v.clone(),
        config.init_w.clone(),
        config.seed,
        config.partner,
    )?;
    let agg = simulate_mean_field(&mf, config.replicas)?;
    let check = verify_mean_field(&agg)?;
    let mut table = Table::new(&[
        "time",
        "mean_cost2E",
        "stderr_cost2E",
        "mean_cost4",
        "stderr_cost4",
        "theory_cost2E",
        "mean_energy_v",
        "stderr_energy_v",
        "mean_energy_w",
        "stderr_energy_w",
    ]);
    for (k, &t) in agg.times.iter().enumerate() {
        table.push(vec![
            t,
            agg.cost2e[k].mean,
            agg.cost2e[k].stderr,
            agg.cost4[k].mean,
            agg.cost4[k].stderr,
            check.upper_bound[k].reference,
            agg.energy_v[k].mean,
            agg.energy_v[k].stderr,
            agg.energy_w[k].mean,
            agg.energy_w[k].stderr,
        ]);
    }
    let fit = check.fit.clone();
    let (lo, hi) = (0.45, 0.55);
    let verdicts = vec![
        Verdict::new(
            "fitted contraction rate near 1/2",
            (lo..=hi).contains(&fit.lambda_hat),
            format!("lambda_hat in [{lo}, {hi}]"),
        )
        .with("lambda_hat", fit.lambda_hat)
        .with("fit_stderr", fit.stderr)
        .with("lambda_theory", MEAN_FIELD_RATE),
        Verdict::new(
            "cost2E at most exp(-t/2) cost2E(0)",
            check.bound_pass,
            format!("mean(t) <= exp(-t/2) mean(0) + {POINTWISE_Z} stderr at every grid point"),
        ),
        Verdict::new(
            "mean energy is a martingale",
            check.energy_martingale_pass,
            format!("|mean energy(T) - mean energy(0)| <= {POINTWISE_Z} combined stderr, both ensembles"),
        ),
        Verdict::new("sign agreement after each jump", check.sign_pass, "zero violations")
            .with("checks", agg.sign_checks as f64)
            .with("violations", agg.sign_violations as f64),
    ];
    Ok(Outcome {
        table,
        rate_fit: Some(fit),
        verdicts,
        events: agg.events,
    })
}

fn single_config(config: &ExperimentConfig) -> Result<SingleSystemConfig> {
    SingleSystemConfig::new(
        config.n_particles,
        config.horizon,
        config.grid_points,
        config.init_v.clone(),
        config.seed,
        config.formulation,
    )
}

fn equilibrium(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_particles;
    let series = crate::coupling::simulate_single(&single_config(config)?, config.replicas)?;
    let stationary = eigen_constant(n) / n as f64;
    let mut table = Table::new(&["time", "mean_fourth_moment", "stderr_fourth_moment", "stationary_fourth_moment"]);
    for (k, &t) in series.times.iter().enumerate() {
        let p = series.fourth_moment[k];
        table.push(vec![t, p.mean, p.stderr, stationary]);
    }
    let last = *series.fourth_moment.last().expect("grid has points");
    let verdicts = vec![
        Verdict::new(
            "long-time (1/N) sum v^4 equals 3N/(N+2)",
            (last.mean - stationary).abs() <= POINTWISE_Z * last.stderr,
            format!("|mean - 3N/(N+2)| <= {POINTWISE_Z} stderr at the horizon"),
        )
        .with("mean", last.mean)
        .with("stderr", last.stderr)
        .with("theory", stationary),
        conservation_verdict(n, series.max_energy_drift),
    ];
    Ok(Outcome {
        table,
        rate_fit: None,
        verdicts,
        events: series.events,
    })
}

/// Replicas of the Gaussian-direction sphere sample behind the `c` check.
const SPHERE_ORACLE_SAMPLES: u64 = 100_000;

fn sphere_oracle(n: usize, seed: u64) -> Result<RunningStats> {
    let mut acc = RunningStats::new();
    for r in 0..SPHERE_ORACLE_SAMPLES {
        let state = init_state(&InitKind::UniformSphere, n, &mut replica_rng(seed, Domain::Oracle, r))?;
        acc.push(state.fourth_moment_sum());
    }
    Ok(acc)
}

/// Relative tolerance on the fitted eigenfunction decay rate.
pub const EIGEN_RATE_TOL: f64 = 0.10;

fn eigenfunction(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_particles;
    let check = verify_eigenfunction_decay(&single_config(config)?, config.replicas)?;
    let lambda = lambda_theory(n)?;
    let initial = check.observable[0].mean;
    let mut table = Table::new(&["time", "mean_observable", "stderr_observable", "theory_observable"]);
    for (k, &t) in check.times.iter().enumerate() {
        let p = check.observable[k];
        table.push(vec![t, p.mean, p.stderr, (-lambda * t).exp() * initial]);
    }
    let oracle = sphere_oracle(n, config.seed)?;
    let mut verdicts = vec![Verdict::new(
        "c equals the uniform-sphere mean of sum v^4",
        (oracle.mean() - check.c).abs() <= POINTWISE_Z * oracle.stderr(),
        format!("|oracle mean - 3N^2/(N+2)| <= {POINTWISE_Z} stderr"),
    )
    .with("c", check.c)
    .with("oracle_mean", oracle.mean())
    .with("oracle_stderr", oracle.stderr())];
    match &check.fit {
        Some(fit) => verdicts.push(
            Verdict::new(
                "eigenfunction decay rate",
                fit.relative_error().is_some_and(|e| e <= EIGEN_RATE_TOL),
                format!("|lambda_hat - lambda_N| / lambda_N <= {EIGEN_RATE_TOL}"),
            )
            .with("lambda_hat", fit.lambda_hat)
            .with("fit_stderr", fit.stderr)
            .with("lambda_theory", lambda)
            .with("points_used", fit.times.len() as f64),
        ),
        None => verdicts.push(Verdict::new(
            "eigenfunction decay rate",
            false,
            "fit needs at least 3 grid points with mean >= 4 stderr",
        )),
    }
    verdicts.push(conservation_verdict(n, check.series.max_energy_drift));
    Ok(Outcome {
        table,
        rate_fit: check.fit.clone(),
        verdicts,
        events: check.series.events,
    })
}
