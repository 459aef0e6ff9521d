//! Parallel coupling of two radial-form systems on one event stream.
//!
//! With energies `E_i = V_i²`, `F_i = W_i²` normalised to total `N`, the mean
//! squared energy gap `E[(1/N) Σ (E_i − F_i)²]` decays exactly like
//! `exp(−λ_N t)` with `λ_N = (N + 2) / (2 (N − 1))`. The order-four velocity
//! cost is bounded through the sign agreement that every collision creates.

use serde::{Deserialize, Serialize};

use crate::dynamics::{init_state, EnergyState, Formulation, InitKind, ParticleSystem, VelocityState};
use crate::event_stream::{EventDigest, EventStream, StreamConfig};
use crate::replicas::{fold_replicas, Merge};
use crate::rng::{replica_rng, Domain};
use crate::stats::{fit_exponential_rate, MeanStderr, RateFit, RunningStats, TimeSeries};
use crate::{Error, Result};

/// Pass threshold, in standard errors, for every pointwise Monte Carlo check.
pub const POINTWISE_Z: f64 = 4.0;

/// Absolute slack, relative to the initial cost, for floating-point rounding
/// in the exact-equality check.
const ROUNDING_SLACK: f64 = 1e-12;

/// `λ_N = 1/2 + 3 / (2 (N − 1)) = (N + 2) / (2 (N − 1))`.
pub fn lambda_theory(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    Ok((n + 2) as f64 / (2.0 * (n - 1) as f64))
}

/// Stationary mean of `Σ v⁴` on the sphere of radius `√N`: `3N² / (N + 2)`.
pub fn eigen_constant(n: usize) -> f64 {
    let n = n as f64;
    3.0 * n * n / (n + 2.0)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::LengthMismatch { left: a, right: b })
    } else if a == 0 {
        Err(Error::EmptySample)
    } else {
        Ok(())
    }
}

/// `(1/N) Σ (v_i² − w_i²)²`.
pub fn cost2_energy(v: &[f64], w: &[f64]) -> Result<f64> {
    check_len(v.len(), w.len())?;
    Ok(v.iter()
        .zip(w)
        .map(|(a, b)| {
            let d = a * a - b * b;
            d * d
        })
        .sum::<f64>()
        / v.len() as f64)
}

/// `(1/N) Σ (e_i − f_i)²` on energies directly.
pub fn cost2_from_energies(e: &[f64], f: &[f64]) -> Result<f64> {
    check_len(e.len(), f.len())?;
    Ok(e.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / e.len() as f64)
}

/// `(1/N) Σ (v_i − w_i)⁴`.
pub fn cost4(v: &[f64], w: &[f64]) -> Result<f64> {
    check_len(v.len(), w.len())?;
    Ok(v.iter().zip(w).map(|(a, b)| (a - b).powi(4)).sum::<f64>() / v.len() as f64)
}

/// `points` equispaced times on `[0, horizon]`, both ends included.
pub fn uniform_grid(horizon: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: points });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidHorizon(horizon));
    }
    let step = horizon / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|k| k as f64 * step).collect();
    grid[points - 1] = horizon;
    Ok(grid)
}

pub(crate) fn validate_grid(grid: &[f64], horizon: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidSeries("empty grid".into()));
    }
    if grid[0] < 0.0 || grid[grid.len() - 1] > horizon {
        return Err(Error::InvalidSeries(format!("grid must lie in [0, {horizon}]")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidSeries("grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub n: usize,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub init_v: InitKind,
    pub init_w: InitKind,
    pub seed: u64,
    /// Also evolve the energy form pathwise and record its cost.
    pub track_energy_form: bool,
}

impl CouplingConfig {
    pub fn new(n: usize, horizon: f64, grid_points: usize, init_v: InitKind, init_w: InitKind, seed: u64) -> Result<Self> {
        let config = Self {
            n,
            horizon,
            grid: uniform_grid(horizon, grid_points)?,
            init_v,
            init_w,
            seed,
            track_energy_form: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        StreamConfig::new(self.n, self.horizon, self.seed)?;
        validate_grid(&self.grid, self.horizon)
    }

    fn stream(&self) -> StreamConfig {
        StreamConfig {
            n_particles: self.n,
            horizon: self.horizon,
            seed: self.seed,
        }
    }
}

/// One replica of the coupled evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub initial_v: VelocityState,
    pub initial_w: VelocityState,
    pub sys_v: VelocityState,
    pub sys_w: VelocityState,
    pub times: Vec<f64>,
    pub cost2e: Vec<f64>,
    pub cost4: Vec<f64>,
    /// Cost of the energy-form pair, when tracked.
    pub cost2e_energy_form: Option<Vec<f64>>,
    /// `(1/N) Σ (v_i − w_i)⁴` over particles that have not collided yet.
    pub cost4_uncollided: Vec<f64>,
    /// Fraction of particles that have not collided yet.
    pub survival: Vec<f64>,
    pub collision_counts: Vec<u32>,
    /// Time of the first collision involving each particle (`∞` if none).
    pub first_collision_time: Vec<f64>,
    pub sign_checks: u64,
    pub sign_violations: u64,
    pub events: u64,
    pub digest: EventDigest,
    /// Largest `|Σ v² − N|` seen on the grid, over both systems.
    pub max_energy_drift: f64,
}

/// Evolves both systems of `replica` through the shared event stream.
pub fn run_coupled(config: &CouplingConfig, replica: u64) -> Result<CoupledRun> {
    config.validate()?;
    let n = config.n;
    let v0 = init_state(&config.init_v, n, &mut replica_rng(config.seed, Domain::InitV, replica))?;
    let w0 = init_state(&config.init_w, n, &mut replica_rng(config.seed, Domain::InitW, replica))?;
    let mut v = v0.clone();
    let mut w = w0.clone();
    let mut energy_pair: Option<(EnergyState, EnergyState)> =
        config.track_energy_form.then(|| (v0.energies(), w0.energies()));

    let points = config.grid.len();
    let mut run = CoupledRun {
        initial_v: v0,
        initial_w: w0,
        sys_v: VelocityState::new(Vec::new()),
        sys_w: VelocityState::new(Vec::new()),
        times: config.grid.clone(),
        cost2e: Vec::with_capacity(points),
        cost4: Vec::with_capacity(points),
        cost2e_energy_form: config.track_energy_form.then(|| Vec::with_capacity(points)),
        cost4_uncollided: Vec::with_capacity(points),
        survival: Vec::with_capacity(points),
        collision_counts: vec![0; n],
        first_collision_time: vec![f64::INFINITY; n],
        sign_checks: 0,
        sign_violations: 0,
        events: 0,
        digest: EventDigest::default(),
        max_energy_drift: 0.0,
    };

    let record = |run: &mut CoupledRun, v: &VelocityState, w: &VelocityState, pair: &Option<(EnergyState, EnergyState)>, t: f64| -> Result<()> {
        run.cost2e.push(cost2_energy(&v.v, &w.v)?);
        run.cost4.push(cost4(&v.v, &w.v)?);
        if let (Some(series), Some((e, f))) = (run.cost2e_energy_form.as_mut(), pair) {
            series.push(cost2_from_energies(&e.e, &f.e)?);
        }
        let mut fresh = 0usize;
        let mut fresh_cost = 0.0;
        for i in 0..n {
            if run.first_collision_time[i] > t {
                fresh += 1;
                fresh_cost += (v.v[i] - w.v[i]).powi(4);
            }
        }
        run.cost4_uncollided.push(fresh_cost / n as f64);
        run.survival.push(fresh as f64 / n as f64);
        let target = n as f64;
        run.max_energy_drift = run
            .max_energy_drift
            .max((v.total_energy() - target).abs())
            .max((w.total_energy() - target).abs());
        Ok(())
    };

    let mut next_point = 0;
    for event in EventStream::for_replica(&config.stream(), replica) {
        while next_point < points && config.grid[next_point] < event.time {
            record(&mut run, &v, &w, &energy_pair, config.grid[next_point])?;
            next_point += 1;
        }
        v.apply_event(Formulation::RadialB, &event)?;
        w.apply_event(Formulation::RadialB, &event)?;
        if let Some((e, f)) = energy_pair.as_mut() {
            e.apply_event(Formulation::EnergyE, &event)?;
            f.apply_event(Formulation::EnergyE, &event)?;
        }
        for k in [event.i, event.j] {
            run.collision_counts[k] += 1;
            if run.first_collision_time[k].is_infinite() {
                run.first_collision_time[k] = event.time;
            }
            run.sign_checks += 1;
            if v.v[k] * w.v[k] < 0.0 {
                run.sign_violations += 1;
            }
        }
        run.digest.update(&event);
        run.events += 1;
    }
    while next_point < points {
        record(&mut run, &v, &w, &energy_pair, config.grid[next_point])?;
        next_point += 1;
    }
    v.set_time(config.horizon);
    w.set_time(config.horizon);
    run.sys_v = v;
    run.sys_w = w;
    Ok(run)
}

fn stats_row(len: usize) -> Vec<RunningStats> {
    vec![RunningStats::new(); len]
}

fn summaries(row: &[RunningStats]) -> Vec<MeanStderr> {
    row.iter().map(RunningStats::summary).collect()
}

fn merge_rows(into: &mut [RunningStats], from: &[RunningStats]) {
    into.iter_mut().zip(from).for_each(|(a, b)| a.merge(b));
}

/// Streaming replica aggregate of [`CoupledRun`]s.
#[derive(Debug, Clone)]
pub struct CouplingAccumulator {
    n: usize,
    horizon: f64,
    times: Vec<f64>,
    cost2e: Vec<RunningStats>,
    cost4: Vec<RunningStats>,
    cost2e_energy_form: Option<Vec<RunningStats>>,
    cost4_uncollided: Vec<RunningStats>,
    survival: Vec<RunningStats>,
    collision_rate: RunningStats,
    sign_checks: u64,
    sign_violations: u64,
    events: u64,
    max_energy_drift: f64,
    max_energy_form_gap: f64,
}

impl CouplingAccumulator {
    pub fn new(n: usize, horizon: f64, times: Vec<f64>, track_energy_form: bool) -> Self {
        let len = times.len();
        Self {
            n,
            horizon,
            times,
            cost2e: stats_row(len),
            cost4: stats_row(len),
            cost2e_energy_form: track_energy_form.then(|| stats_row(len)),
            cost4_uncollided: stats_row(len),
            survival: stats_row(len),
            collision_rate: RunningStats::new(),
            sign_checks: 0,
            sign_violations: 0,
            events: 0,
            max_energy_drift: 0.0,
            max_energy_form_gap: 0.0,
        }
    }

    pub fn for_config(config: &CouplingConfig) -> Self {
        Self::new(config.n, config.horizon, config.grid.clone(), config.track_energy_form)
    }

    pub fn push(&mut self, run: &CoupledRun) -> Result<()> {
        if run.times != self.times {
            return Err(Error::GridMismatch);
        }
        if run.collision_counts.len() != self.n {
            return Err(Error::LengthMismatch {
                left: run.collision_counts.len(),
                right: self.n,
            });
        }
        for k in 0..self.times.len() {
            self.cost2e[k].push(run.cost2e[k]);
            self.cost4[k].push(run.cost4[k]);
            self.cost4_uncollided[k].push(run.cost4_uncollided[k]);
            self.survival[k].push(run.survival[k]);
        }
        match (self.cost2e_energy_form.as_mut(), run.cost2e_energy_form.as_ref()) {
            (Some(acc), Some(series)) => {
                for (k, &c) in series.iter().enumerate() {
                    acc[k].push(c);
                    let scale = run.cost2e[k].abs().max(run.cost2e[0].abs()).max(f64::MIN_POSITIVE);
                    self.max_energy_form_gap = self.max_energy_form_gap.max((c - run.cost2e[k]).abs() / scale);
                }
            }
            (None, None) => {}
            _ => return Err(Error::InvalidArgument("energy-form tracking differs between runs".into())),
        }
        let total: u64 = run.collision_counts.iter().map(|&c| c as u64).sum();
        self.collision_rate.push(total as f64 / (self.n as f64 * self.horizon));
        self.sign_checks += run.sign_checks;
        self.sign_violations += run.sign_violations;
        self.events += run.events;
        self.max_energy_drift = self.max_energy_drift.max(run.max_energy_drift);
        Ok(())
    }

    pub fn finish(self) -> AggregatedCoupling {
        AggregatedCoupling {
            n: self.n,
            horizon: self.horizon,
            replicas: self.collision_rate.count(),
            cost2e: summaries(&self.cost2e),
            cost4: summaries(&self.cost4),
            cost2e_energy_form: self.cost2e_energy_form.as_deref().map(summaries),
            cost4_uncollided: summaries(&self.cost4_uncollided),
            survival: summaries(&self.survival),
            times: self.times,
            collision_rate: self.collision_rate.summary(),
            sign_checks: self.sign_checks,
            sign_violations: self.sign_violations,
            events: self.events,
            max_energy_drift: self.max_energy_drift,
            max_energy_form_gap: self.max_energy_form_gap,
        }
    }
}

impl Merge for CouplingAccumulator {
    fn merge(&mut self, other: Self) -> Result<()> {
        if other.times != self.times || other.n != self.n {
            return Err(Error::GridMismatch);
        }
        merge_rows(&mut self.cost2e, &other.cost2e);
        merge_rows(&mut self.cost4, &other.cost4);
        merge_rows(&mut self.cost4_uncollided, &other.cost4_uncollided);
        merge_rows(&mut self.survival, &other.survival);
        if let (Some(a), Some(b)) = (self.cost2e_energy_form.as_mut(), other.cost2e_energy_form.as_ref()) {
            merge_rows(a, b);
        }
        self.collision_rate.merge(&other.collision_rate);
        self.sign_checks += other.sign_checks;
        self.sign_violations += other.sign_violations;
        self.events += other.events;
        self.max_energy_drift = self.max_energy_drift.max(other.max_energy_drift);
        self.max_energy_form_gap = self.max_energy_form_gap.max(other.max_energy_form_gap);
        Ok(())
    }
}

/// Pointwise replica means and standard errors of the coupling observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCoupling {
    pub n: usize,
    pub horizon: f64,
    pub replicas: u64,
    pub times: Vec<f64>,
    pub cost2e: Vec<MeanStderr>,
    pub cost4: Vec<MeanStderr>,
    pub cost2e_energy_form: Option<Vec<MeanStderr>>,
    pub cost4_uncollided: Vec<MeanStderr>,
    pub survival: Vec<MeanStderr>,
    /// Per-replica collisions per particle per unit time.
    pub collision_rate: MeanStderr,
    pub sign_checks: u64,
    pub sign_violations: u64,
    pub events: u64,
    pub max_energy_drift: f64,
    /// Largest pathwise relative gap between the radial and energy-form costs.
    pub max_energy_form_gap: f64,
}

pub fn aggregate_replicas(runs: &[CoupledRun]) -> Result<AggregatedCoupling> {
    if runs.len() < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: runs.len() });
    }
    let first = &runs[0];
    let mut acc = CouplingAccumulator::new(
        first.collision_counts.len(),
        first.sys_v.time,
        first.times.clone(),
        first.cost2e_energy_form.is_some(),
    );
    for run in runs {
        acc.push(run)?;
    }
    Ok(acc.finish())
}

/// Runs `replicas` coupled replicas, replica-parallel and scheduler independent.
pub fn simulate_coupled(config: &CouplingConfig, replicas: u64) -> Result<AggregatedCoupling> {
    config.validate()?;
    if replicas < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: replicas as usize });
    }
    let acc = fold_replicas(
        replicas,
        || CouplingAccumulator::for_config(config),
        |acc, r| acc.push(&run_coupled(config, r)?),
    )?;
    Ok(acc.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
    pub reference: f64,
    pub pass: bool,
}

/// Two-sided check of `mean(t) = exp(−λ t) mean(0)` within `z` stderr.
pub fn check_exponential_law(times: &[f64], points: &[MeanStderr], lambda: f64, z: f64) -> Result<Vec<PointCheck>> {
    if times.len() != points.len() || times.is_empty() {
        return Err(Error::GridMismatch);
    }
    let initial = points[0].mean;
    if points.iter().all(|p| p.mean == 0.0) {
        return Err(Error::DegenerateSeries);
    }
    Ok(times
        .iter()
        .zip(points)
        .map(|(&t, p)| {
            let reference = (-lambda * (t - times[0])).exp() * initial;
            let pass = (p.mean - reference).abs() <= z * p.stderr + ROUNDING_SLACK * initial.abs();
            PointCheck {
                time: t,
                mean: p.mean,
                stderr: p.stderr,
                reference,
                pass,
            }
        })
        .collect())
}

/// Drops points drowned in noise, then log-fits the rest.
pub fn fit_rate(times: &[f64], points: &[MeanStderr]) -> Result<RateFit> {
    let series = TimeSeries::from_summaries(times, points)?.significant(POINTWISE_Z);
    fit_exponential_rate(&series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub lambda: f64,
    pub z: f64,
    pub points: Vec<PointCheck>,
    pub fit: RateFit,
    pub pass: bool,
}

pub fn verify_energy_contraction(agg: &AggregatedCoupling, n: usize) -> Result<ContractionCheck> {
    verify_energy_contraction_with_rate(agg, lambda_theory(n)?)
}

/// Same check against an arbitrary rate, e.g. to confirm a wrong rate fails.
pub fn verify_energy_contraction_with_rate(agg: &AggregatedCoupling, lambda: f64) -> Result<ContractionCheck> {
    if !(agg.cost2e[0].mean > 0.0) {
        return Err(Error::DegenerateSeries);
    }
    let points = check_exponential_law(&agg.times, &agg.cost2e, lambda, POINTWISE_Z)?;
    let fit = fit_rate(&agg.times, &agg.cost2e)?.with_theory(lambda);
    let pass = points.iter().all(|p| p.pass);
    Ok(ContractionCheck {
        lambda,
        z: POINTWISE_Z,
        points,
        fit,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cost4Point {
    pub time: f64,
    pub mean_cost4: f64,
    pub stderr_cost4: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
    pub exp_minus_t: f64,
    pub exp_minus_2t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cost4BoundCheck {
    pub lambda: f64,
    pub z: f64,
    pub points: Vec<Cost4Point>,
    pub survival: Vec<SurvivalPoint>,
    pub sign_checks: u64,
    pub sign_violations: u64,
    pub bound_pass: bool,
    pub sign_pass: bool,
    pub pass: bool,
}

/// One-sided check of
/// `E cost4(t) ≤ exp(−λ_N t) E cost2E(0) + exp(−t) E cost4(0)`
/// plus exhaustive sign agreement after first collisions.
pub fn verify_cost4_bound(agg: &AggregatedCoupling, n: usize) -> Result<Cost4BoundCheck> {
    let lambda = lambda_theory(n)?;
    let c2 = agg.cost2e[0].mean;
    let c4 = agg.cost4[0].mean;
    let t0 = agg.times[0];
    let points: Vec<Cost4Point> = agg
        .times
        .iter()
        .zip(&agg.cost4)
        .map(|(&t, p)| {
            let s = t - t0;
            let bound = (-lambda * s).exp() * c2 + (-s).exp() * c4;
            Cost4Point {
                time: t,
                mean_cost4: p.mean,
                stderr_cost4: p.stderr,
                bound,
                pass: p.mean <= bound + POINTWISE_Z * p.stderr + ROUNDING_SLACK * (c2 + c4),
            }
        })
        .collect();
    let survival = agg
        .times
        .iter()
        .zip(&agg.survival)
        .map(|(&t, p)| SurvivalPoint {
            time: t,
            mean: p.mean,
            stderr: p.stderr,
            exp_minus_t: (-t).exp(),
            exp_minus_2t: (-2.0 * t).exp(),
        })
        .collect();
    let bound_pass = points.iter().all(|p| p.pass);
    let sign_pass = agg.sign_violations == 0;
    Ok(Cost4BoundCheck {
        lambda,
        z: POINTWISE_Z,
        points,
        survival,
        sign_checks: agg.sign_checks,
        sign_violations: agg.sign_violations,
        bound_pass,
        sign_pass,
        pass: bound_pass && sign_pass,
    })
}

/// Uncoupled single-system runs recording `(1/N) Σ v⁴` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSystemConfig {
    pub n: usize,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub init: InitKind,
    pub seed: u64,
    pub formulation: Formulation,
}

impl SingleSystemConfig {
    pub fn new(n: usize, horizon: f64, grid_points: usize, init: InitKind, seed: u64, formulation: Formulation) -> Result<Self> {
        let config = Self {
            n,
            horizon,
            grid: uniform_grid(horizon, grid_points)?,
            init,
            seed,
            formulation,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        StreamConfig::new(self.n, self.horizon, self.seed)?;
        if self.formulation == Formulation::EnergyE {
            return Err(Error::FormulationMismatch {
                formulation: "energy",
                state: "velocity",
            });
        }
        validate_grid(&self.grid, self.horizon)
    }
}

#[derive(Debug, Clone)]
struct SingleAccumulator {
    fourth: Vec<RunningStats>,
    events: u64,
    max_energy_drift: f64,
}

impl Merge for SingleAccumulator {
    fn merge(&mut self, other: Self) -> Result<()> {
        merge_rows(&mut self.fourth, &other.fourth);
        self.events += other.events;
        self.max_energy_drift = self.max_energy_drift.max(other.max_energy_drift);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSystemSeries {
    pub n: usize,
    pub replicas: u64,
    pub times: Vec<f64>,
    /// Replica mean of `(1/N) Σ v⁴`.
    pub fourth_moment: Vec<MeanStderr>,
    pub events: u64,
    pub max_energy_drift: f64,
}

pub fn simulate_single(config: &SingleSystemConfig, replicas: u64) -> Result<SingleSystemSeries> {
    config.validate()?;
    if replicas < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: replicas as usize });
    }
    let n = config.n;
    let stream = StreamConfig::new(n, config.horizon, config.seed)?;
    let acc = fold_replicas(
        replicas,
        || SingleAccumulator {
            fourth: stats_row(config.grid.len()),
            events: 0,
            max_energy_drift: 0.0,
        },
        |acc, r| {
            let mut state = init_state(&config.init, n, &mut replica_rng(config.seed, Domain::InitV, r))?;
            let mut next_point = 0;
            let mut record = |state: &VelocityState, k: usize| {
                acc.fourth[k].push(state.fourth_moment_sum() / n as f64);
                acc.max_energy_drift = acc.max_energy_drift.max((state.total_energy() - n as f64).abs());
            };
            let mut events = 0;
            for event in EventStream::for_replica(&stream, r) {
                while next_point < config.grid.len() && config.grid[next_point] < event.time {
                    record(&state, next_point);
                    next_point += 1;
                }
                state.apply_event(config.formulation, &event)?;
                events += 1;
            }
            while next_point < config.grid.len() {
                record(&state, next_point);
                next_point += 1;
            }
            acc.events += events;
            Ok(())
        },
    )?;
    Ok(SingleSystemSeries {
        n,
        replicas,
        times: config.grid.clone(),
        fourth_moment: summaries(&acc.fourth),
        events: acc.events,
        max_energy_drift: acc.max_energy_drift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionCheck {
    pub n: usize,
    pub c: f64,
    pub lambda_theory: f64,
    pub times: Vec<f64>,
    /// Replica mean of `Σ v⁴ − c`.
    pub observable: Vec<MeanStderr>,
    pub fit: Option<RateFit>,
    pub series: SingleSystemSeries,
}

/// Decay of `E[Σ v⁴] − 3N²/(N + 2)` for a single uncoupled system.
pub fn verify_eigenfunction_decay(config: &SingleSystemConfig, replicas: u64) -> Result<EigenfunctionCheck> {
    let series = simulate_single(config, replicas)?;
    let n = config.n;
    let c = eigen_constant(n);
    let scale = n as f64;
    let observable: Vec<MeanStderr> = series
        .fourth_moment
        .iter()
        .map(|p| MeanStderr {
            mean: p.mean * scale - c,
            stderr: p.stderr * scale,
        })
        .collect();
    let lambda = lambda_theory(n)?;
    let fit = fit_rate(&series.times, &observable).ok().map(|f| f.with_theory(lambda));
    Ok(EigenfunctionCheck {
        n,
        c,
        lambda_theory: lambda,
        times: series.times.clone(),
        observable,
        fit,
        series,
    })
}
