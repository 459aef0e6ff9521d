//! Particle approximation of the nonlinear (mean-field) limit process.
//!
//! Each of `M` samples jumps at rate 2. At a jump of sample `k` with marks
//! `(θ, u)` the sample becomes `sqrt(V_k² + P²) cos θ`, where the partner
//! velocity `P` is drawn from the current empirical law of the ensemble.
//!
//! Two ensembles driven by the same marks can pair their partners in two ways,
//! selected by [`PartnerRule`]:
//!
//! * `Quantile`: `P = F⁻¹(u)` in each ensemble, the left-continuous empirical
//!   quantile. Partners are quantile-coupled across the two ensembles.
//! * `SharedLabel`: `P` is sample number `⌊u M⌋` in each ensemble, so the
//!   partner pair is drawn from the joint empirical law of the coupled pair.
//!
//! Both rules give each ensemble the same marginal dynamics; only the joint
//! law of the two ensembles differs. With energies `G = V² − W²` the coupled
//! cost obeys `d/dt E[G²] = −(5/4) E[G²] + (3/4) E[H²]`, `H` being the partner
//! energy gap. Under `SharedLabel`, `H` is distributed like `G` and the cost
//! decays like `exp(−t/2)`; under `Quantile`, `E[H²]` is the comonotone
//! (smallest) value and the decay is at least that fast, usually faster.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::coupling::{fit_rate, uniform_grid, validate_grid, PointCheck, POINTWISE_Z};
use crate::dynamics::{init_state, InitKind};
use crate::event_stream::{next_arrival, sample_theta};
use crate::replicas::{fold_replicas, Merge};
use crate::rng::{replica_rng, Domain, ReplicaRng};
use crate::stats::{MeanStderr, RateFit, RunningStats};
use crate::{Error, Result};

/// Contraction rate of the nonlinear coupling cost.
pub const MEAN_FIELD_RATE: f64 = 0.5;

/// Per-sample jump rate (intensity `dt dθ du / π`).
pub const SAMPLE_JUMP_RATE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearEvent {
    pub time: f64,
    pub k: usize,
    pub theta: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PartnerRule {
    #[default]
    #[serde(rename = "quantile")]
    Quantile,
    #[serde(rename = "label")]
    SharedLabel,
}

impl fmt::Display for PartnerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartnerRule::Quantile => "quantile",
            PartnerRule::SharedLabel => "label",
        })
    }
}

impl FromStr for PartnerRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(PartnerRule::Quantile),
            "label" => Ok(PartnerRule::SharedLabel),
            other => Err(Error::InvalidArgument(format!(
                "unknown partner rule `{other}` (expected quantile or label)"
            ))),
        }
    }
}

fn rank_of(u: f64, m: usize) -> usize {
    ((u * m as f64).floor() as usize).min(m - 1)
}

/// `sorted[⌊u M⌋]`, the left-continuous inverse of the empirical CDF.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("quantile level {u} outside [0, 1)")));
    }
    Ok(sorted[rank_of(u, sorted.len())])
}

/// Moves one value of a sorted slice to its new sorted position, shifting
/// only the elements in between.
fn replace_sorted(sorted: &mut [f64], old: f64, new: f64) {
    let from = sorted.partition_point(|&x| x < old);
    debug_assert_eq!(sorted[from], old);
    let to = sorted.partition_point(|&x| x < new);
    if to > from {
        sorted.copy_within(from + 1..to, from);
        sorted[to - 1] = new;
    } else {
        sorted.copy_within(to..from, to + 1);
        sorted[to] = new;
    }
}

/// `M` samples standing in for the law of the nonlinear process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    samples: Vec<f64>,
    pub time: f64,
    #[serde(skip)]
    sorted: Vec<f64>,
    #[serde(skip)]
    sorted_valid: bool,
}

impl EnsembleState {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("NaN sample".into()));
        }
        Ok(Self {
            samples,
            time: 0.0,
            sorted: Vec::new(),
            sorted_valid: false,
        })
    }

    /// Ensemble of size `m` with mean energy 1.
    pub fn from_init<R: Rng + ?Sized>(kind: &InitKind, m: usize, rng: &mut R) -> Result<Self> {
        Self::new(init_state(kind, m, rng)?.v)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Sorted view of the samples, rebuilt if stale.
    pub fn sorted(&mut self) -> &[f64] {
        if !self.sorted_valid {
            self.sorted.clear();
            self.sorted.extend_from_slice(&self.samples);
            self.sorted.sort_by(f64::total_cmp);
            self.sorted_valid = true;
        }
        &self.sorted
    }

    pub fn quantile(&mut self, u: f64) -> Result<f64> {
        empirical_quantile(self.sorted(), u)
    }

    pub fn mean_energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            Err(Error::IndexOutOfRange { index: k, len: self.len() })
        } else {
            Ok(())
        }
    }

    /// Jumps sample `k` against an explicit partner velocity.
    pub fn jump_with_partner(&mut self, k: usize, partner: f64, theta: f64, time: f64) -> Result<()> {
        self.check_index(k)?;
        let old = self.samples[k];
        let new = old.hypot(partner) * theta.cos();
        self.samples[k] = new;
        if self.sorted_valid {
            replace_sorted(&mut self.sorted, old, new);
        }
        self.time = time;
        Ok(())
    }

    /// Applies a jump whose partner is the empirical quantile at `event.u`,
    /// taken before the jump and including sample `k` itself.
    pub fn apply_nonlinear(&mut self, event: &NonlinearEvent) -> Result<()> {
        self.check_index(event.k)?;
        let partner = self.quantile(event.u)?;
        self.jump_with_partner(event.k, partner, event.theta, event.time)
    }
}

/// Superposed clock of rate `2M` with a uniform sample index.
#[derive(Debug, Clone)]
pub struct NonlinearStream {
    m: usize,
    horizon: f64,
    rng: ReplicaRng,
    clock: Exp<f64>,
    now: f64,
    exhausted: bool,
}

impl NonlinearStream {
    pub fn new(m: usize, horizon: f64, seed: u64, replica: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptySample);
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidHorizon(horizon));
        }
        Ok(Self {
            m,
            horizon,
            rng: replica_rng(seed, Domain::Events, replica),
            clock: Exp::new(SAMPLE_JUMP_RATE * m as f64).expect("positive rate"),
            now: 0.0,
            exhausted: false,
        })
    }
}

impl Iterator for NonlinearStream {
    type Item = NonlinearEvent;

    fn next(&mut self) -> Option<NonlinearEvent> {
        if self.exhausted {
            return None;
        }
        let time = next_arrival(&mut self.rng, &self.clock, self.now);
        if time > self.horizon {
            self.exhausted = true;
            return None;
        }
        self.now = time;
        let k = self.rng.random_range(0..self.m);
        let theta = sample_theta(&mut self.rng);
        let u = self.rng.random::<f64>();
        Some(NonlinearEvent { time, k, theta, u })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    pub m: usize,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub init_v: InitKind,
    pub init_w: InitKind,
    pub seed: u64,
    pub partner: PartnerRule,
}

impl MeanFieldConfig {
    pub fn new(m: usize, horizon: f64, grid_points: usize, init_v: InitKind, init_w: InitKind, seed: u64, partner: PartnerRule) -> Result<Self> {
        let config = Self {
            m,
            horizon,
            grid: uniform_grid(horizon, grid_points)?,
            init_v,
            init_w,
            seed,
            partner,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::EmptySample);
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidHorizon(self.horizon));
        }
        validate_grid(&self.grid, self.horizon)
    }
}

fn ensemble_cost2(v: &[f64], w: &[f64]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(a, b)| {
            let d = a * a - b * b;
            d * d
        })
        .sum::<f64>()
        / v.len() as f64
}

fn ensemble_cost4(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (a - b).powi(4)).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCoupledRun {
    pub times: Vec<f64>,
    pub cost2e: Vec<f64>,
    pub cost4: Vec<f64>,
    pub energy_v: Vec<f64>,
    pub energy_w: Vec<f64>,
    pub sign_checks: u64,
    pub sign_violations: u64,
    pub events: u64,
}

/// Evolves two ensembles on shared `(time, k, θ, u)` marks.
pub fn run_nonlinear_coupled(config: &MeanFieldConfig, replica: u64) -> Result<NonlinearCoupledRun> {
    config.validate()?;
    let m = config.m;
    let mut v = EnsembleState::from_init(&config.init_v, m, &mut replica_rng(config.seed, Domain::InitV, replica))?;
    let mut w = EnsembleState::from_init(&config.init_w, m, &mut replica_rng(config.seed, Domain::InitW, replica))?;
    run_nonlinear_pair(&mut v, &mut w, config, replica)
}

/// Same as [`run_nonlinear_coupled`] from explicit starting ensembles.
pub fn run_nonlinear_pair(v: &mut EnsembleState, w: &mut EnsembleState, config: &MeanFieldConfig, replica: u64) -> Result<NonlinearCoupledRun> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch { left: v.len(), right: w.len() });
    }
    let m = v.len();
    let points = config.grid.len();
    let mut run = NonlinearCoupledRun {
        times: config.grid.clone(),
        cost2e: Vec::with_capacity(points),
        cost4: Vec::with_capacity(points),
        energy_v: Vec::with_capacity(points),
        energy_w: Vec::with_capacity(points),
        sign_checks: 0,
        sign_violations: 0,
        events: 0,
    };
    let record = |run: &mut NonlinearCoupledRun, v: &EnsembleState, w: &EnsembleState| {
        run.cost2e.push(ensemble_cost2(v.samples(), w.samples()));
        run.cost4.push(ensemble_cost4(v.samples(), w.samples()));
        run.energy_v.push(v.mean_energy());
        run.energy_w.push(w.mean_energy());
    };

    let mut next_point = 0;
    for event in NonlinearStream::new(m, config.horizon, config.seed, replica)? {
        while next_point < points && config.grid[next_point] < event.time {
            record(&mut run, v, w);
            next_point += 1;
        }
        let (pv, pw) = match config.partner {
            PartnerRule::Quantile => (v.quantile(event.u)?, w.quantile(event.u)?),
            PartnerRule::SharedLabel => {
                let p = rank_of(event.u, m);
                (v.samples[p], w.samples[p])
            }
        };
        v.jump_with_partner(event.k, pv, event.theta, event.time)?;
        w.jump_with_partner(event.k, pw, event.theta, event.time)?;
        run.sign_checks += 1;
        if v.samples[event.k] * w.samples[event.k] < 0.0 {
            run.sign_violations += 1;
        }
        run.events += 1;
    }
    while next_point < points {
        record(&mut run, v, w);
        next_point += 1;
    }
    v.time = config.horizon;
    w.time = config.horizon;
    Ok(run)
}

#[derive(Debug, Clone)]
struct MeanFieldAccumulator {
    cost2e: Vec<RunningStats>,
    cost4: Vec<RunningStats>,
    energy_v: Vec<RunningStats>,
    energy_w: Vec<RunningStats>,
    sign_checks: u64,
    sign_violations: u64,
    events: u64,
}

impl MeanFieldAccumulator {
    fn new(points: usize) -> Self {
        Self {
            cost2e: vec![RunningStats::new(); points],
            cost4: vec![RunningStats::new(); points],
            energy_v: vec![RunningStats::new(); points],
            energy_w: vec![RunningStats::new(); points],
            sign_checks: 0,
            sign_violations: 0,
            events: 0,
        }
    }

    fn push(&mut self, run: &NonlinearCoupledRun) {
        for k in 0..run.times.len() {
            self.cost2e[k].push(run.cost2e[k]);
            self.cost4[k].push(run.cost4[k]);
            self.energy_v[k].push(run.energy_v[k]);
            self.energy_w[k].push(run.energy_w[k]);
        }
        self.sign_checks += run.sign_checks;
        self.sign_violations += run.sign_violations;
        self.events += run.events;
    }
}

impl Merge for MeanFieldAccumulator {
    fn merge(&mut self, other: Self) -> Result<()> {
        for (a, b) in [
            (&mut self.cost2e, &other.cost2e),
            (&mut self.cost4, &other.cost4),
            (&mut self.energy_v, &other.energy_v),
            (&mut self.energy_w, &other.energy_w),
        ] {
            if a.len() != b.len() {
                return Err(Error::GridMismatch);
            }
            a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        }
        self.sign_checks += other.sign_checks;
        self.sign_violations += other.sign_violations;
        self.events += other.events;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedMeanField {
    pub m: usize,
    pub partner: PartnerRule,
    pub replicas: u64,
    pub times: Vec<f64>,
    pub cost2e: Vec<MeanStderr>,
    pub cost4: Vec<MeanStderr>,
    pub energy_v: Vec<MeanStderr>,
    pub energy_w: Vec<MeanStderr>,
    pub sign_checks: u64,
    pub sign_violations: u64,
    pub events: u64,
}

pub fn simulate_mean_field(config: &MeanFieldConfig, replicas: u64) -> Result<AggregatedMeanField> {
    config.validate()?;
    if replicas < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: replicas as usize });
    }
    let acc = fold_replicas(
        replicas,
        || MeanFieldAccumulator::new(config.grid.len()),
        |acc, r| {
            acc.push(&run_nonlinear_coupled(config, r)?);
            Ok(())
        },
    )?;
    let summarize = |row: &[RunningStats]| row.iter().map(RunningStats::summary).collect::<Vec<_>>();
    Ok(AggregatedMeanField {
        m: config.m,
        partner: config.partner,
        replicas,
        times: config.grid.clone(),
        cost2e: summarize(&acc.cost2e),
        cost4: summarize(&acc.cost4),
        energy_v: summarize(&acc.energy_v),
        energy_w: summarize(&acc.energy_w),
        sign_checks: acc.sign_checks,
        sign_violations: acc.sign_violations,
        events: acc.events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldCheck {
    pub fit: RateFit,
    /// One-sided `mean(t) ≤ exp(−t/2) mean(0) + z·stderr(t)`.
    pub upper_bound: Vec<PointCheck>,
    pub bound_pass: bool,
    /// `|mean energy(t_end) − mean energy(0)| ≤ z·stderr`, both ensembles.
    pub energy_martingale_pass: bool,
    pub sign_pass: bool,
}

pub fn verify_mean_field(agg: &AggregatedMeanField) -> Result<MeanFieldCheck> {
    let fit = fit_rate(&agg.times, &agg.cost2e)?.with_theory(MEAN_FIELD_RATE);
    let initial = agg.cost2e[0].mean;
    let upper_bound: Vec<PointCheck> = agg
        .times
        .iter()
        .zip(&agg.cost2e)
        .map(|(&t, p)| {
            let reference = (-MEAN_FIELD_RATE * t).exp() * initial;
            PointCheck {
                time: t,
                mean: p.mean,
                stderr: p.stderr,
                reference,
                pass: p.mean <= reference + POINTWISE_Z * p.stderr + 1e-12 * initial,
            }
        })
        .collect();
    let last = agg.times.len() - 1;
    let martingale = |row: &[MeanStderr]| {
        let spread = (row[0].stderr.powi(2) + row[last].stderr.powi(2)).sqrt();
        (row[last].mean - row[0].mean).abs() <= POINTWISE_Z * spread
    };
    Ok(MeanFieldCheck {
        fit,
        bound_pass: upper_bound.iter().all(|p| p.pass),
        upper_bound,
        energy_martingale_pass: martingale(&agg.energy_v) && martingale(&agg.energy_w),
        sign_pass: agg.sign_violations == 0,
    })
}
