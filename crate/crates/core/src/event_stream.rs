//! Realisation of the Poisson random measures driving the collisions.
//!
//! Each unordered pair `(i, j)` carries a Poisson random measure on
//! `R+ × (−π, π]` with intensity `dt dθ / (π (N − 1))`, so a pair collides at
//! rate `2 / (N − 1)` and each particle at rate 2. All pair clocks are
//! superposed into one clock of total rate `N`; the colliding pair is then
//! uniform among the `N (N − 1) / 2` pairs.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::rng::{replica_rng, Domain, ReplicaRng};
use crate::{Error, Result};

/// One atom of the driving random measure.
///
/// `u` is an auxiliary uniform mark; the finite-N dynamics ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub n_particles: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(n_particles: usize, horizon: f64, seed: u64) -> Result<Self> {
        check_particles(n_particles)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidHorizon(horizon));
        }
        Ok(Self {
            n_particles,
            horizon,
            seed,
        })
    }
}

fn check_particles(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::TooFewParticles(n))
    } else {
        Ok(())
    }
}

/// Collision rate of a single unordered pair: `2 / (N − 1)`.
pub fn pair_collision_rate(n_particles: usize) -> Result<f64> {
    check_particles(n_particles)?;
    Ok(2.0 / (n_particles - 1) as f64)
}

/// Rate of the superposed clock: `N (N − 1) / 2` pairs at `2 / (N − 1)` each.
pub fn total_system_rate(n_particles: usize) -> Result<f64> {
    check_particles(n_particles)?;
    Ok(n_particles as f64)
}

/// Uniform angle on `(−π, π]`: drawn on `[−π, π)` with `−π` mapped to `π`.
pub fn sample_theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let theta = -PI + 2.0 * PI * rng.random::<f64>();
    if theta <= -PI {
        PI
    } else {
        theta
    }
}

/// Uniform pair `i < j` among `n` particles.
pub fn sample_pair<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a.min(b), a.max(b))
}

/// Draws the next strictly later arrival of a Poisson clock.
pub(crate) fn next_arrival<R: Rng + ?Sized>(rng: &mut R, clock: &Exp<f64>, now: f64) -> f64 {
    loop {
        let t = now + clock.sample(rng);
        if t > now {
            return t;
        }
    }
}

/// Time-ordered collision events on `[0, horizon]` for one replica.
///
/// Single consumer: events are produced lazily and each is returned once.
#[derive(Debug, Clone)]
pub struct EventStream {
    n: usize,
    horizon: f64,
    rng: ReplicaRng,
    clock: Exp<f64>,
    now: f64,
    pending: Option<CollisionEvent>,
    exhausted: bool,
}

impl EventStream {
    pub fn new(config: &StreamConfig) -> Self {
        Self::for_replica(config, 0)
    }

    pub fn for_replica(config: &StreamConfig, replica: u64) -> Self {
        Self::with_domain(config, Domain::Events, replica)
    }

    pub fn with_domain(config: &StreamConfig, domain: Domain, replica: u64) -> Self {
        Self {
            n: config.n_particles,
            horizon: config.horizon,
            rng: replica_rng(config.seed, domain, replica),
            clock: Exp::new(config.n_particles as f64).expect("positive rate"),
            now: 0.0,
            pending: None,
            exhausted: false,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn draw(&mut self) -> Option<CollisionEvent> {
        if self.exhausted {
            return None;
        }
        let time = next_arrival(&mut self.rng, &self.clock, self.now);
        if time > self.horizon {
            self.exhausted = true;
            return None;
        }
        let (i, j) = sample_pair(&mut self.rng, self.n);
        let theta = sample_theta(&mut self.rng);
        let u = self.rng.random::<f64>();
        self.now = time;
        Some(CollisionEvent { time, i, j, theta, u })
    }

    /// Next event, or `None` once the next arrival would pass the horizon.
    pub fn next_event(&mut self) -> Option<CollisionEvent> {
        self.pending.take().or_else(|| self.draw())
    }

    /// All remaining events with time `<= t`, in order.
    pub fn events_until(&mut self, t: f64) -> Result<Vec<CollisionEvent>> {
        if t > self.horizon {
            return Err(Error::BeyondHorizon {
                requested: t,
                horizon: self.horizon,
            });
        }
        let mut out = Vec::new();
        while let Some(event) = self.next_event() {
            if event.time > t {
                self.pending = Some(event);
                break;
            }
            out.push(event);
        }
        Ok(out)
    }
}

impl Iterator for EventStream {
    type Item = CollisionEvent;

    fn next(&mut self) -> Option<CollisionEvent> {
        self.next_event()
    }
}

/// FNV-1a digest over the exact bit patterns of consumed events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDigest(u64);

impl Default for EventDigest {
    fn default() -> Self {
        EventDigest(0xcbf2_9ce4_8422_2325)
    }
}

impl EventDigest {
    fn absorb(&mut self, word: u64) {
        for byte in word.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn update(&mut self, event: &CollisionEvent) {
        self.absorb(event.time.to_bits());
        self.absorb(event.i as u64);
        self.absorb(event.j as u64);
        self.absorb(event.theta.to_bits());
        self.absorb(event.u.to_bits());
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_critical, chi_square_uniform, RunningStats};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rates() {
        assert_relative_eq!(pair_collision_rate(2).unwrap(), 2.0);
        assert_relative_eq!(pair_collision_rate(5).unwrap(), 0.5);
        assert_relative_eq!(pair_collision_rate(3).unwrap(), 1.0);
        assert_eq!(total_system_rate(2).unwrap(), 2.0);
        assert_eq!(total_system_rate(10).unwrap(), 10.0);
        assert_eq!(total_system_rate(3).unwrap(), 3.0);
        assert!(pair_collision_rate(1).is_err());
        assert!(total_system_rate(0).is_err());
        assert!(StreamConfig::new(1, 1.0, 0).is_err());
        assert!(StreamConfig::new(3, 0.0, 0).is_err());
    }

    /// The superposed clock has the same per-pair rate as independent pair
    /// clocks integrated against the angular intensity.
    #[test]
    fn total_rate_is_sum_of_pair_rates() {
        for n in 2..40 {
            let pairs = (n * (n - 1) / 2) as f64;
            let intensity = 1.0 / (PI * (n - 1) as f64);
            let pair = crate::stats::periodic_mean(|_| intensity, 8) * 2.0 * PI;
            assert_relative_eq!(pair, pair_collision_rate(n).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(pairs * pair, total_system_rate(n).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn two_particles_always_collide_together() {
        let cfg = StreamConfig::new(2, 50.0, 9).unwrap();
        let events: Vec<_> = EventStream::new(&cfg).collect();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| (e.i, e.j) == (0, 1)));
    }

    #[test]
    fn invariants_hold_along_stream() {
        let cfg = StreamConfig::new(7, 200.0, 11).unwrap();
        let mut last = 0.0;
        for e in EventStream::new(&cfg) {
            assert!(e.i < e.j && e.j < 7);
            assert!(e.theta > -PI && e.theta <= PI);
            assert!((0.0..1.0).contains(&e.u));
            assert!(e.time > last && e.time <= 200.0);
            last = e.time;
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = StreamConfig::new(6, 30.0, 123).unwrap();
        let a: Vec<_> = EventStream::for_replica(&cfg, 4).collect();
        let b: Vec<_> = EventStream::for_replica(&cfg, 4).collect();
        assert_eq!(a, b);
        let c: Vec<_> = EventStream::for_replica(&cfg, 5).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn events_until_edges() {
        let cfg = StreamConfig::new(4, 10.0, 5).unwrap();
        let all: Vec<_> = EventStream::new(&cfg).collect();
        assert!(EventStream::new(&cfg).events_until(0.0).unwrap().is_empty());
        assert_eq!(EventStream::new(&cfg).events_until(10.0).unwrap(), all);
        assert!(EventStream::new(&cfg).events_until(10.5).is_err());
    }

    proptest! {
        #[test]
        fn events_until_prefix_property(t1 in 0.0f64..8.0, dt in 0.0f64..8.0, seed in any::<u64>()) {
            let cfg = StreamConfig::new(5, 16.0, seed).unwrap();
            let t2 = t1 + dt;
            let mut split = EventStream::new(&cfg);
            let mut joined = split.events_until(t1).unwrap();
            joined.extend(split.events_until(t2).unwrap());
            let once = EventStream::new(&cfg).events_until(t2).unwrap();
            prop_assert_eq!(joined, once);
        }
    }

    #[test]
    fn mean_event_count_matches_rate() {
        let cfg = StreamConfig::new(4, 3.0, 77).unwrap();
        let counts: RunningStats = (0..20_000)
            .map(|r| EventStream::for_replica(&cfg, r).count() as f64)
            .collect();
        let expected = 4.0 * 3.0;
        assert!((counts.mean() - expected).abs() <= 4.0 * counts.stderr());
    }

    #[test]
    fn pair_frequencies_are_uniform() {
        let n = 6;
        let cfg = StreamConfig::new(n, 40_000.0, 21).unwrap();
        let mut counts = vec![vec![0u64; n]; n];
        let mut total = 0u64;
        for e in EventStream::new(&cfg).take(200_000) {
            counts[e.i][e.j] += 1;
            total += 1;
        }
        assert_eq!(total, 200_000);
        let p = 2.0 / (n * (n - 1)) as f64;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        for i in 0..n {
            for j in (i + 1)..n {
                let freq = counts[i][j] as f64 / total as f64;
                assert!((freq - p).abs() <= 4.0 * se, "pair ({i},{j}) freq {freq}");
            }
        }
    }

    #[test]
    fn per_pair_waiting_times_are_exponential() {
        let n = 5;
        let cfg = StreamConfig::new(n, 100_000.0, 3).unwrap();
        let mut last = 0.0;
        let mut gaps = RunningStats::new();
        for e in EventStream::new(&cfg).filter(|e| (e.i, e.j) == (1, 3)).take(20_000) {
            gaps.push(e.time - last);
            last = e.time;
        }
        let rate = pair_collision_rate(n).unwrap();
        assert!((gaps.mean() - 1.0 / rate).abs() <= 4.0 * gaps.stderr());
    }

    #[test]
    fn theta_is_uniform() {
        let cfg = StreamConfig::new(3, 1e9, 8).unwrap();
        let mut bins = vec![0u64; 32];
        for e in EventStream::new(&cfg).take(1_000_000) {
            let k = (((e.theta + PI) / (2.0 * PI)) * 32.0).floor() as usize;
            bins[k.min(31)] += 1;
        }
        assert!(chi_square_uniform(&bins) < chi_square_critical(31, 1e-3));
    }

    #[test]
    fn per_particle_rate_is_two() {
        let n = 8;
        let t = 2.5;
        let cfg = StreamConfig::new(n, t, 31).unwrap();
        let counts: RunningStats = (0..20_000)
            .map(|r| EventStream::for_replica(&cfg, r).filter(|e| e.i == 2 || e.j == 2).count() as f64)
            .collect();
        assert!((counts.mean() - 2.0 * t).abs() <= 4.0 * counts.stderr());
    }

    #[test]
    fn digest_tracks_every_field() {
        let e = CollisionEvent { time: 1.0, i: 0, j: 1, theta: 0.5, u: 0.25 };
        let mut a = EventDigest::default();
        a.update(&e);
        let mut b = EventDigest::default();
        b.update(&CollisionEvent { u: 0.250000001, ..e });
        assert_ne!(a, b);
    }
}
