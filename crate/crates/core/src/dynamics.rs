//! Particle states and the three collision maps.
//!
//! For an event on the pair `i < j` with angle `θ`, the `i` side always takes
//! the cosine role:
//!
//! * rotation form: `(v_i, v_j) ↦ (v_i cos θ + v_j sin θ, −v_i sin θ + v_j cos θ)`
//! * radial form: `(v_i, v_j) ↦ R (cos θ, −sin θ)` with `R² = v_i² + v_j²`
//! * energy form: `(e_i, e_j) ↦ S (cos² θ, sin² θ)` with `S = e_i + e_j`
//!
//! The radial and rotation forms have the same law; the radial form squared
//! is the energy form pathwise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::event_stream::CollisionEvent;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "rotation")]
    RotationA,
    #[serde(rename = "radial")]
    RadialB,
    #[serde(rename = "energy")]
    EnergyE,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::RotationA => "rotation",
            Formulation::RadialB => "radial",
            Formulation::EnergyE => "energy",
        }
    }

    /// Angle that reproduces the same collision when the roles of `i` and
    /// `j` are exchanged.
    pub fn swapped_angle(self, theta: f64) -> f64 {
        let swapped = match self {
            Formulation::RotationA => -theta,
            Formulation::RadialB | Formulation::EnergyE => -theta - PI / 2.0,
        };
        wrap_angle(swapped)
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" | "A" => Ok(Formulation::RotationA),
            "radial" | "B" => Ok(Formulation::RadialB),
            "energy" | "E" => Ok(Formulation::EnergyE),
            other => Err(Error::InvalidArgument(format!(
                "unknown formulation `{other}` (expected rotation, radial or energy)"
            ))),
        }
    }
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

pub fn collide_rotation(v_i: f64, v_j: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (v_i * c + v_j * s, -v_i * s + v_j * c)
}

pub fn collide_radial(v_i: f64, v_j: f64, theta: f64) -> (f64, f64) {
    let r = v_i.hypot(v_j);
    let (s, c) = theta.sin_cos();
    (r * c, -r * s)
}

pub fn collide_energy(e_i: f64, e_j: f64, theta: f64) -> Result<(f64, f64)> {
    if !(e_i >= 0.0 && e_j >= 0.0) {
        return Err(Error::NegativeEnergy(e_i, e_j));
    }
    let total = e_i + e_j;
    let (s, c) = theta.sin_cos();
    Ok((total * c * c, total * s * s))
}

/// Rescales a post-collision velocity pair onto the pre-collision energy.
fn restore_pair_energy(before: f64, a: f64, b: f64) -> (f64, f64) {
    let after = a * a + b * b;
    if after > 0.0 && after != before {
        let k = (before / after).sqrt();
        (a * k, b * k)
    } else {
        (a, b)
    }
}

fn restore_pair_sum(before: f64, a: f64, b: f64) -> (f64, f64) {
    let after = a + b;
    if after > 0.0 && after != before {
        let k = before / after;
        (a * k, b * k)
    } else {
        (a, b)
    }
}

/// Common interface of velocity and energy systems.
pub trait ParticleSystem {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn time(&self) -> f64;

    fn set_time(&mut self, time: f64);

    /// Applies the collision map to the pair, without touching the clock.
    fn collide(&mut self, formulation: Formulation, event: &CollisionEvent) -> Result<()>;

    /// `Σ v²` for velocities, `Σ e` for energies.
    fn total_energy(&self) -> f64;

    fn apply_event(&mut self, formulation: Formulation, event: &CollisionEvent) -> Result<()> {
        let len = self.len();
        for index in [event.i, event.j] {
            if index >= len {
                return Err(Error::IndexOutOfRange { index, len });
            }
        }
        if event.i == event.j {
            return Err(Error::InvalidArgument(format!("self-collision on particle {}", event.i)));
        }
        if event.time < self.time() {
            return Err(Error::EventInPast {
                event: event.time,
                state: self.time(),
            });
        }
        self.collide(formulation, event)?;
        self.set_time(event.time);
        Ok(())
    }

    /// Applies every event with time in `(self.time, t_end]`, then moves the
    /// clock to `t_end`.
    fn evolve(&mut self, formulation: Formulation, events: &[CollisionEvent], t_end: f64) -> Result<()> {
        if let Some(k) = events.windows(2).position(|w| !(w[1].time > w[0].time)) {
            return Err(Error::UnsortedEvents(k + 1));
        }
        if t_end < self.time() {
            return Err(Error::EventInPast {
                event: t_end,
                state: self.time(),
            });
        }
        let start = self.time();
        for event in events.iter().filter(|e| e.time > start && e.time <= t_end) {
            self.apply_event(formulation, event)?;
        }
        self.set_time(t_end);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityState {
    pub v: Vec<f64>,
    pub time: f64,
}

impl VelocityState {
    pub fn new(v: Vec<f64>) -> Self {
        Self { v, time: 0.0 }
    }

    pub fn energies(&self) -> EnergyState {
        EnergyState {
            e: self.v.iter().map(|x| x * x).collect(),
            time: self.time,
        }
    }

    pub fn fourth_moment_sum(&self) -> f64 {
        self.v.iter().map(|x| x.powi(4)).sum()
    }

    pub fn csv_header(n: usize) -> String {
        let mut s = String::from("time");
        for k in 1..=n {
            s.push_str(&format!(",v_{k}"));
        }
        s
    }

    /// `time,v_1,…,v_N` with shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        let mut s = self.time.to_string();
        for x in &self.v {
            s.push(',');
            s.push_str(&x.to_string());
        }
        s
    }
}

impl ParticleSystem for VelocityState {
    fn len(&self) -> usize {
        self.v.len()
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    fn collide(&mut self, formulation: Formulation, event: &CollisionEvent) -> Result<()> {
        let (vi, vj) = (self.v[event.i], self.v[event.j]);
        let (a, b) = match formulation {
            Formulation::RotationA => collide_rotation(vi, vj, event.theta),
            Formulation::RadialB => collide_radial(vi, vj, event.theta),
            Formulation::EnergyE => {
                return Err(Error::FormulationMismatch {
                    formulation: "energy",
                    state: "velocity",
                })
            }
        };
        let (a, b) = restore_pair_energy(vi * vi + vj * vj, a, b);
        self.v[event.i] = a;
        self.v[event.j] = b;
        Ok(())
    }

    fn total_energy(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub e: Vec<f64>,
    pub time: f64,
}

impl EnergyState {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = e.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::NegativeEnergy(bad, bad));
        }
        Ok(Self { e, time: 0.0 })
    }
}

impl ParticleSystem for EnergyState {
    fn len(&self) -> usize {
        self.e.len()
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    fn collide(&mut self, formulation: Formulation, event: &CollisionEvent) -> Result<()> {
        if formulation != Formulation::EnergyE {
            return Err(Error::FormulationMismatch {
                formulation: formulation.name(),
                state: "energy",
            });
        }
        let (ei, ej) = (self.e[event.i], self.e[event.j]);
        let (a, b) = collide_energy(ei, ej, event.theta)?;
        let (a, b) = restore_pair_sum(ei + ej, a, b);
        self.e[event.i] = a;
        self.e[event.j] = b;
        Ok(())
    }

    fn total_energy(&self) -> f64 {
        self.e.iter().sum()
    }
}

/// Initial-condition families. All are renormalised to `Σ v² = N`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitKind {
    /// `(√N, 0, …, 0)`.
    #[default]
    AxisPoint,
    /// Uniform on the sphere of radius `√N`.
    UniformSphere,
    /// The first `round(fraction·N)` particles carry `high_energy` each, the
    /// rest share the remainder equally. Velocities are non-negative.
    TwoLevel { fraction: f64, high_energy: f64 },
    Custom(Vec<f64>),
}

impl InitKind {
    pub const DEFAULT_TWO_LEVEL: InitKind = InitKind::TwoLevel {
        fraction: 0.5,
        high_energy: 1.5,
    };

    /// Whether the state is drawn at random (as opposed to fixed by `n`).
    pub fn is_random(&self) -> bool {
        matches!(self, InitKind::UniformSphere)
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::AxisPoint => f.write_str("axis"),
            InitKind::UniformSphere => f.write_str("sphere"),
            InitKind::TwoLevel {
                fraction,
                high_energy,
            } => write!(f, "twolevel:{fraction}:{high_energy}"),
            InitKind::Custom(v) => {
                f.write_str("custom:")?;
                for (k, x) in v.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("init `{s}`: {msg}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        match s.split_once(':') {
            None => match s {
                "axis" => Ok(InitKind::AxisPoint),
                "sphere" => Ok(InitKind::UniformSphere),
                "twolevel" => Ok(InitKind::DEFAULT_TWO_LEVEL),
                _ => Err(bad("expected axis, sphere, twolevel[:p:e] or custom:v1,v2,…".into())),
            },
            Some(("twolevel", rest)) => {
                let (p, e) = rest
                    .split_once(':')
                    .ok_or_else(|| bad("expected twolevel:<fraction>:<high_energy>".into()))?;
                Ok(InitKind::TwoLevel {
                    fraction: num(p)?,
                    high_energy: num(e)?,
                })
            }
            Some(("custom", rest)) => Ok(InitKind::Custom(
                rest.split(',').map(num).collect::<Result<Vec<_>>>()?,
            )),
            Some((head, _)) => Err(bad(format!("unknown kind `{head}`"))),
        }
    }
}

impl TryFrom<String> for InitKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitKind> for String {
    fn from(k: InitKind) -> String {
        k.to_string()
    }
}

fn renormalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let total: f64 = v.iter().map(|x| x * x).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInit("vector has zero or non-finite energy".into()));
    }
    let k = (n / total).sqrt();
    v.iter_mut().for_each(|x| *x *= k);
    Ok(v)
}

/// Builds an initial state with `Σ v² = N`.
pub fn init_state<R: Rng + ?Sized>(kind: &InitKind, n: usize, rng: &mut R) -> Result<VelocityState> {
    if n < 1 {
        return Err(Error::InvalidInit("need at least one particle".into()));
    }
    let v = match kind {
        InitKind::AxisPoint => {
            let mut v = vec![0.0; n];
            v[0] = (n as f64).sqrt();
            v
        }
        InitKind::UniformSphere => {
            renormalize((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())?
        }
        &InitKind::TwoLevel {
            fraction,
            high_energy,
        } => {
            let high_count = (fraction * n as f64).round();
            if !(high_count >= 1.0 && high_count < n as f64) {
                return Err(Error::InvalidInit(format!(
                    "two-level fraction {fraction} gives {high_count} of {n} particles at the high level"
                )));
            }
            let k = high_count as usize;
            let low_energy = (n as f64 - k as f64 * high_energy) / (n - k) as f64;
            if !(high_energy >= 0.0 && low_energy >= 0.0) {
                return Err(Error::InvalidInit(format!(
                    "two-level energies infeasible: high {high_energy}, low {low_energy}"
                )));
            }
            let v = (0..n)
                .map(|i| if i < k { high_energy.sqrt() } else { low_energy.sqrt() })
                .collect();
            renormalize(v)?
        }
        InitKind::Custom(values) => {
            if values.len() != n {
                return Err(Error::InvalidInit(format!(
                    "custom vector has {} entries, expected {n}",
                    values.len()
                )));
            }
            renormalize(values.clone())?
        }
    };
    Ok(VelocityState::new(v))
}
