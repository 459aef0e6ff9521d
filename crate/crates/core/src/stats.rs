//! Monte Carlo aggregation, exponential-rate fitting, two-sample tests and
//! one-dimensional Wasserstein distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{Error, Result};

/// Running count/mean/M2 accumulator (Welford), mergeable across batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let n = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / n;
        self.m2 += other.m2 + delta * delta * n_a * n_b / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn summary(&self) -> MeanStderr {
        MeanStderr {
            mean: self.mean(),
            stderr: self.stderr(),
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

/// Sample mean and standard error `sd / sqrt(K)` over `K >= 2` replicas.
pub fn mc_mean_stderr(values: &[f64]) -> Result<MeanStderr> {
    if values.len() < 2 {
        return Err(Error::NotEnoughData {
            needed: 2,
            got: values.len(),
        });
    }
    Ok(values.iter().copied().collect::<RunningStats>().summary())
}

/// A sampled curve with per-point standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, stderrs: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() != stderrs.len() {
            return Err(Error::InvalidSeries(format!(
                "lengths differ: {} times, {} values, {} stderrs",
                times.len(),
                values.len(),
                stderrs.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSeries("times must be strictly increasing".into()));
        }
        if stderrs.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidSeries("stderrs must be non-negative".into()));
        }
        Ok(Self {
            times,
            values,
            stderrs,
        })
    }

    pub fn from_summaries(times: &[f64], points: &[MeanStderr]) -> Result<Self> {
        Self::new(
            times.to_vec(),
            points.iter().map(|p| p.mean).collect(),
            points.iter().map(|p| p.stderr).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps only points whose value clears `z` standard errors. Points with
    /// zero stderr are kept when strictly positive.
    pub fn significant(&self, z: f64) -> TimeSeries {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| self.values[k] > 0.0 && self.values[k] >= z * self.stderrs[k])
            .collect();
        TimeSeries {
            times: keep.iter().map(|&k| self.times[k]).collect(),
            values: keep.iter().map(|&k| self.values[k]).collect(),
            stderrs: keep.iter().map(|&k| self.stderrs[k]).collect(),
        }
    }
}

/// Estimated exponential decay rate of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda_hat: f64,
    pub stderr: f64,
    /// Fitted value at `t = 0`.
    pub amplitude: f64,
    pub lambda_theory: Option<f64>,
    /// Grid points that entered the fit.
    pub times: Vec<f64>,
}

impl RateFit {
    pub fn with_theory(mut self, lambda: f64) -> Self {
        self.lambda_theory = Some(lambda);
        self
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.lambda_theory
            .map(|l| (self.lambda_hat - l).abs() / l.abs())
    }

    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.lambda_hat - z * self.stderr, self.lambda_hat + z * self.stderr)
    }

    pub fn interval_contains(&self, lambda: f64, z: f64) -> bool {
        let (lo, hi) = self.interval(z);
        lo <= lambda && lambda <= hi
    }
}

/// Relative stderr floor so that exactly-known points get a large but
/// finite weight.
const RELATIVE_STDERR_FLOOR: f64 = 1e-9;

/// Weighted least squares of `ln(value)` against time.
///
/// Weights are `value^2 / stderr^2` (the delta-method inverse variance of the
/// log), or uniform when every stderr is zero. Returns the negated slope.
pub fn fit_exponential_rate(series: &TimeSeries) -> Result<RateFit> {
    let n = series.len();
    if n < 3 {
        return Err(Error::NotEnoughData { needed: 3, got: n });
    }
    if let Some((index, &value)) = series.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveValue { index, value });
    }
    let logs: Vec<f64> = series.values.iter().map(|v| v.ln()).collect();
    let uniform = series.stderrs.iter().all(|&s| s == 0.0);
    let weights: Vec<f64> = if uniform {
        vec![1.0; n]
    } else {
        series
            .values
            .iter()
            .zip(&series.stderrs)
            .map(|(&v, &s)| {
                let rel = (s / v).max(RELATIVE_STDERR_FLOOR);
                1.0 / (rel * rel)
            })
            .collect()
    };

    let w_sum: f64 = weights.iter().sum();
    let t_bar = weights.iter().zip(&series.times).map(|(w, t)| w * t).sum::<f64>() / w_sum;
    let y_bar = weights.iter().zip(&logs).map(|(w, y)| w * y).sum::<f64>() / w_sum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        let dt = series.times[k] - t_bar;
        sxx += weights[k] * dt * dt;
        sxy += weights[k] * dt * (logs[k] - y_bar);
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * t_bar;

    let stderr = if uniform {
        let rss: f64 = (0..n)
            .map(|k| {
                let r = logs[k] - (intercept + slope * series.times[k]);
                r * r
            })
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };

    Ok(RateFit {
        lambda_hat: -slope,
        stderr,
        amplitude: intercept.exp(),
        lambda_theory: None,
        times: series.times.clone(),
    })
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact `W_p` between two equal-size empirical measures on the line,
/// obtained by matching order statistics.
pub fn wasserstein_1d(x: &[f64], y: &[f64], p: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("order p must be >= 1, got {p}")));
    }
    let xs = sorted_copy(x);
    let ys = sorted_copy(y);
    let mean = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| (a - b).abs().powf(p))
        .sum::<f64>()
        / xs.len() as f64;
    Ok(mean.powf(1.0 / p))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`. Ties are
/// handled by stepping both CDFs past every copy of a value.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    let xs = sorted_copy(x);
    let ys = sorted_copy(y);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut a, mut b) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while a < xs.len() && b < ys.len() {
        let v = xs[a].min(ys[b]);
        while a < xs.len() && xs[a] <= v {
            a += 1;
        }
        while b < ys.len() && ys[b] <= v {
            b += 1;
        }
        d = d.max((a as f64 / nx - b as f64 / ny).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample KS rejection threshold at significance `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Pearson chi-square statistic against uniform expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Upper `alpha` quantile of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Mean of a `2π`-periodic function over one period, by the rectangle rule on
/// `nodes` equispaced points. The rule is exact for trigonometric
/// polynomials of degree below `nodes`.
pub fn periodic_mean(f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    let h = 2.0 * std::f64::consts::PI / nodes as f64;
    (0..nodes)
        .map(|k| f(-std::f64::consts::PI + k as f64 * h))
        .sum::<f64>()
        / nodes as f64
}

/// Angle average `(1/2π) ∫ (cos⁴θ + sin⁴θ) dθ`, which equals `3/4`.
pub fn angle_average_check() -> f64 {
    periodic_mean(|t| t.cos().powi(4) + t.sin().powi(4), 64)
}
