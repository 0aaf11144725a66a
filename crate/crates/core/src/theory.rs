//! Monte-Carlo laboratory for the minimum-distance AUC.
//!
//! Normal and anomalous ground truths are drawn from known isotropic
//! Gaussians `p_n`, `p_a`; each is scored by its minimum distance to `M`
//! draws from `p_n`. The lab estimates `Pr(ε_a > ε_n)` directly and through
//! the expectation form `1 - E[(1 - P(ε_a))^M]`, where `P(ε)` is the mass
//! `p_n` puts on the ball of radius `ε` around the normal ground truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// The completion sizes swept in the experiments: 1 to 250.
pub const DEFAULT_M_LIST: [usize; 8] = [1, 2, 5, 10, 25, 50, 100, 250];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub dim: usize,
    pub mu_n: Vec<f64>,
    pub sigma_n: f64,
    pub mu_a: Vec<f64>,
    pub sigma_a: f64,
}

impl OracleSpec {
    /// One-dimensional spec with a shared standard deviation.
    pub fn scalar(mu_n: f64, mu_a: f64, sigma: f64) -> Result<Self> {
        let s = OracleSpec { dim: 1, mu_n: vec![mu_n], sigma_n: sigma, mu_a: vec![mu_a], sigma_a: sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mu_n.len() != self.dim || self.mu_a.len() != self.dim {
            return Err(Error::Config(format!(
                "means must have length dim = {} (got {} and {})",
                self.dim,
                self.mu_n.len(),
                self.mu_a.len()
            )));
        }
        for s in [self.sigma_n, self.sigma_a] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("standard deviations must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(mu: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    mu.iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma * z
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum distance from `h` to `m` fresh draws of `p_n`.
fn min_normal_distance<R: Rng + ?Sized>(spec: &OracleSpec, h: &[f64], m: usize, rng: &mut R) -> f64 {
    (0..m).map(|_| dist(h, &gaussian(&spec.mu_n, spec.sigma_n, rng))).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryTrial {
    pub eps_n: f64,
    pub eps_a: f64,
    pub h_n: Vec<f64>,
    pub h_a: Vec<f64>,
}

/// One paired draw of the normal and anomalous minimum distances.
pub fn run_trial<R: Rng + ?Sized>(spec: &OracleSpec, m: usize, rng: &mut R) -> Result<TheoryTrial> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::Usage("M must be at least 1".into()));
    }
    let h_n = gaussian(&spec.mu_n, spec.sigma_n, rng);
    let eps_n = min_normal_distance(spec, &h_n, m, rng);
    let h_a = gaussian(&spec.mu_a, spec.sigma_a, rng);
    let eps_a = min_normal_distance(spec, &h_a, m, rng);
    Ok(TheoryTrial { eps_n, eps_a, h_n, h_a })
}

/// `trials` independent trials; trial `t` draws from `key.child(t)`.
pub fn simulate(spec: &OracleSpec, m: usize, trials: usize, key: StreamKey) -> Result<Vec<TheoryTrial>> {
    (0..trials).into_par_iter().map(|t| run_trial(spec, m, &mut key.child(t as u64).rng())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Doubled win count of one pair: 2 for `ε_a > ε_n`, 1 for a tie.
#[inline]
fn pair_score(eps_n: f64, eps_a: f64) -> u64 {
    if eps_a > eps_n {
        2
    } else if eps_a == eps_n {
        1
    } else {
        0
    }
}

fn binomial_estimate(doubled_wins: u64, trials: usize) -> AucEstimate {
    let p = doubled_wins as f64 / (2.0 * trials as f64);
    AucEstimate { auc: p, stderr: (p * (1.0 - p) / trials as f64).sqrt(), trials }
}

/// Fraction of trials with `ε_a > ε_n`, ties counting one half.
pub fn auc_from_trials(trials: &[TheoryTrial]) -> Result<AucEstimate> {
    if trials.is_empty() {
        return Err(Error::Usage("no trials".into()));
    }
    let wins = trials.iter().map(|t| pair_score(t.eps_n, t.eps_a)).sum();
    Ok(binomial_estimate(wins, trials.len()))
}

/// Direct Monte-Carlo AUC over `trials` independent pairs.
pub fn empirical_auc(spec: &OracleSpec, m: usize, trials: usize, key: StreamKey) -> Result<AucEstimate> {
    spec.validate()?;
    if trials == 0 || m == 0 {
        return Err(Error::Usage("trials and M must both be at least 1".into()));
    }
    let wins = (0..trials)
        .into_par_iter()
        .map(|t| {
            let tr = run_trial(spec, m, &mut key.child(t as u64).rng())?;
            Ok(pair_score(tr.eps_n, tr.eps_a))
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(binomial_estimate(wins, trials))
}

/// Standard normal CDF (Marsaglia's series; absolute error near 1e-15).
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < -38.0 {
        return 0.0;
    }
    if x > 38.0 {
        return 1.0;
    }
    let q = x * x;
    let (mut s, mut t, mut b, mut i) = (x, 0.0, x, 1.0);
    while s != t {
        t = s;
        i += 2.0;
        b *= q / i;
        s = t + b;
    }
    // 0.918... = ln(sqrt(2π))
    (0.5 + s * (-0.5 * q - 0.918_938_533_204_672_8).exp()).clamp(0.0, 1.0)
}

/// Mass of `p_n` inside the closed ball of radius `eps` around `h0`
/// (closed form, one dimension only).
pub fn ball_mass(h0: &[f64], eps: f64, spec: &OracleSpec) -> Result<f64> {
    if spec.dim != 1 || h0.len() != 1 {
        return Err(Error::UnsupportedDimension(spec.dim.max(h0.len())));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Config(format!("ball radius must be >= 0, got {eps}")));
    }
    let (h, mu, s) = (h0[0], spec.mu_n[0], spec.sigma_n);
    if s == 0.0 {
        return Ok(if (h - mu).abs() <= eps { 1.0 } else { 0.0 });
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    Ok((normal_cdf((h + eps - mu) / s) - normal_cdf((h - eps - mu) / s)).clamp(0.0, 1.0))
}

/// Monte-Carlo ball mass for any dimension.
pub fn ball_mass_monte_carlo<R: Rng + ?Sized>(
    h0: &[f64],
    eps: f64,
    spec: &OracleSpec,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if h0.len() != spec.dim {
        return Err(Error::Config(format!("point has dimension {}, spec {}", h0.len(), spec.dim)));
    }
    if samples == 0 {
        return Err(Error::Usage("at least one sample is needed".into()));
    }
    let inside = (0..samples).filter(|_| dist(h0, &gaussian(&spec.mu_n, spec.sigma_n, rng)) <= eps).count();
    Ok(inside as f64 / samples as f64)
}

/// `1 - E[(1 - P(ε_a))^M]` with the expectation taken over paired draws of
/// the normal ground truth and the anomalous minimum distance.
pub fn semi_analytic_auc(spec: &OracleSpec, m: usize, trials: usize, key: StreamKey) -> Result<AucEstimate> {
    spec.validate()?;
    if spec.dim != 1 {
        return Err(Error::UnsupportedDimension(spec.dim));
    }
    if trials == 0 || m == 0 {
        return Err(Error::Usage("trials and M must both be at least 1".into()));
    }
    let vals = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = key.child(t as u64).rng();
            let h_n = gaussian(&spec.mu_n, spec.sigma_n, &mut rng);
            let h_a = gaussian(&spec.mu_a, spec.sigma_a, &mut rng);
            let eps_a = min_normal_distance(spec, &h_a, m, &mut rng);
            let p = ball_mass(&h_n, eps_a, spec)?;
            Ok(1.0 - (1.0 - p).powi(m as i32))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(AucEstimate { auc: mean, stderr: (var / n).sqrt(), trials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub m_values: Vec<usize>,
    pub auc: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl SweepResult {
    /// Whether each consecutive step drops by no more than `k` combined
    /// standard errors.
    pub fn nondecreasing_within(&self, k: f64) -> bool {
        (1..self.auc.len()).all(|i| {
            let se = (self.stderr[i].powi(2) + self.stderr[i - 1].powi(2)).sqrt();
            self.auc[i] >= self.auc[i - 1] - k * se
        })
    }
}

/// Empirical AUC for each `M`, each point from its own stream.
pub fn sweep_m(spec: &OracleSpec, m_list: &[usize], trials: usize, key: StreamKey) -> Result<SweepResult> {
    if m_list.is_empty() {
        return Err(Error::Usage("M list is empty".into()));
    }
    let mut out = SweepResult { m_values: Vec::new(), auc: Vec::new(), stderr: Vec::new() };
    for &m in m_list {
        let e = empirical_auc(spec, m, trials, key.child(m as u64))?;
        out.m_values.push(m);
        out.auc.push(e.auc);
        out.stderr.push(e.stderr);
    }
    Ok(out)
}
