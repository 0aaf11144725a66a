//! Large-M behaviour of the 1-D Gaussian oracle.
//!
//! Completions are drawn from the normal density f, which has full support,
//! so both nearest-sample distances shrink like E / (2 M f(h)) with E a unit
//! exponential. The AUC therefore tends to E[f(h_n) / (f(h_n) + f(h_a))]
//! rather than to 1.

use pluralad_core::theory::{empirical_auc, sweep_m, OracleSpec};
use pluralad_core::StreamKey;

fn pdf(x: f64, mu: f64) -> f64 {
    (-(x - mu) * (x - mu) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// E[f(h_n) / (f(h_n) + f(h_a))] by midpoint quadrature over both draws.
fn limit_auc(mu_a: f64) -> f64 {
    let (n, half) = (1600, 8.0);
    let dx = 2.0 * half / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let hn = -half + (i as f64 + 0.5) * dx;
        for j in 0..n {
            let ha = mu_a - half + (j as f64 + 0.5) * dx;
            let (fn_, fa) = (pdf(hn, 0.0), pdf(ha, 0.0));
            s += pdf(hn, 0.0) * pdf(ha, mu_a) * fn_ / (fn_ + fa);
        }
    }
    s * dx * dx
}

#[test]
fn auc_saturates_at_the_exponential_limit() {
    let limit = limit_auc(3.0);
    assert!((limit - 0.9123).abs() < 5e-4, "limit {limit}");
    let spec = OracleSpec::scalar(0.0, 3.0, 1.0).unwrap();
    let est = empirical_auc(&spec, 250, 100_000, StreamKey::new(3).named("limit")).unwrap();
    // finite-M bias at 250 samples is well under 1e-3
    assert!((est.auc - limit).abs() < 3.0 * est.stderr + 1e-3, "{} vs {limit}", est.auc);
}

#[test]
fn curve_flattens_after_tens_of_samples() {
    let spec = OracleSpec::scalar(0.0, 3.0, 1.0).unwrap();
    let sweep = sweep_m(&spec, &[1, 25, 250], 50_000, StreamKey::new(4)).unwrap();
    assert!(sweep.auc[1] > sweep.auc[0] + 0.02);
    assert!((sweep.auc[2] - sweep.auc[1]).abs() < 4.0 * sweep.stderr[2].hypot(sweep.stderr[1]));
}
