//! Sample-complexity bounds and rejection-robust confidence statements.
//!
//! With `m` accepts out of `n` rounds and a strategy with second eigenvalue
//! `λ₂`, the claim "fidelity ≥ 1 - ε" holds with confidence `1 - δ` whenever
//! `m/n ≥ 1 - (1 - λ₂)ε` and
//!
//! ```text
//! δ ≤ exp(-n · D(m/n ‖ 1 - (1 - λ₂)ε))
//! ```
//!
//! where `D` is the binary KL divergence in nats.

use serde::{Deserialize, Serialize};

use crate::error::{QsvError, Result};

const BISECTION_MAX_ITER: usize = 200;

/// Outcome of a confidence analysis: "fidelity ≥ 1 - ε with confidence 1 - δ".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub n: u64,
    pub m: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub accept_frequency: f64,
}

impl VerificationVerdict {
    pub fn fidelity_lower_bound(&self) -> f64 {
        1.0 - self.epsilon
    }
}

fn check_unit_open(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(QsvError::Domain(format!("{name} = {x} must lie in (0, 1)")))
    }
}

fn check_lambda2(lambda2: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda2) {
        Ok(())
    } else {
        Err(QsvError::Domain(format!("lambda2 = {lambda2} must lie in [0, 1)")))
    }
}

fn check_counts(n: u64, m: u64) -> Result<()> {
    if n == 0 {
        return Err(QsvError::Domain("n must be at least 1".into()));
    }
    if m > n {
        return Err(QsvError::Domain(format!("m = {m} exceeds n = {n}")));
    }
    Ok(())
}

/// `x ln(x/y)` with `0 ln 0 = 0`.
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// KL divergence without the domain check on `y`; `y ∈ {0, 1}` gives `+∞`
/// unless `x` sits at the same endpoint.
fn kl_raw(x: f64, y: f64) -> f64 {
    (xlogy_ratio(x, y) + xlogy_ratio(1.0 - x, 1.0 - y)).max(0.0)
}

/// Binary KL divergence `D(x ‖ y)` in nats.
pub fn kl_divergence(x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(QsvError::Domain(format!("x = {x} must lie in [0, 1]")));
    }
    check_unit_open("y", y)?;
    Ok(kl_raw(x, y))
}

/// Per-round accept probability ceiling `1 - (1 - λ₂)ε` for states with
/// infidelity at least `ε`.
pub fn accept_threshold(lambda2: f64, epsilon: f64) -> f64 {
    1.0 - (1.0 - lambda2) * epsilon
}

/// Upper bound on `δ` for the claim "fidelity ≥ 1 - ε" after `m` of `n`
/// accepts.
pub fn confidence_bound(n: u64, m: u64, lambda2: f64, epsilon: f64) -> Result<f64> {
    check_counts(n, m)?;
    check_lambda2(lambda2)?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(QsvError::Domain(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    let p = m as f64 / n as f64;
    let y = accept_threshold(lambda2, epsilon);
    if p < y {
        return Err(QsvError::NoClaim { accept_frequency: p });
    }
    Ok((-kl_divergence(p, y)? * n as f64).exp())
}

/// Smallest `ε` at which `m` accepts out of `n` certify fidelity `1 - ε` with
/// confidence `1 - δ`, found by bisection.
///
/// `ε ↦ D(m/n ‖ 1 - (1 - λ₂)ε)` is zero at `ε₀ = (1 - m/n)/(1 - λ₂)` and
/// increases up to `ε = 1`, so `[ε₀, 1]` brackets the root whenever a claim
/// exists at all. The returned value is the upper end of the final bracket,
/// so it never overstates the confidence.
pub fn infidelity_at_confidence(n: u64, m: u64, delta: f64, lambda2: f64) -> Result<f64> {
    check_counts(n, m)?;
    check_unit_open("delta", delta)?;
    check_lambda2(lambda2)?;

    let p = m as f64 / n as f64;
    let target = (1.0 / delta).ln() / n as f64;
    let excess = |eps: f64| kl_raw(p, accept_threshold(lambda2, eps)) - target;
    let no_claim = QsvError::NoClaim { accept_frequency: p };

    let mut lo = (1.0 - p) / (1.0 - lambda2);
    let mut hi = 1.0;
    if lo >= hi || excess(hi) < 0.0 {
        return Err(no_claim);
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Verdict for `m` of `n` accepts.
pub fn verdict(n: u64, m: u64, delta: f64, lambda2: f64) -> Result<VerificationVerdict> {
    let epsilon = infidelity_at_confidence(n, m, delta, lambda2)?;
    Ok(VerificationVerdict {
        n,
        m,
        delta,
        epsilon,
        accept_frequency: m as f64 / n as f64,
    })
}

/// `ε` for `n` straight accepts, `(1 - δ^{1/n}) / (1 - λ₂)`. Not clipped:
/// values above 1 mean no non-trivial claim yet.
pub fn all_accept_infidelity(n: u64, delta: f64, lambda2: f64) -> f64 {
    -(delta.ln() / n as f64).exp_m1() / (1.0 - lambda2)
}

/// Measurement count for a target `(ε, δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    /// `ln δ / ln(1 - (1 - λ₂)ε)`
    pub exact: f64,
    pub ceiling: u64,
    /// `ln(1/δ) / ((1 - λ₂)ε)`, the small-`ε` form.
    pub asymptotic: f64,
}

pub fn required_measurements(epsilon: f64, delta: f64, lambda2: f64) -> Result<SampleComplexity> {
    check_unit_open("epsilon", epsilon)?;
    check_unit_open("delta", delta)?;
    check_lambda2(lambda2)?;
    let gap = (1.0 - lambda2) * epsilon;
    let exact = delta.ln() / (-gap).ln_1p();
    Ok(SampleComplexity {
        exact,
        ceiling: exact.ceil() as u64,
        asymptotic: (1.0 / delta).ln() / gap,
    })
}

/// Globally optimal bound: the `λ₂ = 0` case.
pub fn global_bound(epsilon: f64, delta: f64) -> Result<SampleComplexity> {
    required_measurements(epsilon, delta, 0.0)
}

/// Ideal-state curve `(n, 1/ε)` for `n = 1..=n_max`.
pub fn inverse_infidelity_curve(lambda2: f64, delta: f64, n_max: u64) -> Result<Vec<(u64, f64)>> {
    check_unit_open("delta", delta)?;
    check_lambda2(lambda2)?;
    Ok((1..=n_max)
        .map(|n| (n, 1.0 / all_accept_infidelity(n, delta, lambda2)))
        .collect())
}

/// Per-prefix `(n, 1/ε)` for a recorded accept/reject sequence, using the
/// cumulative counts at each prefix. Prefixes with no valid claim are
/// `None`.
pub fn record_inverse_infidelity_curve(
    bits: &[bool],
    delta: f64,
    lambda2: f64,
) -> Result<Vec<(u64, Option<f64>)>> {
    check_unit_open("delta", delta)?;
    check_lambda2(lambda2)?;
    let mut m = 0u64;
    bits.iter()
        .enumerate()
        .map(|(i, &accept)| {
            m += accept as u64;
            let n = i as u64 + 1;
            match infidelity_at_confidence(n, m, delta, lambda2) {
                Ok(eps) => Ok((n, Some(1.0 / eps))),
                Err(QsvError::NoClaim { .. }) => Ok((n, None)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Ordinary least-squares line `y = slope·x + intercept`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(QsvError::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(QsvError::Fit("abscissae are degenerate".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least-squares slope with a free intercept.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    fit_line(points).map(|(slope, _)| slope)
}

/// Least-squares slope of `y = s·x` (line through the origin).
pub fn fit_proportional(points: &[(f64, f64)]) -> Result<f64> {
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if points.is_empty() || !(sxx > 0.0) {
        return Err(QsvError::Fit("abscissae are degenerate".into()));
    }
    Ok(points.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx)
}

/// Converts `(n, 1/ε)` pairs into fit input.
pub fn as_points(curve: &[(u64, f64)]) -> Vec<(f64, f64)> {
    curve.iter().map(|&(n, y)| (n as f64, y)).collect()
}
