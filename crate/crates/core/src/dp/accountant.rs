//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-order RDP values follow the binomial expansion for integer orders and
//! the two-sided erfc series for fractional orders; `T` compositions add
//! linearly, and the (ε, δ) conversion is
//! `ε = min_α [T·RDP(α) + ln(1/δ)/(α − 1)]` over a fixed order grid.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{DpError, Result};
use crate::stats::{ln_erfc, log_add, log_sub};

/// DP-SGD mechanism parameters and accounting target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
    pub delta: f64,
    pub epsilon_target: Option<f64>,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DpError::InvalidSpec(m.to_string()));
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad("noise_multiplier must be finite and non-negative");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return bad("sampling_rate must lie in (0, 1]");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if let Some(e) = self.epsilon_target {
            if !(e > 0.0) {
                return bad("epsilon_target must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub epsilon: f64,
    pub delta: f64,
    pub rdp_orders_evaluated: Vec<f64>,
    pub chosen_order: f64,
    /// Orders whose RDP value could not be computed reliably; excluded from
    /// the minimisation.
    pub unstable_orders: Vec<f64>,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
}

/// `{1.25, 1.5, …, 64}`.
pub fn default_orders() -> Vec<f64> {
    (5..=256).map(|i| i as f64 * 0.25).collect()
}

fn ln_binom_int(n: u64, k: u64) -> f64 {
    // Exact enough for n ≤ 64 via summed logs.
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let term = ln_binom_int(alpha, k) + kf * lq + (alpha - k) as f64 * l1q + (kf * kf - kf) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> Option<f64> {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let s2 = sigma * sigma;
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    // Generalised binomial coefficient C(alpha, i) tracked as (ln|c|, sign).
    let mut ln_coef = 0.0;
    let mut positive = true;
    for i in 0..100_000u32 {
        let fi = f64::from(i);
        if i > 0 {
            let factor = (alpha - fi + 1.0) / fi;
            if factor == 0.0 {
                // Integer order: every later coefficient vanishes.
                return Some(log_add(log_a0, log_a1));
            }
            ln_coef += factor.abs().ln();
            if factor < 0.0 {
                positive = !positive;
            }
        }
        let j = alpha - fi;
        let log_t0 = ln_coef + fi * lq + j * l1q;
        let log_t1 = ln_coef + j * lq + fi * l1q;
        let log_e0 = 0.5_f64.ln() + ln_erfc((fi - z0) / (std::f64::consts::SQRT_2 * sigma));
        let log_e1 = 0.5_f64.ln() + ln_erfc((z0 - j) / (std::f64::consts::SQRT_2 * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * s2) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * s2) + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0)?;
            log_a1 = log_sub(log_a1, log_s1)?;
        }
        if log_s0.max(log_s1) < -30.0 {
            return Some(log_add(log_a0, log_a1));
        }
    }
    None
}

/// RDP of one step of the Poisson-subsampled Gaussian mechanism at order
/// `alpha > 1`. `None` flags a numerically unreliable order.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Option<f64> {
    if q == 0.0 {
        return Some(0.0);
    }
    if sigma == 0.0 {
        return Some(f64::INFINITY);
    }
    if q >= 1.0 {
        return Some(alpha / (2.0 * sigma * sigma));
    }
    let log_a =
        if alpha.fract() == 0.0 { Some(log_a_int(q, sigma, alpha as u64)) } else { log_a_frac(q, sigma, alpha) }?;
    let rdp = log_a / (alpha - 1.0);
    (rdp.is_finite() && rdp >= 0.0).then_some(rdp)
}

/// Same as [`rdp_subsampled_gaussian`] but always through the fractional
/// series, exposed for cross-checking the two expansions.
pub fn rdp_subsampled_gaussian_series(q: f64, sigma: f64, alpha: f64) -> Option<f64> {
    log_a_frac(q, sigma, alpha).map(|l| l / (alpha - 1.0))
}

/// Converts composed RDP values to (ε, δ) by minimising over orders.
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[Option<f64>], delta: f64) -> (f64, f64) {
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, orders.first().copied().unwrap_or(f64::NAN));
    for (&a, r) in orders.iter().zip(rdp) {
        if let Some(r) = r {
            let eps = r + log_inv_delta / (a - 1.0);
            if eps < best.0 {
                best = (eps, a);
            }
        }
    }
    best
}

/// Theoretical ε of `spec` (ε = ∞ when the noise multiplier is zero).
pub fn account_epsilon(spec: &PrivacySpec) -> Result<AccountingReport> {
    account_epsilon_with_orders(spec, &default_orders())
}

pub fn account_epsilon_with_orders(spec: &PrivacySpec, orders: &[f64]) -> Result<AccountingReport> {
    spec.validate()?;
    if orders.iter().any(|&a| a <= 1.0) {
        return Err(DpError::InvalidSpec("RDP orders must exceed 1".into()));
    }
    let base = AccountingReport {
        epsilon: 0.0,
        delta: spec.delta,
        rdp_orders_evaluated: orders.to_vec(),
        chosen_order: orders[0],
        unstable_orders: Vec::new(),
        noise_multiplier: spec.noise_multiplier,
        sampling_rate: spec.sampling_rate,
        steps: spec.steps,
    };
    if spec.steps == 0 {
        return Ok(base);
    }
    if spec.noise_multiplier == 0.0 {
        return Ok(AccountingReport { epsilon: f64::INFINITY, ..base });
    }
    let t = spec.steps as f64;
    let rdp: Vec<Option<f64>> = orders
        .iter()
        .map(|&a| rdp_subsampled_gaussian(spec.sampling_rate, spec.noise_multiplier, a).map(|r| r * t))
        .collect();
    let unstable_orders = orders.iter().zip(&rdp).filter(|(_, r)| r.is_none()).map(|(&a, _)| a).collect();
    let (epsilon, chosen_order) = rdp_to_epsilon(orders, &rdp, spec.delta);
    Ok(AccountingReport { epsilon, chosen_order, unstable_orders, ..base })
}

pub const SIGMA_SEARCH_RANGE: (f64, f64) = (1e-2, 1e3);

/// `(ε bits, δ bits, q bits, steps) -> σ`.
type CalibrationCache = Mutex<HashMap<(u64, u64, u64, usize), f64>>;

fn calibration_cache() -> &'static CalibrationCache {
    static CACHE: OnceLock<CalibrationCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Smallest-found noise multiplier whose accounted ε lies in
/// `[0.99·target, target]`, by bisection on `ln σ`.
pub fn calibrate_noise(epsilon_target: f64, delta: f64, sampling_rate: f64, steps: usize) -> Result<f64> {
    if !(epsilon_target > 0.0 && epsilon_target.is_finite()) {
        return Err(DpError::InvalidSpec("epsilon_target must be positive and finite".into()));
    }
    let key = (epsilon_target.to_bits(), delta.to_bits(), sampling_rate.to_bits(), steps);
    if let Some(&s) = calibration_cache().lock().unwrap().get(&key) {
        return Ok(s);
    }
    let spec_for = |sigma: f64| PrivacySpec {
        clip_norm: 1.0,
        noise_multiplier: sigma,
        sampling_rate,
        steps,
        delta,
        epsilon_target: Some(epsilon_target),
    };
    let eps = |sigma: f64| account_epsilon(&spec_for(sigma)).map(|r| r.epsilon);
    let (lo_bound, hi_bound) = SIGMA_SEARCH_RANGE;
    let eps_lo = eps(lo_bound)?;
    let eps_hi = eps(hi_bound)?;
    let unreachable = || DpError::Unreachable { epsilon_target, sigma_range: SIGMA_SEARCH_RANGE };
    if eps_hi > epsilon_target {
        return Err(unreachable());
    }
    if eps_hi >= 0.99 * epsilon_target {
        return Ok(hi_bound);
    }
    if eps_lo <= epsilon_target {
        if eps_lo >= 0.99 * epsilon_target {
            return Ok(lo_bound);
        }
        return Err(unreachable());
    }
    // Invariant: eps(lo) > target ≥ eps(hi).
    let (mut lo, mut hi) = (lo_bound.ln(), hi_bound.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid.exp())?;
        if e > epsilon_target {
            lo = mid;
        } else {
            hi = mid;
            if e >= 0.999 * epsilon_target {
                break;
            }
        }
    }
    let sigma = hi.exp();
    calibration_cache().lock().unwrap().insert(key, sigma);
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: f64, sigma: f64, steps: usize, delta: f64) -> PrivacySpec {
        PrivacySpec { clip_norm: 1.0, noise_multiplier: sigma, sampling_rate: q, steps, delta, epsilon_target: None }
    }

    #[test]
    fn order_grid_spans_expected_range() {
        let o = default_orders();
        assert_eq!(o.first(), Some(&1.25));
        assert_eq!(o.last(), Some(&64.0));
        assert_eq!(o.len(), 252);
    }

    #[test]
    fn integer_and_series_expansions_agree() {
        for &(q, sigma) in &[(0.01, 1.0), (0.1, 0.8), (0.3, 2.0), (0.05, 4.0)] {
            for alpha in [2.0, 3.0, 5.0, 8.0] {
                let a = rdp_subsampled_gaussian(q, sigma, alpha).unwrap();
                let b = rdp_subsampled_gaussian_series(q, sigma, alpha).unwrap();
                assert!((a - b).abs() <= 1e-9 * a.max(1e-12), "q={q} σ={sigma} α={alpha}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn subsampled_rdp_is_below_full_batch() {
        for alpha in default_orders() {
            let sub = rdp_subsampled_gaussian(0.05, 1.1, alpha).unwrap();
            assert!(sub <= alpha / (2.0 * 1.1 * 1.1) + 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_infinite() {
        let r = account_epsilon(&spec(0.1, 0.0, 10, 1e-5)).unwrap();
        assert!(r.epsilon.is_infinite());
    }

    #[test]
    fn zero_steps_cost_nothing() {
        assert_eq!(account_epsilon(&spec(0.1, 1.0, 0, 1e-5)).unwrap().epsilon, 0.0);
    }

    #[test]
    fn monotone_in_steps_and_sigma() {
        let base = account_epsilon(&spec(0.02, 1.0, 500, 1e-5)).unwrap().epsilon;
        let doubled = account_epsilon(&spec(0.02, 1.0, 1000, 1e-5)).unwrap().epsilon;
        let noisier = account_epsilon(&spec(0.02, 1.3, 500, 1e-5)).unwrap().epsilon;
        assert!(doubled > base && noisier < base);
    }

    #[test]
    fn calibration_round_trip_and_ordering() {
        let (q, t, d) = (0.05, 400, 1e-5);
        let s8 = calibrate_noise(8.0, d, q, t).unwrap();
        let s1 = calibrate_noise(1.0, d, q, t).unwrap();
        assert!(s1 > s8);
        for (target, s) in [(8.0, s8), (1.0, s1)] {
            let e = account_epsilon(&spec(q, s, t, d)).unwrap().epsilon;
            assert!(e >= 0.99 * target && e <= 1.01 * target, "{e} vs {target}");
        }
    }

    #[test]
    fn unreachable_target_fails_explicitly() {
        assert!(matches!(calibrate_noise(1e-9, 1e-5, 1.0, 1000), Err(DpError::Unreachable { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(account_epsilon(&spec(0.0, 1.0, 1, 1e-5)).is_err());
        assert!(account_epsilon(&spec(0.5, 1.0, 1, 1.0)).is_err());
        assert!(account_epsilon(&PrivacySpec { clip_norm: 0.0, ..spec(0.5, 1.0, 1, 1e-5) }).is_err());
    }
}
