use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_inputs, ExplainError, Result};
use crate::model::Classifier;
use crate::seed::rng_from_seed;

/// Largest feature count accepted by [`shapley_exact`].
pub const EXACT_SHAPLEY_MAX_FEATURES: usize = 15;

/// `v(S)`: probability of `target` with features in `S` (bit `j` of `mask`)
/// taken from `x` and the rest from `baseline`.
fn coalition_value<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    baseline: &[f64],
    target: usize,
    mask: u32,
    buf: &mut [f64],
) -> f64 {
    for (j, b) in buf.iter_mut().enumerate() {
        *b = if mask >> j & 1 == 1 { x[j] } else { baseline[j] };
    }
    model.predict_proba(buf)[target]
}

/// Exact Shapley values by enumerating all `2^K` coalitions.
pub fn shapley_exact<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    baseline: &[f64],
    target: usize,
) -> Result<Vec<f64>> {
    check_inputs(model, x, baseline, target)?;
    let k = x.len();
    if k > EXACT_SHAPLEY_MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures { k, limit: EXACT_SHAPLEY_MAX_FEATURES });
    }
    let mut buf = vec![0.0; k];
    let values: Vec<f64> = (0..1u32 << k).map(|m| coalition_value(model, x, baseline, target, m, &mut buf)).collect();
    // weight[s] = s!(K−s−1)!/K!
    let mut weight = vec![0.0; k];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut r = 1.0 / k as f64;
        for i in 0..s {
            r *= (s - i) as f64 / (k - 1 - i) as f64;
        }
        *w = r;
    }
    let mut phi = vec![0.0; k];
    for m in 0..1u32 << k {
        let size = m.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if m >> j & 1 == 0 {
                *p += weight[size] * (values[(m | 1 << j) as usize] - values[m as usize]);
            }
        }
    }
    Ok(phi)
}

/// Permutation-sampling estimate with per-feature standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub num_permutations: usize,
}

/// Unbiased Shapley estimate from `num_permutations` feature orders drawn
/// in antithetic pairs (a random order, then its reverse); an odd count ends
/// with an unpaired order. Each order costs `K + 1` model evaluations.
/// Standard errors treat every pair (or the lone order) as one draw.
pub fn shapley_sampled<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    baseline: &[f64],
    target: usize,
    num_permutations: usize,
    seed: u64,
) -> Result<ShapleyEstimate> {
    check_inputs(model, x, baseline, target)?;
    if num_permutations == 0 {
        return Err(ExplainError::InvalidParameter("num_permutations must be at least 1".into()));
    }
    let k = x.len();
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..k).collect();
    let mut sum = vec![0.0; k];
    let mut unit = vec![0.0; k];
    let mut unit_means = Vec::with_capacity(num_permutations.div_ceil(2));
    let mut buf = vec![0.0; k];
    for p in 0..num_permutations {
        if p % 2 == 0 {
            order.shuffle(&mut rng);
        } else {
            order.reverse();
        }
        buf.copy_from_slice(baseline);
        let mut prev = model.predict_proba(&buf)[target];
        for &j in &order {
            buf[j] = x[j];
            let cur = model.predict_proba(&buf)[target];
            let d = cur - prev;
            sum[j] += d;
            unit[j] += d;
            prev = cur;
        }
        if p % 2 == 1 || p + 1 == num_permutations {
            let size = if p % 2 == 1 { 2.0 } else { 1.0 };
            unit_means.push(unit.iter().map(|u| u / size).collect::<Vec<f64>>());
            unit.iter_mut().for_each(|u| *u = 0.0);
        }
    }
    let values: Vec<f64> = sum.iter().map(|s| s / num_permutations as f64).collect();
    let units = unit_means.len() as f64;
    let std_errors = if unit_means.len() < 2 {
        vec![f64::INFINITY; k]
    } else {
        (0..k)
            .map(|j| {
                let m = unit_means.iter().map(|u| u[j]).sum::<f64>() / units;
                let ss: f64 = unit_means.iter().map(|u| (u[j] - m).powi(2)).sum();
                (ss / (units - 1.0) / units).sqrt()
            })
            .collect()
    };
    Ok(ShapleyEstimate { values, std_errors, num_permutations })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `softmax([w·x, 0])`: a two-class logistic model.
    struct Logistic(Vec<f64>);

    impl Classifier for Logistic {
        fn num_features(&self) -> usize {
            self.0.len()
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
            let z: f64 = self.0.iter().zip(x).map(|(w, v)| w * v).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            vec![p, 1.0 - p]
        }
    }

    #[test]
    fn exact_axioms() {
        let m = Logistic(vec![1.5, 0.0, -0.7, 1.5]);
        let x = [0.4, 0.9, 0.3, 0.4];
        let base = [0.0; 4];
        let phi = shapley_exact(&m, &x, &base, 0).unwrap();
        let total = m.predict_proba(&x)[0] - m.predict_proba(&base)[0];
        assert!((phi.iter().sum::<f64>() - total).abs() < 1e-12);
        assert!(phi[1].abs() < 1e-15);
        assert!((phi[0] - phi[3]).abs() < 1e-15);
        assert!(phi[2] < 0.0);
    }

    #[test]
    fn single_feature_gets_everything() {
        let m = Logistic(vec![2.0]);
        let phi = shapley_exact(&m, &[1.0], &[0.0], 0).unwrap();
        assert!((phi[0] - (m.predict_proba(&[1.0])[0] - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn sampled_is_efficient_per_permutation() {
        let m = Logistic(vec![0.3, -1.0, 2.0]);
        let x = [1.0, 0.5, 0.2];
        let est = shapley_sampled(&m, &x, &[0.0; 3], 1, 7, 11).unwrap();
        let total = m.predict_proba(&x)[1] - m.predict_proba(&[0.0; 3])[1];
        assert!((est.values.iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn limits_and_validation() {
        let m = Logistic(vec![0.1; 16]);
        assert!(matches!(shapley_exact(&m, &[0.0; 16], &[0.0; 16], 0), Err(ExplainError::TooManyFeatures { .. })));
        let m = Logistic(vec![0.1; 3]);
        assert!(shapley_exact(&m, &[0.0; 2], &[0.0; 3], 0).is_err());
        assert!(shapley_exact(&m, &[0.0; 3], &[0.0; 3], 2).is_err());
        assert!(shapley_sampled(&m, &[0.0; 3], &[0.0; 3], 0, 0, 1).is_err());
    }
}
