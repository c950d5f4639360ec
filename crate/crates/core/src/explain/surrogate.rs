use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{check_inputs, ExplainError, Result};
use crate::model::Classifier;
use crate::seed::rng_from_seed;

/// `exp(−d²/width²)`; `width = ∞` gives uniform weights.
pub fn kernel_weight(distance: f64, kernel_width: f64) -> f64 {
    (-(distance * distance) / (kernel_width * kernel_width)).exp()
}

/// Conventional default width for `K` binary features.
pub fn default_kernel_width(num_features: usize) -> f64 {
    0.75 * (num_features as f64).sqrt()
}

/// Local linear surrogate around `x`.
///
/// Each perturbation switches a uniformly drawn number of uniformly chosen
/// features off (to 0); the first perturbation is `x` itself. A weighted
/// ridge regression of the target-class probability on the on/off pattern
/// (intercept unpenalised) gives the attributions.
pub fn local_surrogate<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    target: usize,
    num_perturbations: usize,
    kernel_width: f64,
    ridge: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = x.len();
    check_inputs(model, x, &vec![0.0; k], target)?;
    if num_perturbations < k {
        return Err(ExplainError::InvalidParameter(format!(
            "num_perturbations {num_perturbations} below feature count {k}"
        )));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(ExplainError::InvalidParameter("ridge must be positive".into()));
    }
    if !(kernel_width > 0.0) {
        return Err(ExplainError::InvalidParameter("kernel_width must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let dim = k + 1;
    // Normal equations for design rows [1, z_1..z_K].
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut z = vec![true; k];
    let mut buf = vec![0.0; k];
    let mut idx: Vec<usize> = (0..k).collect();
    let mut row = vec![0.0; dim];
    for s in 0..num_perturbations {
        z.iter_mut().for_each(|b| *b = true);
        let off = if s == 0 { 0 } else { rng.random_range(1..=k) };
        for i in 0..off {
            let pick = rng.random_range(i..k);
            idx.swap(i, pick);
            z[idx[i]] = false;
        }
        for j in 0..k {
            buf[j] = if z[j] { x[j] } else { 0.0 };
        }
        let y = model.predict_proba(&buf)[target];
        let w = kernel_weight(off as f64, kernel_width);
        row[0] = 1.0;
        for j in 0..k {
            row[j + 1] = if z[j] { 1.0 } else { 0.0 };
        }
        for a in 0..dim {
            if row[a] == 0.0 {
                continue;
            }
            rhs[a] += w * y;
            for b in 0..dim {
                if row[b] != 0.0 {
                    gram[(a, b)] += w;
                }
            }
        }
    }
    for j in 1..dim {
        gram[(j, j)] += ridge;
    }
    let chol = gram.cholesky().ok_or(ExplainError::SingularSystem)?;
    let beta = chol.solve(&rhs);
    Ok(beta.iter().skip(1).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(Vec<f64>);

    impl Classifier for Linear {
        fn num_features(&self) -> usize {
            self.0.len()
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
            let p = 0.5 + self.0.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            vec![p, 1.0 - p]
        }
    }

    #[test]
    fn recovers_linear_effects() {
        let w = vec![0.1, -0.05, 0.0, 0.2];
        let x = [1.0, 1.0, 1.0, 0.5];
        let coef = local_surrogate(&Linear(w.clone()), &x, 0, 500, 10.0, 1e-6, 3).unwrap();
        for j in 0..4 {
            assert!((coef[j] - w[j] * x[j]).abs() < 1e-4, "{j}: {} vs {}", coef[j], w[j] * x[j]);
        }
    }

    #[test]
    fn kernel_limits() {
        assert_eq!(kernel_weight(0.0, 1.0), 1.0);
        assert_eq!(kernel_weight(5.0, f64::INFINITY), 1.0);
        assert!(kernel_weight(2.0, 1.0) < kernel_weight(1.0, 1.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let m = Linear(vec![0.1; 3]);
        assert!(local_surrogate(&m, &[1.0; 3], 0, 2, 1.0, 1.0, 0).is_err());
        assert!(local_surrogate(&m, &[1.0; 3], 0, 10, 1.0, 0.0, 0).is_err());
        assert!(local_surrogate(&m, &[1.0; 3], 0, 10, 0.0, 1.0, 0).is_err());
    }
}
