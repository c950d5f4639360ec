use proptest::prelude::*;

use privmask::attack::{logit_confidence, GaussianNull};
use privmask::data::{gen_random_dataset, randomize_labels, split_indices};
use privmask::dp::{account_epsilon, clip_per_sample, PrivacySpec};
use privmask::explain::{shapley_exact, shapley_sampled};
use privmask::masking::{
    apply_mask, capacity, masked_sum, optimize_mask, random_mask, top_k_mask, ClassMaskSet, MaskMethod,
};
use privmask::seed::derive_seed;
use privmask::stats::spearman;
use privmask::{Classifier, Task};

/// `softmax([w·x + b, 0])`.
struct Logistic {
    w: Vec<f64>,
    b: f64,
}

impl Classifier for Logistic {
    fn num_features(&self) -> usize {
        self.w.len()
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let z: f64 = self.b + self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        vec![p, 1.0 - p]
    }
}

/// Logistic model on pairwise products, so features interact.
struct Pairwise {
    w: Vec<f64>,
}

impl Classifier for Pairwise {
    fn num_features(&self) -> usize {
        self.w.len()
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let k = x.len();
        let z: f64 = (0..k).map(|j| self.w[j] * x[j] * x[(j + 1) % k]).sum();
        let p = 1.0 / (1.0 + (-z).exp());
        vec![p, 1.0 - p]
    }
}

fn unit_vec(k: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, k)
}

fn knapsack_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..12).prop_flat_map(|k| (unit_vec(k..k + 1), unit_vec(k..k + 1), 0.0..0.99f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn knapsack_is_feasible_and_optimal((u, s, alpha) in knapsack_instance()) {
        let sol = optimize_mask(&u, &s, alpha).unwrap();
        let cap = capacity(&s, alpha);
        prop_assert!(sol.weight <= cap || s.iter().all(|&x| x == 0.0));
        prop_assert_eq!(sol.value, masked_sum(&sol.keep, &u));
        let k = u.len();
        for bits in 0u32..1 << k {
            let keep: Vec<bool> = (0..k).map(|j| bits >> j & 1 == 1).collect();
            if masked_sum(&keep, &s) <= cap {
                prop_assert!(masked_sum(&keep, &u) <= sol.value);
            }
        }
    }

    #[test]
    fn larger_alpha_never_raises_value((u, s, alpha) in knapsack_instance(), extra in 0.0..0.5f64) {
        let a = optimize_mask(&u, &s, alpha).unwrap();
        let b = optimize_mask(&u, &s, (alpha + extra).min(0.99)).unwrap();
        prop_assert!(b.value <= a.value);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(g in prop::collection::vec(-1e3..1e3f64, 1..100), c in 1e-3..10.0f64) {
        let mut clipped = g.clone();
        let n = clip_per_sample(&mut clipped, c).unwrap();
        let norm = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= c);
        prop_assert_eq!(n, norm);
        let before = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if before <= c {
            prop_assert_eq!(&clipped, &g);
        }
        for (a, b) in clipped.iter().zip(&g) {
            prop_assert!(a * b >= 0.0);
        }
    }

    #[test]
    fn logit_is_antisymmetric_and_increasing(q in 1e-9..0.5f64, d in 1e-6..0.4f64) {
        let (a, b) = (logit_confidence(q).unwrap(), logit_confidence(1.0 - q).unwrap());
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(logit_confidence((q + d).min(1.0 - 1e-9)).unwrap() > a);
    }

    #[test]
    fn lira_score_is_a_monotone_probability(mu in -5.0..5.0f64, sigma in 1e-3..5.0f64, x in -20.0..20.0f64, d in 0.0..5.0f64) {
        let null = GaussianNull { mu_out: mu, sigma_out: sigma };
        let (a, b) = (null.score(x), null.score(x + d));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
        prop_assert!((null.score(mu) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn epsilon_grows_with_steps(sigma in 0.5..3.0f64, q in 0.001..0.5f64, steps in 1usize..500) {
        let spec = |t| PrivacySpec { clip_norm: 1.0, noise_multiplier: sigma, sampling_rate: q, steps: t, delta: 1e-5, epsilon_target: None };
        let a = account_epsilon(&spec(steps)).unwrap().epsilon;
        let b = account_epsilon(&spec(steps + 1)).unwrap().epsilon;
        prop_assert!(a > 0.0 && b >= a * (1.0 - 1e-12));
    }

    #[test]
    fn exact_shapley_is_efficient(w in prop::collection::vec(-3.0..3.0f64, 1..10), seed in any::<u64>()) {
        let k = w.len();
        let x: Vec<f64> = (0..k).map(|j| (derive_seed(seed, &[j as u64]) % 1000) as f64 / 1000.0).collect();
        let base = vec![0.0; k];
        for model in [&Logistic { w: w.clone(), b: 0.3 } as &dyn Classifier, &Pairwise { w: w.clone() }] {
            let phi = shapley_exact(model, &x, &base, 1).unwrap();
            let gain = model.predict_proba(&x)[1] - model.predict_proba(&base)[1];
            prop_assert!((phi.iter().sum::<f64>() - gain).abs() <= 1e-9);
            let est = shapley_sampled(model, &x, &base, 1, 9, seed).unwrap();
            prop_assert!((est.values.iter().sum::<f64>() - gain).abs() <= 1e-9);
        }
    }

    #[test]
    fn masks_have_the_requested_size(s in unit_vec(1..40), pct in 0.0..100.0f64, frac in 0.0..1.0f64, seed in any::<u64>()) {
        let k = s.len();
        let top = top_k_mask(&s, pct).unwrap();
        let dropped = top.iter().filter(|&&b| !b).count();
        prop_assert_eq!(dropped, ((k as f64 * pct / 100.0 - 1e-9).ceil().max(0.0) as usize).min(k));
        let worst_kept = s.iter().zip(&top).filter(|(_, &b)| b).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        let best_dropped = s.iter().zip(&top).filter(|(_, &b)| !b).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        prop_assert!(dropped == 0 || dropped == k || best_dropped >= worst_kept);
        let rnd = random_mask(k, frac, seed).unwrap();
        prop_assert_eq!(rnd.iter().filter(|&&b| !b).count(), (k as f64 * frac + 1e-9).floor() as usize);
        prop_assert_eq!(rnd, random_mask(k, frac, seed).unwrap());
    }

    #[test]
    fn applying_a_mask_zeroes_exactly_the_masked_cells(seed in any::<u64>(), n in 2usize..30, k in 1usize..8) {
        let data = gen_random_dataset(n, k, 3, seed).unwrap();
        let masks: Vec<Vec<bool>> = (0..3).map(|z| random_mask(k, 0.5, derive_seed(seed, &[z])).unwrap()).collect();
        let set = ClassMaskSet { masks: masks.clone(), ..ClassMaskSet::uniform(vec![true; k], 3, MaskMethod::Random, Task::Identity, seed) };
        let masked = apply_mask(&data, &set).unwrap();
        for i in 0..n {
            let z = data.labels(Task::Identity)[i];
            for ((&got, &orig), &keep) in masked.row(i).iter().zip(data.row(i)).zip(&masks[z]) {
                prop_assert_eq!(got, if keep { orig } else { 0.0 });
            }
        }
        prop_assert_eq!(masked.labels(Task::Utility), data.labels(Task::Utility));
    }

    #[test]
    fn split_is_a_partition(n in 2usize..500, ratio in 0.05..0.95f64, seed in any::<u64>()) {
        let n_train = (n as f64 * ratio - 1e-9).ceil() as usize;
        if n_train == 0 || n_train >= n {
            prop_assert!(split_indices(n, ratio, seed).is_err());
            return Ok(());
        }
        let (train, test) = split_indices(n, ratio, seed).unwrap();
        prop_assert_eq!(train.len(), n_train);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!((train.clone(), test), split_indices(n, ratio, seed).unwrap());
    }

    #[test]
    fn label_randomisation_touches_at_most_the_fraction(seed in any::<u64>(), n in 2usize..200, frac in 0.0..1.0f64) {
        let data = gen_random_dataset(n, 3, 4, seed).unwrap();
        let out = randomize_labels(&data, frac, Task::Utility, seed ^ 1).unwrap();
        let changed = data.labels(Task::Utility).iter().zip(out.labels(Task::Utility)).filter(|(a, b)| a != b).count();
        prop_assert!(changed <= (frac * n as f64).floor() as usize);
        prop_assert_eq!(out.labels(Task::Identity), data.labels(Task::Identity));
        prop_assert_eq!(out.features(), data.features());
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(xs in prop::collection::vec(-1e3..1e3f64, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
        let rho = spearman(&xs, &ys);
        let distinct = xs.iter().any(|&x| x != xs[0]);
        if distinct {
            prop_assert!((rho - 1.0).abs() < 1e-12);
        }
        let rev: Vec<f64> = xs.iter().map(|x| -x).collect();
        let r2 = spearman(&xs, &rev);
        prop_assert!(!distinct || (r2 + 1.0).abs() < 1e-12);
    }
}
