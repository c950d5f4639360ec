//! Keep-mask selection as a 0/1 knapsack: values `U`, weights `S`,
//! capacity `(1 − α)·ΣS − η`.

use serde::{Deserialize, Serialize};

use super::{MaskError, Result};

/// Shave that turns the strict budget inequality into a `≤` constraint.
pub const CAPACITY_SHAVE: f64 = 1e-9;
/// Largest `K` solved exactly.
pub const EXACT_MAX_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Exact Pareto-frontier dynamic programme.
    Exact,
    /// Ratio greedy, better of greedy and best single item.
    Greedy,
    /// `ΣS = 0`: every feature is free.
    KeepAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSolution {
    /// `true` = keep.
    pub keep: Vec<bool>,
    /// `mᵀU`, summed in index order.
    pub value: f64,
    /// `mᵀS`, summed in index order.
    pub weight: f64,
    pub capacity: f64,
    pub solver: Solver,
    /// Fractional-knapsack upper bound (greedy solver only).
    pub lp_bound: Option<f64>,
}

/// `Σ_{j kept} v_j` accumulated in index order.
pub fn masked_sum(keep: &[bool], v: &[f64]) -> f64 {
    keep.iter().zip(v).filter(|(k, _)| **k).fold(0.0, |acc, (_, x)| acc + x)
}

/// `(1 − α)·ΣS − η`.
pub fn capacity(s: &[f64], alpha: f64) -> f64 {
    (1.0 - alpha) * s.iter().fold(0.0, |a, x| a + x) - CAPACITY_SHAVE
}

fn validate(u: &[f64], s: &[f64], alpha: f64) -> Result<()> {
    if u.len() != s.len() {
        return Err(MaskError::DimensionMismatch { expected: s.len(), got: u.len() });
    }
    if u.iter().chain(s).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MaskError::InvalidParameter("sensitivities must be finite and non-negative".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(MaskError::InvalidParameter(format!("alpha {alpha} outside [0,1)")));
    }
    Ok(())
}

/// Maximises `mᵀU` subject to `mᵀS ≤ (1 − α)ΣS − η`: exactly for
/// `K ≤ 20`, greedily (with an LP bound) above that.
pub fn optimize_mask(u: &[f64], s: &[f64], alpha: f64) -> Result<MaskSolution> {
    validate(u, s, alpha)?;
    let k = u.len();
    let cap = capacity(s, alpha);
    if s.iter().all(|&x| x == 0.0) {
        let keep = vec![true; k];
        return Ok(MaskSolution {
            value: masked_sum(&keep, u),
            weight: 0.0,
            keep,
            capacity: cap,
            solver: Solver::KeepAll,
            lp_bound: None,
        });
    }
    let (keep, solver, lp_bound) = if k <= EXACT_MAX_FEATURES {
        (pareto_knapsack(u, s, cap), Solver::Exact, None)
    } else {
        let (keep, bound) = greedy_knapsack(u, s, cap);
        (keep, Solver::Greedy, Some(bound))
    };
    Ok(MaskSolution {
        value: masked_sum(&keep, u),
        weight: masked_sum(&keep, s),
        keep,
        capacity: cap,
        solver,
        lp_bound,
    })
}

#[derive(Clone, Copy)]
struct State {
    weight: f64,
    value: f64,
    mask: u32,
}

/// Exact 0/1 knapsack over the non-dominated `(weight, value)` frontier.
/// Items are added in index order, so every state's sums are bitwise equal
/// to index-order sums over its mask.
fn pareto_knapsack(u: &[f64], s: &[f64], cap: f64) -> Vec<bool> {
    let k = u.len();
    let mut frontier = vec![State { weight: 0.0, value: 0.0, mask: 0 }];
    if cap < 0.0 {
        frontier.clear();
    }
    let mut candidates = Vec::new();
    for j in 0..k {
        candidates.clear();
        candidates.extend_from_slice(&frontier);
        for st in &frontier {
            let w = st.weight + s[j];
            if w <= cap {
                candidates.push(State { weight: w, value: st.value + u[j], mask: st.mask | 1 << j });
            }
        }
        // Lighter first; among equal weights the higher value, then more
        // kept features.
        candidates.sort_by(|a, b| {
            a.weight
                .total_cmp(&b.weight)
                .then(b.value.total_cmp(&a.value))
                .then(b.mask.count_ones().cmp(&a.mask.count_ones()))
                .then(a.mask.cmp(&b.mask))
        });
        frontier.clear();
        for c in &candidates {
            if frontier.last().is_none_or(|l: &State| c.value > l.value) {
                frontier.push(*c);
            }
        }
    }
    // The frontier's values increase with weight; take the heaviest, i.e.
    // the best value at its minimal weight.
    let mask = frontier.last().map_or(0, |st| st.mask);
    (0..k).map(|j| mask >> j & 1 == 1).collect()
}

/// Greedy by `U/S` with zero-weight items free, compared against the best
/// single item. Returns the mask and the fractional upper bound.
fn greedy_knapsack(u: &[f64], s: &[f64], cap: f64) -> (Vec<bool>, f64) {
    let k = u.len();
    let free: Vec<usize> = (0..k).filter(|&j| s[j] == 0.0).collect();
    let free_value: f64 = free.iter().map(|&j| u[j]).sum();
    let mut items: Vec<usize> = (0..k).filter(|&j| s[j] > 0.0 && s[j] <= cap).collect();
    items.sort_by(|&a, &b| (u[b] / s[b]).total_cmp(&(u[a] / s[a])).then(a.cmp(&b)));

    let mut greedy = vec![false; k];
    for &j in &free {
        greedy[j] = true;
    }
    let mut used = 0.0;
    let mut greedy_value = free_value;
    for &j in &items {
        if used + s[j] <= cap {
            used += s[j];
            greedy_value += u[j];
            greedy[j] = true;
        }
    }

    let mut bound = free_value;
    let mut room = cap.max(0.0);
    for &j in &items {
        if s[j] <= room {
            room -= s[j];
            bound += u[j];
        } else {
            bound += u[j] * room / s[j];
            break;
        }
    }

    let best_single = items.iter().copied().max_by(|&a, &b| u[a].total_cmp(&u[b]).then(b.cmp(&a)));
    if let Some(j) = best_single {
        if free_value + u[j] > greedy_value {
            let mut single = vec![false; k];
            for &f in &free {
                single[f] = true;
            }
            single[j] = true;
            return (single, bound);
        }
    }
    (greedy, bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(u: &[f64], s: &[f64], cap: f64) -> f64 {
        let k = u.len();
        let mut best = f64::NEG_INFINITY;
        for m in 0..1u32 << k {
            let keep: Vec<bool> = (0..k).map(|j| m >> j & 1 == 1).collect();
            if masked_sum(&keep, s) <= cap {
                best = best.max(masked_sum(&keep, u));
            }
        }
        best
    }

    #[test]
    fn disjoint_supports() {
        let u = [1.0, 2.0, 0.0, 0.0];
        let s = [0.0, 0.0, 3.0, 1.0];
        let sol = optimize_mask(&u, &s, 0.0).unwrap();
        assert_eq!(sol.keep[..2], [true, true]);
        assert!(sol.weight < 4.0);
        let sol = optimize_mask(&u, &s, 0.99).unwrap();
        assert_eq!(sol.keep, vec![true, true, false, false]);
        assert_eq!(sol.weight, 0.0);
    }

    #[test]
    fn alpha_zero_drops_something_when_all_positive() {
        let sol = optimize_mask(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(sol.keep.iter().filter(|&&k| k).count(), 2);
    }

    #[test]
    fn zero_sensitivity_keeps_all() {
        let sol = optimize_mask(&[1.0, 0.0], &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(sol.solver, Solver::KeepAll);
        assert_eq!(sol.keep, vec![true, true]);
    }

    #[test]
    fn small_random_instances_match_brute_force() {
        use rand::Rng as _;
        let mut rng = crate::seed::rng_from_seed(8);
        for _ in 0..50 {
            let k = rng.random_range(1..=10);
            let u: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: Vec<f64> =
                (0..k).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
            let alpha = rng.random::<f64>() * 0.9;
            let sol = optimize_mask(&u, &s, alpha).unwrap();
            assert_eq!(sol.value, brute(&u, &s, sol.capacity));
            assert!(sol.weight <= sol.capacity);
        }
    }

    #[test]
    fn greedy_half_bound() {
        let u: Vec<f64> = (0..30).map(|j| ((j * 7) % 11) as f64 + 1.0).collect();
        let s: Vec<f64> = (0..30).map(|j| ((j * 5) % 13) as f64 + 1.0).collect();
        let sol = optimize_mask(&u, &s, 0.6).unwrap();
        assert_eq!(sol.solver, Solver::Greedy);
        assert!(sol.value >= 0.5 * sol.lp_bound.unwrap());
        assert!(sol.value <= sol.lp_bound.unwrap() + 1e-12);
        assert!(sol.weight <= sol.capacity);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(optimize_mask(&[1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(optimize_mask(&[-1.0], &[1.0], 0.1).is_err());
        assert!(optimize_mask(&[1.0], &[1.0], 1.0).is_err());
    }
}
