//! Rademacher complexity of the linear class `{<t, .> : |t| = 1}`.
//!
//! For this class the supremum over the sphere is a Euclidean norm:
//! `R_N = E |(1/N) sum_j eps_j X_j|`, so no direction search is needed.
//! Other function classes are out of scope.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Samples;
use crate::error::{invalid_param, Error, Result};
use crate::numeric::compensated_sum;
use crate::seed::substream;

pub const DEFAULT_DRAWS: usize = 2000;
/// Sample sizes up to this use exhaustive sign enumeration by default.
pub const EXACT_MAX_ROWS: usize = 14;
const EXACT_HARD_LIMIT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub stderr: f64,
    pub draws: usize,
    pub exact: bool,
}

fn signed_norm(samples: &Samples, mask: u64, acc: &mut [f64]) -> f64 {
    acc.fill(0.0);
    for (j, row) in samples.rows().enumerate() {
        let sign = if mask >> j & 1 == 1 { -1.0 } else { 1.0 };
        for (a, x) in acc.iter_mut().zip(row) {
            *a += sign * x;
        }
    }
    acc.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Exact average over all `2^N` sign vectors.
pub fn rademacher_exact(samples: &Samples) -> Result<RademacherEstimate> {
    let big_n = samples.len();
    if big_n == 0 {
        return Err(Error::InvalidInput("rademacher estimate needs samples".into()));
    }
    if big_n > EXACT_HARD_LIMIT {
        return Err(Error::BudgetExceeded(format!(
            "2^{big_n} sign vectors exceed the enumeration limit of 2^{EXACT_HARD_LIMIT}"
        )));
    }
    // eps and -eps give the same norm: fix the last sign.
    let half = 1u64 << (big_n - 1);
    let chunk = 1u64 << 10;
    let partials: Vec<f64> = (0..half.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; samples.dim()];
            let lo = c * chunk;
            let hi = (lo + chunk).min(half);
            compensated_sum((lo..hi).map(|mask| signed_norm(samples, mask, &mut acc)))
        })
        .collect();
    let value = compensated_sum(partials) / half as f64 / big_n as f64;
    Ok(RademacherEstimate {
        value,
        stderr: 0.0,
        draws: 1usize << big_n,
        exact: true,
    })
}

/// Monte Carlo average over `draws` sign vectors; draw `d` uses substream `[d]` of `seed`.
pub fn rademacher_mc(samples: &Samples, draws: usize, seed: u64) -> Result<RademacherEstimate> {
    if draws == 0 {
        return Err(invalid_param("draws must be >= 1"));
    }
    let big_n = samples.len();
    if big_n == 0 {
        return Err(Error::InvalidInput("rademacher estimate needs samples".into()));
    }
    let norms: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = substream(seed, &[d as u64]);
            let mut acc = vec![0.0; samples.dim()];
            for row in samples.rows() {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += sign * x;
                }
            }
            acc.iter().map(|a| a * a).sum::<f64>().sqrt() / big_n as f64
        })
        .collect();
    let m = draws as f64;
    let mean = compensated_sum(norms.iter().copied()) / m;
    let stderr = if draws > 1 {
        let var = compensated_sum(norms.iter().map(|x| (x - mean) * (x - mean))) / (m - 1.0);
        (var / m).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(RademacherEstimate {
        value: mean,
        stderr,
        draws,
        exact: false,
    })
}

/// Exact enumeration for `N <= 14`, Monte Carlo otherwise.
pub fn rademacher_linear(samples: &Samples, draws: usize, seed: u64) -> Result<RademacherEstimate> {
    if draws == 0 {
        return Err(invalid_param("draws must be >= 1"));
    }
    if samples.len() <= EXACT_MAX_ROWS {
        rademacher_exact(samples)
    } else {
        rademacher_mc(samples, draws, seed)
    }
}

/// `A sqrt(n / N)`.
pub fn rademacher_upper(a: f64, n: usize, big_n: usize) -> Result<f64> {
    if !(a > 0.0) || n == 0 || big_n == 0 {
        return Err(invalid_param(format!(
            "rademacher_upper needs A > 0, n >= 1, N >= 1 (got {a}, {n}, {big_n})"
        )));
    }
    Ok(a * (n as f64 / big_n as f64).sqrt())
}

/// `(sum_j |X_j|^2)^(1/2) / N`: the conditional second-moment bound on the
/// sign average for this particular sample.
pub fn conditional_second_moment_bound(samples: &Samples) -> f64 {
    let total = compensated_sum(samples.as_flat().iter().map(|x| x * x));
    total.sqrt() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{draw_samples, DistributionSpec};
    use crate::seed::rng_from_seed;

    #[test]
    fn single_row() {
        let s = Samples::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = rademacher_linear(&s, 10, 0).unwrap();
        assert!(r.exact);
        assert_eq!(r.value, 1.0);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn two_equal_rows() {
        let s = Samples::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(rademacher_exact(&s).unwrap().value, 0.5);
    }

    #[test]
    fn mc_agrees_with_enumeration() {
        let s = draw_samples(&DistributionSpec::gaussian(3), 10, &mut rng_from_seed(2)).unwrap();
        let exact = rademacher_exact(&s).unwrap();
        let mc = rademacher_mc(&s, 4000, 5).unwrap();
        assert!((mc.value - exact.value).abs() <= 3.0 * mc.stderr, "{mc:?} vs {exact:?}");
    }

    #[test]
    fn exact_is_homogeneous() {
        let s = draw_samples(&DistributionSpec::uniform_cube(4), 9, &mut rng_from_seed(3)).unwrap();
        let base = rademacher_exact(&s).unwrap().value;
        for c in [2.0, -0.5, 3.7] {
            let scaled = rademacher_exact(&s.scaled(c)).unwrap().value;
            assert!((scaled - c.abs() * base).abs() <= 1e-13 * scaled, "c={c}");
        }
    }

    #[test]
    fn upper_bound_values() {
        assert_eq!(rademacher_upper(1.0, 7, 7).unwrap(), 1.0);
        assert_eq!(rademacher_upper(1.0, 100, 1600).unwrap(), 0.25);
        assert!(rademacher_upper(0.0, 1, 1).is_err());
    }

    #[test]
    fn exact_below_conditional_bound() {
        for seed in 0..10 {
            let s = draw_samples(&DistributionSpec::heavy_radial(5, 1.0), 12, &mut rng_from_seed(seed)).unwrap();
            let r = rademacher_exact(&s).unwrap();
            assert!(r.value <= conditional_second_moment_bound(&s) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn enumeration_budget() {
        let s = Samples::from_flat(1, vec![1.0; 30]).unwrap();
        assert!(matches!(rademacher_exact(&s), Err(Error::BudgetExceeded(_))));
        assert!(!rademacher_linear(&s, 50, 1).unwrap().exact);
    }
}
