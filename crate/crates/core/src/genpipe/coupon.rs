//! Coupon-collector budgeting for the exposure-debias random mix.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::seed;

/// Expected number of uniform draws from `n` items needed to go from `s`
/// to `t` distinct items seen: `n · Σ_{j=n-t+1}^{n-s} 1/j`.
pub fn expected_queries(n: usize, s: usize, t: usize) -> Result<f64> {
    if !(s < t && t <= n) {
        return Err(Error::invalid(format!(
            "need 0 <= s < t <= N, got N={n}, s={s}, t={t}"
        )));
    }
    // Smallest terms first.
    let sum: f64 = (n - t + 1..=n - s).rev().map(|j| 1.0 / j as f64).sum();
    Ok(n as f64 * sum)
}

/// Monte-Carlo mean of the number of draws needed to see `t` distinct
/// items out of `n`, averaged over `trials` independent runs.
pub fn simulate_collection(n: usize, t: usize, trials: usize, seed: u64, par: Parallelism) -> f64 {
    const CHUNK: usize = 1000;
    let chunks = trials.div_ceil(CHUNK);
    let sums = par::map_indexed(chunks, par, |c| {
        let mut rng = seed::stream(seed, c as u64);
        let mut seen = vec![false; n];
        let mut total = 0u64;
        for _ in 0..CHUNK.min(trials - c * CHUNK) {
            seen.iter_mut().for_each(|b| *b = false);
            let mut distinct = 0;
            while distinct < t {
                total += 1;
                let i = rng.random_range(0..n);
                if !std::mem::replace(&mut seen[i], true) {
                    distinct += 1;
                }
            }
        }
        total
    });
    sums.iter().sum::<u64>() as f64 / trials as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposurePlan {
    /// Distinct-item goal `⌈m_frac·|I|⌉`.
    pub target_distinct: usize,
    /// Expected uniform draws to reach the goal.
    pub expected_draws: f64,
    /// Uniform-random sequences of length `sequence_length` to add.
    pub random_sequences: usize,
}

/// Number of uniform-random sequences to mix into the corpus so that the
/// expected item coverage reaches `m_frac` of the catalog, given that
/// `already_covered` distinct items are counted on beforehand.
pub fn plan_exposure_mix(
    item_count: usize,
    m_frac: f64,
    already_covered: usize,
    sequence_length: usize,
) -> Result<ExposurePlan> {
    if !(m_frac > 0.0 && m_frac <= 1.0) {
        return Err(Error::invalid(format!("coverage fraction must be in (0,1], got {m_frac}")));
    }
    if sequence_length == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let target = ((m_frac * item_count as f64) - 1e-9).ceil().max(1.0) as usize;
    let target = target.min(item_count);
    if already_covered >= target {
        return Ok(ExposurePlan {
            target_distinct: target,
            expected_draws: 0.0,
            random_sequences: 0,
        });
    }
    let draws = expected_queries(item_count, already_covered, target)?;
    Ok(ExposurePlan {
        target_distinct: target,
        expected_draws: draws,
        random_sequences: (draws / sequence_length as f64).ceil() as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_small_cases() {
        assert_eq!(expected_queries(1, 0, 1).unwrap(), 1.0);
        let h: f64 = (2..=10).map(|j| 1.0 / j as f64).sum();
        assert!((expected_queries(10, 0, 9).unwrap() - 10.0 * h).abs() < 1e-12);
        assert!((expected_queries(10, 0, 9).unwrap() - 19.2897).abs() < 1e-4);
        let hn: f64 = (1..=7).map(|j| 1.0 / j as f64).sum();
        assert!((expected_queries(7, 0, 7).unwrap() - 7.0 * hn).abs() < 1e-12);
    }

    #[test]
    fn invalid_ranges() {
        assert!(expected_queries(10, 5, 5).is_err());
        assert!(expected_queries(10, 0, 11).is_err());
        assert!(plan_exposure_mix(100, 0.0, 0, 50).is_err());
        assert!(plan_exposure_mix(100, 1.5, 0, 50).is_err());
    }

    #[test]
    fn monotone_in_both_ends() {
        for t in 2..=30 {
            assert!(expected_queries(30, 0, t).unwrap() > expected_queries(30, 0, t - 1).unwrap());
        }
        for s in 1..20 {
            assert!(expected_queries(30, s, 20).unwrap() < expected_queries(30, s - 1, 20).unwrap());
        }
    }

    #[test]
    fn plan_divides_by_length() {
        let plan = plan_exposure_mix(100, 0.9, 0, 50).unwrap();
        let ek = expected_queries(100, 0, 90).unwrap();
        assert_eq!(plan.target_distinct, 90);
        assert_eq!(plan.random_sequences, (ek / 50.0).ceil() as usize);
        assert_eq!(plan_exposure_mix(100, 0.9, 95, 50).unwrap().random_sequences, 0);
    }

    #[test]
    fn simulation_is_thread_count_independent() {
        let a = simulate_collection(20, 15, 3000, 9, Parallelism::SEQUENTIAL);
        let b = simulate_collection(20, 15, 3000, 9, Parallelism::threads(3));
        assert_eq!(a, b);
    }
}
