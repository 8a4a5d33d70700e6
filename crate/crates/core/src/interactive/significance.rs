use rand::{Rng as _, RngCore};

use super::InteractiveError;
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 100_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Two-sided paired permutation test on per-turn scores.
///
/// The statistic is `|Σ (a_i - b_i)|`; under the null every difference is
/// equally likely to have either sign. Returns `(c + 1) / (R + 1)`, where `c`
/// counts the `R` random sign assignments whose statistic reaches the
/// observed one.
pub fn significance(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<f64, InteractiveError> {
    if a.len() != b.len() {
        return Err(InteractiveError::Argument(format!(
            "paired lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(InteractiveError::Argument("no paired observations".into()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let mut rng = rng::seeded(seed);
    let binary = diffs.iter().all(|d| d.abs() == 1.0);
    let tolerance = 1e-9 * (1.0 + observed);
    let mut count = 0usize;
    if binary {
        // Σ s_i d_i for ±1 differences is 2·(number of +1 signs) − m.
        let m = diffs.len();
        let observed = observed.round() as i64;
        let words = m.div_ceil(64);
        let tail = m % 64;
        for _ in 0..resamples {
            let mut ones = 0i64;
            for w in 0..words {
                let mut bits = rng.next_u64();
                if w == words - 1 && tail != 0 {
                    bits &= (1u64 << tail) - 1;
                }
                ones += bits.count_ones() as i64;
            }
            if (2 * ones - m as i64).abs() >= observed {
                count += 1;
            }
        }
    } else {
        for _ in 0..resamples {
            let s: f64 = diffs
                .iter()
                .map(|d| if rng.random_bool(0.5) { *d } else { -*d })
                .sum();
            if s.abs() >= observed - tolerance {
                count += 1;
            }
        }
    }
    Ok((count + 1) as f64 / (resamples + 1) as f64)
}

/// [`significance`] on 0/1 indicators.
pub fn significance_hits(
    a: &[u8],
    b: &[u8],
    resamples: usize,
    seed: u64,
) -> Result<f64, InteractiveError> {
    let f = |v: &[u8]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    significance(&f(a), &f(b), resamples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact two-sided p-value by enumerating every sign assignment.
    fn exact(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let observed = d.iter().sum::<f64>().abs();
        let n = d.len();
        let extreme = (0..1u64 << n)
            .filter(|mask| {
                let s: f64 = (0..n)
                    .map(|i| if mask >> i & 1 == 1 { d[i] } else { -d[i] })
                    .sum();
                s.abs() >= observed - 1e-9
            })
            .count();
        extreme as f64 / (1u64 << n) as f64
    }

    #[test]
    fn identical_lists() {
        let a = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(significance(&a, &a, 1000, 1).unwrap(), 1.0);
    }

    #[test]
    fn all_wins_is_significant() {
        let a = [1u8; 20];
        let b = [0u8; 20];
        let p = significance_hits(&a, &b, DEFAULT_RESAMPLES, DEFAULT_SEED).unwrap();
        assert!(p < 0.001, "{p}");
        // The exact value is 2 / 2^20; the estimate bottoms out at 1 / (R + 1).
        assert!(exact(&[1.0; 20], &[0.0; 20]) < 1e-5);
    }

    #[test]
    fn agrees_with_enumeration() {
        let cases: [(&[f64], &[f64]); 3] = [
            (
                &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
                &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            ),
            (
                &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0],
                &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            ),
            (
                &[0.5, 0.2, 0.9, 0.4, 0.7, 0.1],
                &[0.1, 0.3, 0.2, 0.4, 0.1, 0.0],
            ),
        ];
        for (a, b) in cases {
            let p = significance(a, b, 200_000, 3).unwrap();
            let e = exact(a, b);
            // Binomial standard error of the estimate, with slack.
            let se = (e * (1.0 - e) / 200_000.0).sqrt();
            assert!((p - e).abs() <= 5.0 * se + 1e-5, "{p} vs {e}");
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(significance(&[1.0], &[1.0, 0.0], 10, 0).is_err());
        assert!(significance(&[], &[], 10, 0).is_err());
    }
}
