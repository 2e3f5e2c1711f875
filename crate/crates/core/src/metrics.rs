//! Verifier-efficiency estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unbiased pass@k: `1 − C(n−c, k) / C(n, k)`.
///
/// The binomial ratio is evaluated as `Π_{i<k} (n−c−i)/(n−i)`, so it never
/// forms a factorial.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if c > n {
        return Err(Error::invalid(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

/// A samples-to-correct value. `censored` is set when no correct response
/// exists; `value` then follows the `(N+1)/(c+1)` convention of `N + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplesToCorrect {
    pub value: f64,
    pub censored: bool,
}

/// Expected draw index of the first correct response under uniform sampling
/// without replacement: `(N + 1) / (c + 1)`.
pub fn samples_to_correct_random(n: u64, c: u64) -> Result<SamplesToCorrect> {
    if n == 0 {
        return Err(Error::invalid("empty pool"));
    }
    if c > n {
        return Err(Error::invalid(format!("c = {c} exceeds n = {n}")));
    }
    Ok(SamplesToCorrect {
        value: (n + 1) as f64 / (c + 1) as f64,
        censored: c == 0,
    })
}

/// 1-based position of the first correct index in `order`. When none is
/// correct the result is censored with value `order.len() + 1`.
pub fn samples_to_correct_ordered(order: &[usize], rewards: &[u8]) -> Result<SamplesToCorrect> {
    if order.is_empty() {
        return Err(Error::invalid("empty selection order"));
    }
    for (pos, &i) in order.iter().enumerate() {
        let r = *rewards
            .get(i)
            .ok_or_else(|| Error::invalid(format!("index {i} out of range for {} rewards", rewards.len())))?;
        if r == 1 {
            return Ok(SamplesToCorrect {
                value: (pos + 1) as f64,
                censored: false,
            });
        }
    }
    Ok(SamplesToCorrect {
        value: (order.len() + 1) as f64,
        censored: true,
    })
}

/// Whether any of the first `k` entries of `order` is correct.
pub fn hit_within(order: &[usize], rewards: &[u8], k: usize) -> bool {
    order.iter().take(k).any(|&i| rewards.get(i) == Some(&1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKCurve {
    pub ks: Vec<u64>,
    pub values: Vec<f64>,
}

/// Dataset pass@k: the mean of the per-question estimator over `(n, c)` pairs.
/// Questions with fewer than `k` samples are an error.
pub fn dataset_pass_at_k(questions: &[(u64, u64)], ks: &[u64]) -> Result<PassAtKCurve> {
    if questions.is_empty() {
        return Err(Error::invalid("no questions"));
    }
    let values = ks
        .iter()
        .map(|&k| {
            let total: f64 = questions
                .iter()
                .map(|&(n, c)| pass_at_k(n, c, k))
                .sum::<Result<f64>>()?;
            Ok(total / questions.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(PassAtKCurve {
        ks: ks.to_vec(),
        values,
    })
}

/// Splits questions into `n_bins` groups of increasing hardness. Bins hold
/// `⌈Q/n⌉` questions first and `⌊Q/n⌋` after; equal hardness keeps input order.
pub fn hardness_bins(reference: &[f64], n_bins: usize) -> Result<Vec<Vec<usize>>> {
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if reference.len() < n_bins {
        return Err(Error::invalid(format!(
            "{} questions cannot fill {n_bins} bins",
            reference.len()
        )));
    }
    if reference.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("hardness values"));
    }
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference[a].total_cmp(&reference[b]));
    let q = reference.len();
    let (base, extra) = (q / n_bins, q % n_bins);
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let len = base + usize::from(b < extra);
        bins.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(bins)
}

/// `1 − method / baseline`; positive when the method needs fewer samples.
pub fn relative_improvement(method: f64, baseline: f64) -> f64 {
    1.0 - method / baseline
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Mean, sample standard deviation and standard error.
pub fn summarize(values: &[f64]) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            stderr: f64::NAN,
            count,
        };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        std,
        stderr: std / (count as f64).sqrt(),
        count,
    }
}

/// Percentile bootstrap interval for a statistic of paired samples.
pub fn bootstrap_ci<F>(len: usize, statistic: F, resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    if len == 0 || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0; len];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..len);
            }
            statistic(&idx)
        })
        .filter(|v| v.is_finite())
        .collect();
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| stats[((q * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    Some((at(alpha), at(1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Number of size-`k` subsets of `0..n` containing at least one of the
    /// first `c` items, by enumerating bitmasks.
    fn enumerate_hits(n: u32, c: u32, k: u32) -> (u64, u64) {
        let mut hits = 0;
        let mut total = 0;
        let correct_mask = (1u32 << c) - 1;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() == k {
                total += 1;
                if mask & correct_mask != 0 {
                    hits += 1;
                }
            }
        }
        (hits, total)
    }

    #[test]
    fn pass_at_k_examples() {
        for k in 1..=6 {
            assert_eq!(pass_at_k(6, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k(6, 6, k).unwrap(), 1.0);
        }
        assert!((pass_at_k(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(enumerate_hits(4, 2, 2), (5, 6));
    }

    #[test]
    fn pass_at_k_matches_enumeration() {
        for n in 1..=12u32 {
            for c in 0..=n {
                for k in 1..=n {
                    let (hits, total) = enumerate_hits(n, c, k);
                    let v = pass_at_k(n as u64, c as u64, k as u64).unwrap();
                    let oracle = hits as f64 / total as f64;
                    assert!((v - oracle).abs() <= 4.0 * f64::EPSILON, "n={n} c={c} k={k}");
                }
            }
        }
    }

    #[test]
    fn pass_at_k_large_n() {
        let v = pass_at_k(1_000_000, 10, 1000).unwrap();
        // 1 − (1 − k/n)^c to leading order.
        assert!((v - (1.0 - (1.0f64 - 1e-3).powi(10))).abs() < 1e-5);
        assert!(pass_at_k(5, 2, 6).is_err());
        assert!(pass_at_k(5, 6, 1).is_err());
    }

    #[test]
    fn samples_to_correct_examples() {
        assert_eq!(samples_to_correct_random(9, 9).unwrap().value, 1.0);
        assert_eq!(samples_to_correct_random(3, 1).unwrap().value, 2.0);
        let censored = samples_to_correct_random(6400, 0).unwrap();
        assert_eq!(
            censored,
            SamplesToCorrect {
                value: 6401.0,
                censored: true
            }
        );
        assert!(samples_to_correct_random(0, 0).is_err());

        let rewards = [1, 0, 0, 1];
        assert_eq!(samples_to_correct_ordered(&[0, 1], &rewards).unwrap().value, 1.0);
        assert_eq!(samples_to_correct_ordered(&[1, 2, 3], &rewards).unwrap().value, 3.0);
        let none = samples_to_correct_ordered(&[1, 2], &rewards).unwrap();
        assert!(none.censored);
        assert_eq!(none.value, 3.0);
        assert!(samples_to_correct_ordered(&[], &rewards).is_err());
        assert!(samples_to_correct_ordered(&[7], &rewards).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn samples_to_correct_matches_all_orderings() {
        for n in 1..=7usize {
            let perms = permutations(n);
            for c in 0..=n {
                let rewards: Vec<u8> = (0..n).map(|i| (i < c) as u8).collect();
                let sum: u64 = perms
                    .iter()
                    .map(|p| samples_to_correct_ordered(p, &rewards).unwrap().value as u64)
                    .sum();
                // mean = sum / n!, compared to (n+1)/(c+1) in integers.
                assert_eq!(sum * (c as u64 + 1), (n as u64 + 1) * perms.len() as u64, "n={n} c={c}");
                let est = samples_to_correct_random(n as u64, c as u64).unwrap();
                assert_eq!(est.value, sum as f64 / perms.len() as f64);
            }
        }
    }

    #[test]
    fn trial_average() {
        let rewards = [0, 0, 1, 0, 1];
        let orders = [vec![2], vec![0, 4], vec![1, 3, 2], vec![4], vec![3, 0, 1, 2]];
        let stc: Vec<f64> = orders
            .iter()
            .map(|o| samples_to_correct_ordered(o, &rewards).unwrap().value)
            .collect();
        assert_eq!(stc, vec![1.0, 2.0, 3.0, 1.0, 4.0]);
        assert_eq!(summarize(&stc).mean, 11.0 / 5.0);
    }

    #[test]
    fn bins() {
        let h: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let bins = hardness_bins(&h, 10).unwrap();
        assert!(bins.iter().all(|b| b.len() == 10));
        for w in bins.windows(2) {
            let max_a = w[0].iter().map(|&i| h[i]).fold(f64::MIN, f64::max);
            let min_b = w[1].iter().map(|&i| h[i]).fold(f64::MAX, f64::min);
            assert!(max_a <= min_b);
        }

        let flat = vec![3.0; 23];
        let bins = hardness_bins(&flat, 10).unwrap();
        let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(bins.concat(), (0..23).collect::<Vec<_>>());

        assert!(hardness_bins(&[1.0; 5], 10).is_err());
    }

    #[test]
    fn reversed_input_keeps_bin_contents() {
        let h: Vec<f64> = (0..50).map(|i| ((i * 13) % 17) as f64 + i as f64 * 0.01).collect();
        let rev: Vec<f64> = h.iter().rev().copied().collect();
        let a = hardness_bins(&h, 5).unwrap();
        let b = hardness_bins(&rev, 5).unwrap();
        for (ba, bb) in a.iter().zip(&b) {
            let mut va: Vec<f64> = ba.iter().map(|&i| h[i]).collect();
            let mut vb: Vec<f64> = bb.iter().map(|&i| rev[i]).collect();
            va.sort_by(f64::total_cmp);
            vb.sort_by(f64::total_cmp);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn dataset_curve_is_mean() {
        let curve = dataset_pass_at_k(&[(4, 2), (4, 0)], &[1, 2, 4]).unwrap();
        assert_eq!(curve.values, vec![0.25, 5.0 / 12.0, 0.5]);
    }

    proptest! {
        #[test]
        fn pass_at_k_monotone(n in 1u64..200, c_frac in 0.0f64..=1.0) {
            let c = (n as f64 * c_frac).floor() as u64;
            let mut prev = 0.0;
            for k in 1..=n {
                let v = pass_at_k(n, c, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v + 1e-15 >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn pass_at_k_monte_carlo() {
        let mut pick = ChaCha8Rng::seed_from_u64(2718);
        for case in 0..20u64 {
            let n = pick.random_range(1..=100u64);
            let c = pick.random_range(0..=n);
            let k = pick.random_range(1..=n);
            let p = pass_at_k(n, c, k).unwrap();
            let trials = 100_000u64;
            let mut rng = ChaCha8Rng::seed_from_u64(case);
            let mut hits = 0u64;
            let mut items: Vec<u64> = (0..n).collect();
            for _ in 0..trials {
                let mut hit = false;
                for i in 0..k as usize {
                    let j = rng.random_range(i..n as usize);
                    items.swap(i, j);
                    hit |= items[i] < c;
                }
                hits += hit as u64;
            }
            let est = hits as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (est - p).abs() <= 3.0 * sigma + 1e-12,
                "n={n} c={c} k={k}: {est} vs {p}"
            );
        }
    }
}
