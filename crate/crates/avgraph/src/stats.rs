//! Ensemble statistics: means with standard errors, Kolmogorov-Smirnov
//! distances, and small helpers shared by the verification drivers.
//!
//! Sums are accumulated pairwise in a fixed order so that every statistic is
//! independent of how the ensemble was scheduled across threads.

use crate::linalg::pairwise_sum;

/// Sample mean and standard error of the mean (unbiased variance).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 0, "mean of an empty sample");
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of an empirical frequency.
pub fn binomial_se(p_hat: f64, n: usize) -> f64 {
    assert!(n > 0);
    (p_hat.clamp(0.0, 1.0) * (1.0 - p_hat.clamp(0.0, 1.0)) / n as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d = 0.0f64;
    while ia < sa.len() && ib < sb.len() {
        let x = sa[ia].min(sb[ib]);
        while ia < sa.len() && sa[ia] <= x {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= x {
            ib += 1;
        }
        d = d.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!xs.is_empty(), "KS needs a nonempty sample");
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (k, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - k as f64 / n).abs());
        d = d.max(((k + 1) as f64 / n - f).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `Q(lambda) = 2 sum (-1)^{k-1}
/// exp(-2 k^2 lambda^2)` evaluated at `lambda = d * (sqrt(ne) + 0.12 +
/// 0.11 / sqrt(ne))` with the usual effective-size correction.
pub fn kolmogorov_pvalue(d: f64, n_effective: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let sqrt_ne = n_effective.sqrt();
    let lambda = d * (sqrt_ne + 0.12 + 0.11 / sqrt_ne);
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Effective sample size of the two-sample KS comparison.
pub fn ks_effective_size(na: usize, nb: usize) -> f64 {
    (na as f64 * nb as f64) / (na as f64 + nb as f64)
}

/// Least-squares slope of `ys` against `xs`; `None` with fewer than two
/// distinct abscissas.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_of_a_simple_sample() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // Variance 5/3, SE = sqrt(5/12).
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_sample_ks_on_disjoint_supports_is_one() {
        let a = [1.0, 2.0, 3.0];
        let b = [10.0, 11.0];
        assert!((ks_two_sample(&a, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_sample_ks_on_identical_samples_is_zero() {
        let a = [0.3, 0.7, 1.5, 2.2];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn one_sample_ks_against_the_true_cdf_is_small_for_uniform_grid() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5e-3 + 1e-12, "d={d}");
    }

    #[test]
    fn kolmogorov_tail_is_monotone_and_normalized() {
        let p_small = kolmogorov_pvalue(0.01, 100.0);
        let p_large = kolmogorov_pvalue(0.5, 100.0);
        assert!(p_small > 0.99);
        assert!(p_large < 1e-4);
        assert!(p_small >= p_large);
    }

    #[test]
    fn slope_of_an_exact_line_is_recovered() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let s = ls_slope(&xs, &ys).unwrap();
        assert!((s + 2.0).abs() < 1e-12);
        assert_eq!(ls_slope(&[1.0], &[2.0]), None);
        assert_eq!(ls_slope(&[1.0, 1.0], &[2.0, 3.0]), None);
    }
}
