//! Rank tests, autocorrelation and dispersion measures.
//!
//! Missing observations are passed as `None` and dropped before testing.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} observed points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("series of length {len} too short for lag/period {lag}")]
    SeriesTooShort { len: usize, lag: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series mean is zero")]
    ZeroMean,
}

/// Exact null distribution is used while the smaller sample has at most this
/// many observations.
pub const EXACT_MWU_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample: pairs where it is larger, ties as 0.5.
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

pub fn observed(values: &[Option<f64>]) -> Vec<f64> {
    values.iter().flatten().copied().collect()
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[Option<f64>], b: &[Option<f64>]) -> Result<MannWhitney, StatsError> {
    let (a, b) = (observed(a), observed(b));
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut u2: u64 = 0; // doubled U keeps ties integral
    for x in &a {
        for y in &b {
            u2 += match x.partial_cmp(y) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    let u = u2 as f64 / 2.0;
    let (n1, n2) = (a.len(), b.len());
    if n1.min(n2) <= EXACT_MWU_MAX {
        let p = exact_mwu_p(&a, &b, u2);
        Ok(MannWhitney {
            u,
            p_two_sided: p,
            exact: true,
        })
    } else {
        Ok(MannWhitney {
            u,
            p_two_sided: normal_mwu_p(&a, &b, u),
            exact: false,
        })
    }
}

/// Midranks of the pooled sample, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p from the permutation distribution of the rank sum,
/// tallied by dynamic programming over subsets of the smaller sample size.
fn exact_mwu_p(a: &[f64], b: &[f64], u2_a: u64) -> f64 {
    let (small_is_a, k) = if a.len() <= b.len() {
        (true, a.len())
    } else {
        (false, b.len())
    };
    let (n1, n2) = (a.len() as u64, b.len() as u64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let max_sum: u64 = {
        let mut sorted = ranks.clone();
        sorted.sort_unstable_by(|x, y| y.cmp(x));
        sorted.iter().take(k).sum()
    };
    let width = max_sum as usize + 1;
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0u128; width]; k + 1];
    counts[0][0] = 1;
    for (i, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=k.min(i + 1)).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let (prev, cur) = (&lower[j - 1], &mut upper[0]);
            for s in (0..width.saturating_sub(r)).rev() {
                if prev[s] != 0 {
                    cur[s + r] += prev[s];
                }
            }
        }
    }
    // doubled U of the small sample = doubled rank sum - k(k+1)
    let offset = (k * (k + 1)) as u64;
    let u2_small = if small_is_a { u2_a } else { 2 * n1 * n2 - u2_a };
    let (mut le, mut ge, mut total) = (0u128, 0u128, 0u128);
    for (s, &c) in counts[k].iter().enumerate() {
        if c == 0 {
            continue;
        }
        let u2 = s as u64 - offset;
        total += c;
        if u2 <= u2_small {
            le += c;
        }
        if u2 >= u2_small {
            ge += c;
        }
    }
    let tail = le.min(ge) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

fn normal_mwu_p(a: &[f64], b: &[f64], u: f64) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let tie_term: f64 = tie_groups(&pooled)
        .iter()
        .map(|&t| (t * t * t - t) as f64)
        .sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let mean = n1 * n2 / 2.0;
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    two_sided_normal_p(z)
}

/// Sizes of groups of exactly equal values.
fn tie_groups(values: &[f64]) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push((j - i) as u64);
        i = j;
    }
    groups
}

pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    pub z: f64,
    pub p_two_sided: f64,
}

/// Mann-Kendall monotonic trend test over the observed values in time order.
pub fn mann_kendall(values: &[Option<f64>]) -> Result<MannKendall, StatsError> {
    let x = observed(values);
    let n = x.len();
    if n < 4 {
        return Err(StatsError::TooFewPoints { needed: 4, got: n });
    }
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let ties: f64 = tie_groups(&x)
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        })
        .sum();
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    let z = if variance <= 0.0 || s == 0 {
        0.0
    } else if s > 0 {
        (s - 1) as f64 / variance.sqrt()
    } else {
        (s + 1) as f64 / variance.sqrt()
    };
    Ok(MannKendall {
        s,
        variance,
        z,
        p_two_sided: two_sided_normal_p(z),
    })
}

/// Autocorrelation at `lag` of a gap-free series. Each autocovariance is the
/// mean of its lagged products, so a whole number of periods of a pure
/// sinusoid gives exactly 1 at its period.
pub fn autocorrelation(values: &[f64], lag: usize) -> Result<f64, StatsError> {
    let n = values.len();
    if lag == 0 || n < 2 * lag {
        return Err(StatsError::SeriesTooShort { len: n, lag });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let c0 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if c0 <= (scale * 1e-12).powi(2) {
        return Err(StatsError::ZeroVariance);
    }
    let ck = (0..n - lag)
        .map(|t| (values[t] - mean) * (values[t + lag] - mean))
        .sum::<f64>()
        / (n - lag) as f64;
    Ok((ck / c0).clamp(-1.0, 1.0))
}

/// Sample standard deviation over |mean|.
pub fn coefficient_of_variation(values: &[Option<f64>]) -> Result<f64, StatsError> {
    let x = observed(values);
    if x.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mean.abs() <= scale * 1e-12 {
        return Err(StatsError::ZeroMean);
    }
    if x.len() == 1 {
        return Ok(0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean.abs())
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn mwu_identical_samples() {
        let r = mann_whitney_u(&some(&[1.0, 2.0, 3.0]), &some(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r.u, 4.5);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn mwu_separated_samples() {
        let a = some(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = some(&[11.0, 12.0, 13.0, 14.0, 15.0]);
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u, 0.0);
        // 2 of the C(10,5) = 252 assignments are at least this extreme
        assert!((r.p_two_sided - 2.0 / 252.0).abs() < 1e-12);
        let swapped = mann_whitney_u(&b, &a).unwrap();
        assert_eq!(swapped.u, 25.0);
        assert_eq!(swapped.p_two_sided, r.p_two_sided);
    }

    #[test]
    fn mwu_drops_missing() {
        let with = mann_whitney_u(&[Some(1.0), Some(2.0), None], &some(&[3.0, 4.0])).unwrap();
        let without = mann_whitney_u(&some(&[1.0, 2.0]), &some(&[3.0, 4.0])).unwrap();
        assert_eq!(with, without);
        assert_eq!(
            mann_whitney_u(&[None], &some(&[1.0])),
            Err(StatsError::EmptySample)
        );
    }

    #[test]
    fn mwu_large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..12).map(f64::from).collect();
        let b: Vec<f64> = (6..18).map(f64::from).collect();
        let r = mann_whitney_u(&some(&a), &some(&b)).unwrap();
        assert!(!r.exact);
        // U counts a>b pairs: a in 6..12 against b in 6..12 (15 wins, 6 ties)
        assert_eq!(r.u, 18.0);
        // Hand computation: mean 72, tie-corrected variance 298.695..., z = 3.0953
        let var = 144.0 / 12.0 * (25.0 - 6.0 * 6.0 / (24.0 * 23.0));
        let z = (54.0 - 0.5) / f64::sqrt(var);
        assert!((r.p_two_sided - two_sided_normal_p(z)).abs() < 1e-12);
        // scipy.stats.mannwhitneyu(..., method="asymptotic")
        assert!((r.p_two_sided - 0.001_982_371_359_253_533).abs() < 1e-12);
    }

    #[test]
    fn mk_examples() {
        let inc = some(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(mann_kendall(&inc).unwrap().s, 28);
        let flat = mann_kendall(&some(&[3.0; 10])).unwrap();
        assert_eq!(flat.s, 0);
        assert_eq!(flat.p_two_sided, 1.0);
        assert!(matches!(
            mann_kendall(&some(&[1.0, 2.0, 3.0])),
            Err(StatsError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn mk_reference_series() {
        // Brute force: 45 pairs, discordant (3,2), (6,5), (9,8) -> S = 39.
        // No ties, so variance = 10*9*25/18 = 125 and z = (39 - 1)/sqrt(125).
        // p = 2 * norm.sf(z) = 6.7676e-4 (scipy reference).
        let x = some(&[1.0, 3.0, 2.0, 4.0, 6.0, 5.0, 7.0, 9.0, 8.0, 10.0]);
        let r = mann_kendall(&x).unwrap();
        assert_eq!(r.s, 39);
        assert!((r.variance - 125.0).abs() < 1e-12);
        assert!((r.z - 3.398_823_325_799_68).abs() < 1e-9);
        assert!((r.p_two_sided - 6.767_641_801_210e-4).abs() < 1e-10);
    }

    #[test]
    fn mk_skips_missing() {
        let x = [Some(1.0), None, Some(2.0), Some(3.0), None, Some(4.0)];
        assert_eq!(mann_kendall(&x).unwrap().s, 6);
    }

    #[test]
    fn acf_weekly_sinusoid() {
        let x: Vec<f64> = (0..28)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin())
            .collect();
        assert!((autocorrelation(&x, 7).unwrap() - 1.0).abs() < 0.02);
        assert!(autocorrelation(&x, 3).unwrap() < 0.0);
        assert!(autocorrelation(&x, 4).unwrap() < 0.0);
        assert_eq!(
            autocorrelation(&[5.0; 20], 7),
            Err(StatsError::ZeroVariance)
        );
        assert!(matches!(
            autocorrelation(&x[..10], 7),
            Err(StatsError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&some(&[7.0; 4])).unwrap(), 0.0);
        // mean 7.5, squared deviations 6 * 6.25 = 37.5, sample variance 7.5
        let cv = coefficient_of_variation(&some(&[5.0, 10.0, 5.0, 10.0, 5.0, 10.0])).unwrap();
        assert!((cv - 7.5f64.sqrt() / 7.5).abs() < 1e-12);
        assert_eq!(
            coefficient_of_variation(&some(&[1.0, -1.0])),
            Err(StatsError::ZeroMean)
        );
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
