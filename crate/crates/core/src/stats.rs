//! Rank statistics for possibly right-censored samples, bootstrap
//! confidence intervals, the exact one-sided sign test, chi-square
//! helpers, and least-squares lines. Censored observations are carried as
//! `(value, censored)` pairs and never imputed: a quantile whose rank
//! falls on a censored observation comes back as `f64::INFINITY`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};

/// One hitting-time style observation: the measured value, and whether the
/// run was stopped at that value with the event still pending.
pub type Censored = (f64, bool);

/// Nearest-rank quantile of pre-sorted values: the smallest entry whose
/// rank is at least `p * n`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("quantile needs data and p in [0, 1]".to_string()));
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[idx - 1])
}

/// Nearest-rank quantile of right-censored data. Exact values sort below
/// censored ones; the quantile is `INFINITY` when its rank lands on a
/// censored observation (the order statistic is only known to exceed the
/// cap). Requires every exact value to be at most every censoring cap, so
/// the ranking is unambiguous.
pub fn censored_quantile(obs: &[Censored], p: f64) -> Result<f64> {
    let min_cap =
        obs.iter().filter(|o| o.1).map(|o| o.0).fold(f64::INFINITY, f64::min);
    let mut exact: Vec<f64> = Vec::new();
    for &(v, censored) in obs {
        if !v.is_finite() {
            return Err(Error::invalid("censored data must be finite".to_string()));
        }
        if !censored {
            if v > min_cap {
                return Err(Error::invalid(format!(
                    "exact value {v} exceeds a censoring cap {min_cap}; ranks are ambiguous"
                )));
            }
            exact.push(v);
        }
    }
    if obs.is_empty() || !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("quantile needs data and p in [0, 1]".to_string()));
    }
    let idx = ((p * obs.len() as f64).ceil() as usize).clamp(1, obs.len());
    if idx > exact.len() {
        return Ok(f64::INFINITY);
    }
    exact.sort_by(f64::total_cmp);
    Ok(exact[idx - 1])
}

/// Median / censoring-rate summary of one sample of censored observations.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CensoredSummary {
    pub n: usize,
    pub censor_rate: f64,
    /// Nearest-rank quartiles; `INFINITY` encodes "beyond the cap".
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Bootstrap percentile interval for the median.
    pub ci: (f64, f64),
}

/// Summarize a censored sample: nearest-rank quartiles plus a bootstrap
/// percentile CI for the median (`resamples` draws, seeded).
pub fn censored_summary(
    obs: &[Censored],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<CensoredSummary> {
    let median = censored_quantile(obs, 0.5)?;
    let ci = bootstrap_ci(obs, |s| censored_quantile(s, 0.5).unwrap(), resamples, seed, level)?;
    Ok(CensoredSummary {
        n: obs.len(),
        censor_rate: obs.iter().filter(|o| o.1).count() as f64 / obs.len() as f64,
        q1: censored_quantile(obs, 0.25)?,
        median,
        q3: censored_quantile(obs, 0.75)?,
        ci,
    })
}

/// Percentile bootstrap interval for a statistic: resample with
/// replacement `resamples` times and take the central `level` span of the
/// statistic's empirical distribution. Infinite statistic values are legal
/// (censored medians) and sort above every finite one.
pub fn bootstrap_ci<T: Clone, F: FnMut(&[T]) -> f64>(
    data: &[T],
    mut stat: F,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<(f64, f64)> {
    if data.is_empty() || resamples < 2 || !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(
            "bootstrap needs data, >= 2 resamples and level in (0, 1)".to_string(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut resample = Vec::with_capacity(data.len());
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        resample.clear();
        for _ in 0..data.len() {
            resample.push(data[rng.gen_range(0..data.len())].clone());
        }
        stats.push(stat(&resample));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((nearest_rank(&stats, tail)?, nearest_rank(&stats, 1.0 - tail)?))
}

/// Exact one-sided sign test: probability that a Binomial(n, 1/2) is at
/// least `k`. Ties must be dropped by the caller before counting.
pub fn sign_test_ge(k: u64, n: u64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::invalid(format!("sign test needs 0 <= k <= n, n >= 1; got {k}/{n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let bin = Binomial::new(0.5, n).expect("valid binomial");
    Ok(1.0 - bin.cdf(k - 1))
}

/// Pearson chi-square statistic against expected counts.
pub fn chi_square_stat(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::invalid("chi-square needs matching nonempty counts".to_string()));
    }
    let mut stat = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if !(e > 0.0) {
            return Err(Error::invalid("chi-square expected counts must be positive".to_string()));
        }
        stat += (o - e) * (o - e) / e;
    }
    Ok(stat)
}

/// Chi-square critical value: the `level` quantile with `dof` degrees of
/// freedom.
pub fn chi_square_critical(dof: usize, level: f64) -> Result<f64> {
    if dof == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("need dof >= 1 and level in (0, 1)".to_string()));
    }
    let chi = ChiSquared::new(dof as f64)
        .map_err(|e| Error::invalid(format!("chi-square setup: {e}")))?;
    Ok(chi.inverse_cdf(level))
}

/// Least-squares line through `(x, y)` points: `(slope, intercept)`.
pub fn lsq_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("line fit needs >= 2 paired points".to_string()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("line fit needs at least two distinct x values".to_string()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
