//! Chain diagnostics: effective sample size and batch-means standard errors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SglmmError};

/// Per-coordinate effective sample size of a chain (one draw per row).
///
/// Uses the initial-monotone-positive-sequence estimator: empirical
/// autocovariances are summed in adjacent pairs, the sum is truncated at the
/// first non-positive pair, the pair sums are made non-increasing, and the
/// integrated autocorrelation time is `tau = -1 + 2 * sum(pairs) / gamma_0`.
/// The result is clamped to `[1, N]`; an exactly constant column returns 1.
///
/// Requires at least 10 draws.
pub fn ess(samples: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = samples.nrows();
    if n < 10 {
        return Err(SglmmError::InvalidArgument(format!(
            "ess requires at least 10 draws (got {n})"
        )));
    }
    let mut out = DVector::zeros(samples.ncols());
    let mut centered = vec![0.0f64; n];
    for c in 0..samples.ncols() {
        let col = samples.column(c);
        let mean = col.mean();
        for t in 0..n {
            centered[t] = col[t] - mean;
        }
        out[c] = ess_centered(&centered);
    }
    Ok(out)
}

/// ESS of a single demeaned series.
fn ess_centered(y: &[f64]) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let autocov = |k: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - k {
            acc += y[t] * y[t + k];
        }
        acc / nf
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        // Constant (or numerically constant) chain: one effective draw.
        return 1.0;
    }
    // Sum adjacent-lag pairs while they stay positive, enforcing monotonicity.
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0usize;
    while k + 1 < n {
        let pair = autocov(k) + autocov(k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        pair_sum += pair;
        prev_pair = pair;
        k += 2;
    }
    let tau = -1.0 + 2.0 * pair_sum / gamma0;
    (nf / tau.max(1e-12)).clamp(1.0, nf)
}

/// Monte Carlo standard error of the chain mean by non-overlapping batch
/// means with `floor(sqrt(N))`-sized batches.
///
/// The first `nb * b` draws are split into `nb = N / b` batches of length
/// `b = floor(sqrt(N))`; the standard error is the sample standard deviation
/// of the batch means divided by `sqrt(nb)`. Requires at least 100 draws.
pub fn batch_means_se(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < 100 {
        return Err(SglmmError::InvalidArgument(format!(
            "batch_means_se requires at least 100 draws (got {n})"
        )));
    }
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    let mut means = Vec::with_capacity(nb);
    for i in 0..nb {
        let mut acc = 0.0;
        for t in i * b..(i + 1) * b {
            acc += draws[t];
        }
        means.push(acc / b as f64);
    }
    let grand = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (nb as f64 - 1.0);
    Ok((var / nb as f64).sqrt())
}
