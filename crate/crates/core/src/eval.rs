//! Held-out prediction and evaluation metrics: posterior predictive means on
//! the response scale, RMSPE, AUC, and posterior summaries (moments,
//! quantiles, histogram grids) ready for CSV emission.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SglmmError};
use crate::model::{sigmoid, Family};
use crate::sivi::PosteriorDraws;

/// Predictions at held-out locations.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    /// Per-location predictive mean on the response scale: the posterior
    /// mean over draws of the inverse-link-transformed linear predictor.
    pub point_pred: DVector<f64>,
    /// Per-draw conditional means (S x n_test), kept only on request.
    pub pred_draws: Option<DMatrix<f64>>,
}

/// Moments and quantiles of one packed parameter.
#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Fixed-width histogram of one parameter's draws; `edges` has one more
/// entry than `masses` and the masses sum to 1.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub name: String,
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Per-parameter summaries and density grids of a draw matrix.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    pub histograms: Vec<Histogram>,
}

/// Inverse link on the linear-predictor scale for each family.
fn inverse_link(family: Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian => eta,
        Family::Bernoulli => sigmoid(eta),
        Family::Poisson | Family::Negbin | Family::Gamma => eta.exp(),
    }
}

/// Posterior predictive means at test locations.
///
/// For each draw s the conditional mean is `g^{-1}(X_test beta_s +
/// Phi_test delta_s)`; the point prediction is the average of those means
/// over draws (the posterior mean of the conditional mean, not the inverse
/// link of the averaged linear predictor). Set `keep_draws` to also return
/// the full S x n_test matrix of per-draw means.
pub fn predict(
    draws: &PosteriorDraws,
    x_test: &DMatrix<f64>,
    phi_test: &DMatrix<f64>,
    keep_draws: bool,
) -> Result<PredictionSet> {
    let p = draws.layout.p;
    let m = draws.layout.m;
    let n_test = x_test.nrows();
    if x_test.ncols() != p {
        return Err(SglmmError::InvalidArgument(format!(
            "x_test has {} columns, model has p = {p}",
            x_test.ncols()
        )));
    }
    if phi_test.ncols() != m {
        return Err(SglmmError::InvalidArgument(format!(
            "phi_test has {} columns, model has m = {m}",
            phi_test.ncols()
        )));
    }
    if phi_test.nrows() != n_test {
        return Err(SglmmError::InvalidArgument(format!(
            "x_test has {n_test} rows but phi_test has {}",
            phi_test.nrows()
        )));
    }
    let s = draws.n_draws();
    if s == 0 {
        return Err(SglmmError::InvalidArgument("predict requires at least one draw".into()));
    }

    let mut point = DVector::zeros(n_test);
    let mut per_draw = keep_draws.then(|| DMatrix::zeros(s, n_test));
    let mut eta = DVector::zeros(n_test);
    let mut beta = DVector::zeros(p);
    let mut delta = DVector::zeros(m);
    for si in 0..s {
        for j in 0..p {
            beta[j] = draws.samples[(si, j)];
        }
        for j in 0..m {
            delta[j] = draws.samples[(si, p + j)];
        }
        eta.gemv(1.0, x_test, &beta, 0.0);
        eta.gemv(1.0, phi_test, &delta, 1.0);
        for i in 0..n_test {
            let mu = inverse_link(draws.family, eta[i]);
            point[i] += mu;
            if let Some(pd) = per_draw.as_mut() {
                pd[(si, i)] = mu;
            }
        }
    }
    point /= s as f64;
    Ok(PredictionSet { point_pred: point, pred_draws: per_draw })
}

/// Root mean squared prediction error.
pub fn rmspe(z_true: &DVector<f64>, z_pred: &DVector<f64>) -> Result<f64> {
    if z_true.is_empty() {
        return Err(SglmmError::InvalidArgument("rmspe requires at least one value".into()));
    }
    if z_true.len() != z_pred.len() {
        return Err(SglmmError::InvalidArgument(format!(
            "rmspe length mismatch: {} vs {}",
            z_true.len(),
            z_pred.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..z_true.len() {
        let r = z_true[i] - z_pred[i];
        acc += r * r;
    }
    Ok((acc / z_true.len() as f64).sqrt())
}

/// Area under the ROC curve, Mann-Whitney form with half credit for ties
/// (computed via average ranks).
///
/// `z_true` must be 0/1 with both classes present.
pub fn auc(z_true: &DVector<f64>, scores: &DVector<f64>) -> Result<f64> {
    if z_true.len() != scores.len() {
        return Err(SglmmError::InvalidArgument(format!(
            "auc length mismatch: {} vs {}",
            z_true.len(),
            scores.len()
        )));
    }
    if z_true.iter().any(|&z| z != 0.0 && z != 1.0) {
        return Err(SglmmError::InvalidData("auc labels must be 0 or 1".into()));
    }
    let n_pos = z_true.iter().filter(|&&z| z == 1.0).count();
    let n_neg = z_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SglmmError::InvalidData(
            "auc requires both classes present in the labels".into(),
        ));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(SglmmError::InvalidData("auc scores must not be NaN".into()));
    }

    // Average ranks over the pooled scores (ties share their rank range's
    // midpoint), then the rank-sum identity for the U statistic.
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midpoint.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 =
        (0..n).filter(|&k| z_true[k] == 1.0).map(|k| ranks[k]).sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Type-7 quantile (linear interpolation of order statistics) of a sorted
/// ascending slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Summarize a draw matrix with 50-bin histograms.
pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    summarize_with_bins(draws, 50)
}

/// Per-parameter mean, sample sd, type-7 quantiles (2.5/50/97.5%), and a
/// fixed-width histogram over each parameter's draw range whose masses sum
/// to 1. Requires at least 10 draws.
pub fn summarize_with_bins(draws: &PosteriorDraws, bins: usize) -> Result<PosteriorSummary> {
    let s = draws.n_draws();
    if s < 10 {
        return Err(SglmmError::InvalidArgument(format!(
            "summarize requires at least 10 draws (got {s})"
        )));
    }
    if bins == 0 {
        return Err(SglmmError::InvalidArgument("summarize requires at least one bin".into()));
    }
    let names = draws.param_names();
    let mut params = Vec::with_capacity(draws.dim());
    let mut histograms = Vec::with_capacity(draws.dim());
    for d in 0..draws.dim() {
        let col = draws.samples.column(d);
        let mean = col.mean();
        let sd = (col.map(|v| (v - mean) * (v - mean)).sum() / (s as f64 - 1.0)).sqrt();
        let mut sorted: Vec<f64> = col.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        params.push(ParamSummary {
            name: names[d].clone(),
            mean,
            sd,
            q025: quantile_sorted(&sorted, 0.025),
            q50: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        });

        let (mut lo, mut hi) = (sorted[0], sorted[s - 1]);
        if lo == hi {
            // Degenerate range: pad so the single spike still gets a bin.
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut edges = Vec::with_capacity(bins + 1);
        for b in 0..=bins {
            edges.push(lo + b as f64 * width);
        }
        edges[bins] = hi;
        let mut masses = vec![0.0f64; bins];
        let w = 1.0 / s as f64;
        for &v in &sorted {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            masses[idx] += w;
        }
        histograms.push(Histogram { name: names[d].clone(), edges, masses });
    }
    Ok(PosteriorSummary { params, histograms })
}
