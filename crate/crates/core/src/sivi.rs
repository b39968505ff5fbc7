//! Semi-implicit variational fitting.
//!
//! The variational family is hierarchical: a network maps Gaussian noise to a
//! mixing vector `psi`, and the explicit conditional is
//! `q(theta | psi) = N(psi, diag(scales^2))`. The marginal `q(theta)` is
//! intractable, so each optimization step scores its samples against a
//! `(K+1)`-sample estimate of the marginal density — the sampled conditional
//! mean plus a regenerated bank of `K` auxiliary mixing draws — which yields
//! a lower bound on the ELBO in expectation. Gradients are exact
//! reparameterized gradients of that surrogate, flowing through the
//! conditional samples and through every bank member.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SglmmError};
use crate::model::{Family, ModelSpec, ParamLayout, LN_2PI};
use crate::nn::{clip_global_norm, AdamState, MlpCache, MlpMixer};

/// Per-block standard deviations of the explicit conditional
/// `q(theta | psi) = N(psi, diag(scales^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondScales {
    pub beta: f64,
    pub delta: f64,
    pub log_sigma2: f64,
    pub gamma: f64,
}

impl Default for CondScales {
    fn default() -> Self {
        CondScales { beta: 0.05, delta: 0.05, log_sigma2: 0.05, gamma: 0.05 }
    }
}

impl CondScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("delta", self.delta),
            ("log_sigma2", self.log_sigma2),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SglmmError::InvalidArgument(format!(
                    "conditional scale {name} must be positive and finite (got {v})"
                )));
            }
        }
        Ok(())
    }

    /// Expand the per-block scales into one per packed coordinate.
    pub fn scales_vector(&self, layout: &ParamLayout) -> DVector<f64> {
        let mut s = DVector::zeros(layout.dim());
        for j in 0..layout.p {
            s[j] = self.beta;
        }
        for j in 0..layout.m {
            s[layout.p + j] = self.delta;
        }
        if let Some(idx) = layout.sigma2_index() {
            s[idx] = self.log_sigma2;
        }
        if let Some(idx) = layout.gamma_index() {
            s[idx] = self.gamma;
        }
        s
    }
}

/// Configuration of the semi-implicit variational fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiviConfig {
    /// Conditional samples scored per iteration (J).
    pub j_samples: usize,
    /// Auxiliary mixing samples in the marginal-density bank (K).
    pub k_bank: usize,
    pub max_iters: usize,
    /// Relative-change threshold of the stopping rule.
    pub stop_eps: f64,
    /// Width of each trailing window in the stopping rule.
    pub stop_window: usize,
    /// Input dimension of the mixing network.
    pub noise_dim: usize,
    /// Hidden layer widths of the mixing network.
    pub hidden_dims: Vec<usize>,
    pub cond_scales: CondScales,
    /// Adam learning rate.
    pub lr: f64,
    /// Global-norm gradient clip; triggering is logged.
    pub grad_clip_norm: f64,
    /// When set, the bank grows linearly from this size at iteration 1 to
    /// `k_bank` at `max_iters` instead of staying constant.
    pub k_ramp_start: Option<usize>,
    pub seed: u64,
}

impl Default for SiviConfig {
    fn default() -> Self {
        SiviConfig {
            j_samples: 20,
            k_bank: 1000,
            max_iters: 5000,
            stop_eps: 1e-2,
            stop_window: 50,
            noise_dim: 10,
            hidden_dims: vec![40, 60, 40],
            cond_scales: CondScales::default(),
            lr: 0.001,
            grad_clip_norm: 100.0,
            k_ramp_start: None,
            seed: 0,
        }
    }
}

impl SiviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_samples == 0 {
            return Err(SglmmError::InvalidArgument("sivi.j_samples must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(SglmmError::InvalidArgument("sivi.max_iters must be at least 1".into()));
        }
        if self.stop_window == 0 {
            return Err(SglmmError::InvalidArgument("sivi.stop_window must be at least 1".into()));
        }
        if !(self.stop_eps.is_finite() && self.stop_eps > 0.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "sivi.stop_eps must be positive (got {})",
                self.stop_eps
            )));
        }
        if self.noise_dim == 0 {
            return Err(SglmmError::InvalidArgument("sivi.noise_dim must be at least 1".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(SglmmError::InvalidArgument(
                "sivi.hidden_dims entries must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "sivi.lr must be positive (got {})",
                self.lr
            )));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "sivi.grad_clip_norm must be positive (got {})",
                self.grad_clip_norm
            )));
        }
        if let Some(k0) = self.k_ramp_start {
            if k0 > self.k_bank {
                return Err(SglmmError::InvalidArgument(format!(
                    "sivi.k_ramp_start ({k0}) cannot exceed k_bank ({})",
                    self.k_bank
                )));
            }
        }
        self.cond_scales.validate()
    }

    /// Layer dimensions of the mixing network for a `d_out`-dimensional model.
    pub fn mlp_dims(&self, d_out: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.noise_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(d_out);
        dims
    }

    /// Bank size at a given 1-based iteration under the optional linear ramp.
    pub fn k_at_iteration(&self, iter: usize) -> usize {
        match self.k_ramp_start {
            None => self.k_bank,
            Some(k0) => {
                if self.max_iters <= 1 {
                    return self.k_bank;
                }
                let span = (self.k_bank - k0) as f64;
                let frac = (iter.min(self.max_iters) - 1) as f64 / (self.max_iters - 1) as f64;
                k0 + (span * frac).floor() as usize
            }
        }
    }
}

/// Why the optimization loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The stopping rule fired.
    Converged,
    /// The iteration budget ran out.
    MaxIters,
    /// Three consecutive non-finite surrogate estimates.
    NonFinite,
}

/// Output of a variational fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub net: MlpMixer,
    /// One surrogate-bound estimate per iteration.
    pub elbo_trace: Vec<f64>,
    /// Cumulative seconds elapsed at the end of each iteration.
    pub walltime_trace: Vec<f64>,
    pub iters_run: usize,
    pub stop_reason: StopReason,
    pub walltime_s: f64,
}

/// Posterior parameter draws in packed layout (rows are draws).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub samples: DMatrix<f64>,
    pub family: Family,
    pub layout: ParamLayout,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Packed coordinate names, matching the sample columns.
    pub fn param_names(&self) -> Vec<String> {
        self.layout.names(self.family)
    }
}

fn standard_normal_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draw one mixing vector `psi = net(eps)` with `eps ~ N(0, I)`.
pub fn sample_mixing<R: Rng>(net: &MlpMixer, rng: &mut R) -> Result<DVector<f64>> {
    let eps = standard_normal_vector(net.input_dim(), rng);
    net.forward(&eps)
}

/// Deterministic half of the conditional sampler: `theta = psi + scales .* eps`.
pub fn conditional_from_noise(
    psi: &DVector<f64>,
    scales: &DVector<f64>,
    eps_tilde: &DVector<f64>,
) -> Result<DVector<f64>> {
    if psi.len() != scales.len() || psi.len() != eps_tilde.len() {
        return Err(SglmmError::InvalidArgument(format!(
            "conditional sample dimension mismatch: psi {}, scales {}, noise {}",
            psi.len(),
            scales.len(),
            eps_tilde.len()
        )));
    }
    Ok(DVector::from_fn(psi.len(), |d, _| psi[d] + scales[d] * eps_tilde[d]))
}

/// Reparameterized draw from `q(theta | psi) = N(psi, diag(scales^2))`.
pub fn conditional_sample<R: Rng>(
    psi: &DVector<f64>,
    scales: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let eps_tilde = standard_normal_vector(psi.len(), rng);
    conditional_from_noise(psi, scales, &eps_tilde)
}

/// Exact log density of the diagonal-Gaussian conditional.
///
/// Each coordinate is evaluated as
/// `-0.5 * (ln 2 pi + ln s_d^2) - 0.5 * diff * diff / s_d^2` — the same
/// floating-point expression the model uses for its Gaussian prior terms, so
/// matched configurations cancel bit-exactly.
pub fn conditional_log_density(
    theta: &DVector<f64>,
    psi: &DVector<f64>,
    scales: &DVector<f64>,
) -> Result<f64> {
    if theta.len() != psi.len() || theta.len() != scales.len() {
        return Err(SglmmError::InvalidArgument(format!(
            "conditional density dimension mismatch: theta {}, psi {}, scales {}",
            theta.len(),
            psi.len(),
            scales.len()
        )));
    }
    let mut acc = 0.0;
    for d in 0..theta.len() {
        let s = scales[d];
        if !(s.is_finite() && s > 0.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "conditional scale {d} must be positive (got {s})"
            )));
        }
        let var = s * s;
        let diff = theta[d] - psi[d];
        acc += -0.5 * (LN_2PI + var.ln()) - 0.5 * diff * diff / var;
    }
    Ok(acc)
}

/// Log of the mean of exponentials plus the softmax weights.
///
/// Computed as `max + ln(sum(exp(v - max)) / len)` so that a slice of equal
/// values returns that value exactly.
fn log_mean_exp_weights(vals: &[f64]) -> (f64, Vec<f64>) {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (max, vec![f64::NAN; vals.len()]);
    }
    let mut w: Vec<f64> = vals.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for e in w.iter_mut() {
        *e /= sum;
    }
    (max + (sum / vals.len() as f64).ln(), w)
}

/// `(K+1)`-sample log-marginal estimate: the log of the average conditional
/// density of `theta` under the bank members and under its own mixing draw.
pub fn kplus1_log_marginal(
    theta: &DVector<f64>,
    psi_self: &DVector<f64>,
    psi_bank: &[DVector<f64>],
    scales: &DVector<f64>,
) -> Result<f64> {
    let mut ells = Vec::with_capacity(psi_bank.len() + 1);
    for psi in psi_bank {
        ells.push(conditional_log_density(theta, psi, scales)?);
    }
    ells.push(conditional_log_density(theta, psi_self, scales)?);
    let (lme, _) = log_mean_exp_weights(&ells);
    Ok(lme)
}

/// One Monte Carlo estimate of the surrogate bound and its gradient.
struct IterationEstimate {
    elbo: f64,
    grad: DVector<f64>,
    /// First conditional sample whose contribution was non-finite.
    first_bad: Option<(usize, DVector<f64>)>,
}

/// Core per-iteration computation shared by `fit_sivi` and the public
/// one-shot estimator.
///
/// Noise is consumed in a fixed order — all bank inputs, then per conditional
/// sample its mixing input followed by its conditional noise — which makes
/// every estimate a pure function of the generator state.
fn estimate_iteration(
    net: &MlpMixer,
    model: &ModelSpec,
    scales: &DVector<f64>,
    j_samples: usize,
    k_bank: usize,
    rng: &mut ChaCha8Rng,
) -> Result<IterationEstimate> {
    let d = model.dim();
    let noise_dim = net.input_dim();

    let bank_eps: Vec<DVector<f64>> =
        (0..k_bank).map(|_| standard_normal_vector(noise_dim, rng)).collect();
    let mut mix_eps = Vec::with_capacity(j_samples);
    let mut cond_eps = Vec::with_capacity(j_samples);
    for _ in 0..j_samples {
        mix_eps.push(standard_normal_vector(noise_dim, rng));
        cond_eps.push(standard_normal_vector(d, rng));
    }

    let bank_caches: Vec<MlpCache> = bank_eps
        .iter()
        .map(|e| net.forward_cached(e))
        .collect::<Result<_>>()?;

    // Shared pieces of the conditional log density. The quadratic term keeps
    // the same expression shape as `conditional_log_density` (division by the
    // variance) so matched prior/variational setups cancel bit-exactly; the
    // gradient pulls may use the cheaper reciprocal.
    let mut var = DVector::zeros(d);
    let mut coord_norm = DVector::zeros(d);
    let mut inv_var = DVector::zeros(d);
    for k in 0..d {
        var[k] = scales[k] * scales[k];
        coord_norm[k] = -0.5 * (LN_2PI + var[k].ln());
        inv_var[k] = 1.0 / var[k];
    }
    let jf = j_samples as f64;

    let mut grad = DVector::zeros(net.n_params());
    let mut bank_upstream: Vec<DVector<f64>> = vec![DVector::zeros(d); k_bank];
    let mut elbo = 0.0;
    let mut first_bad: Option<(usize, DVector<f64>)> = None;

    for j in 0..j_samples {
        let cache_j = net.forward_cached(&mix_eps[j])?;
        let theta = {
            let psi_j = cache_j.output();
            DVector::from_fn(d, |k, _| psi_j[k] + scales[k] * cond_eps[j][k])
        };

        let log_joint = model.log_joint(&theta);
        let grad_log_joint = model.grad_log_joint(&theta);

        // Conditional log densities against the bank and against psi_j itself.
        let mut ells = Vec::with_capacity(k_bank + 1);
        for cache_k in &bank_caches {
            let psi_k = cache_k.output();
            let mut ell = 0.0;
            for dd in 0..d {
                let diff = theta[dd] - psi_k[dd];
                ell += coord_norm[dd] - 0.5 * diff * diff / var[dd];
            }
            ells.push(ell);
        }
        {
            let psi_j = cache_j.output();
            let mut ell = 0.0;
            for dd in 0..d {
                let diff = theta[dd] - psi_j[dd];
                ell += coord_norm[dd] - 0.5 * diff * diff / var[dd];
            }
            ells.push(ell);
        }
        let (log_h, weights) = log_mean_exp_weights(&ells);

        let term = log_joint - log_h;
        elbo += term / jf;
        if !term.is_finite() && first_bad.is_none() {
            first_bad = Some((j, theta.clone()));
        }

        // Upstream gradient on psi_j. Differentiating the surrogate through
        // theta = psi_j + scales .* eps and through the self term of the
        // marginal estimate cancels the self term exactly, leaving the joint
        // gradient plus the bank-weighted pull toward theta.
        let mut up = DVector::zeros(d);
        for dd in 0..d {
            up[dd] = grad_log_joint[dd] / jf;
        }
        for (k, cache_k) in bank_caches.iter().enumerate() {
            let psi_k = cache_k.output();
            let w = weights[k];
            for dd in 0..d {
                let pull = (theta[dd] - psi_k[dd]) * inv_var[dd];
                up[dd] += w * pull / jf;
                // Each bank member is itself a function of the network, so it
                // receives the mirrored pull.
                bank_upstream[k][dd] -= w * pull / jf;
            }
        }
        net.backward_acc(&cache_j, &up, &mut grad)?;
    }

    for (cache_k, up_k) in bank_caches.iter().zip(bank_upstream.iter()) {
        net.backward_acc(cache_k, up_k, &mut grad)?;
    }

    Ok(IterationEstimate { elbo, grad, first_bad })
}

/// One Monte Carlo estimate of the surrogate lower bound and its gradient
/// with respect to the network parameters. Errors when the estimate is
/// non-finite, reporting the offending parameter draw.
pub fn surrogate_elbo_and_grad(
    net: &MlpMixer,
    config: &SiviConfig,
    model: &ModelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, DVector<f64>)> {
    config.validate()?;
    check_net_dims(net, config, model)?;
    let scales = config.cond_scales.scales_vector(&model.layout);
    let est = estimate_iteration(net, model, &scales, config.j_samples, config.k_bank, rng)?;
    if !est.elbo.is_finite() {
        let theta_desc = est
            .first_bad
            .map(|(j, theta)| format!("sample {j}, theta {}", preview_vector(&theta)))
            .unwrap_or_else(|| "no single offending sample".into());
        return Err(SglmmError::Numerical(format!(
            "surrogate bound estimate is non-finite ({theta_desc})"
        )));
    }
    Ok((est.elbo, est.grad))
}

fn preview_vector(v: &DVector<f64>) -> String {
    const SHOW: usize = 16;
    let head: Vec<String> = v.iter().take(SHOW).map(|x| format!("{x:.6e}")).collect();
    if v.len() > SHOW {
        format!("[{}, ... {} more]", head.join(", "), v.len() - SHOW)
    } else {
        format!("[{}]", head.join(", "))
    }
}

fn check_net_dims(net: &MlpMixer, config: &SiviConfig, model: &ModelSpec) -> Result<()> {
    if net.input_dim() != config.noise_dim {
        return Err(SglmmError::InvalidArgument(format!(
            "network input dimension {} does not match noise_dim {}",
            net.input_dim(),
            config.noise_dim
        )));
    }
    if net.output_dim() != model.dim() {
        return Err(SglmmError::InvalidArgument(format!(
            "network output dimension {} does not match model dimension {}",
            net.output_dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Fit the variational family with a freshly initialized mixing network.
pub fn fit_sivi(model: &ModelSpec, config: &SiviConfig) -> Result<FitResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = MlpMixer::init(&config.mlp_dims(model.dim()), &mut rng)?;
    fit_sivi_with(model, config, net, rng)
}

/// Fit starting from an existing network (e.g. a checkpoint). The generator
/// seed still comes from the config, but no initialization draws are made.
pub fn fit_sivi_from(model: &ModelSpec, config: &SiviConfig, net: MlpMixer) -> Result<FitResult> {
    config.validate()?;
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    fit_sivi_with(model, config, net, rng)
}

fn fit_sivi_with(
    model: &ModelSpec,
    config: &SiviConfig,
    mut net: MlpMixer,
    mut rng: ChaCha8Rng,
) -> Result<FitResult> {
    check_net_dims(&net, config, model)?;
    let start = Instant::now();
    let scales = config.cond_scales.scales_vector(&model.layout);
    let mut adam = AdamState::new(net.n_params(), config.lr);
    let mut elbo_trace = Vec::with_capacity(config.max_iters);
    let mut walltime_trace = Vec::with_capacity(config.max_iters);
    let mut consecutive_bad = 0usize;
    let mut stop_reason = StopReason::MaxIters;
    let w = config.stop_window;

    for iter in 1..=config.max_iters {
        let k_t = config.k_at_iteration(iter);
        let est = estimate_iteration(&net, model, &scales, config.j_samples, k_t, &mut rng)?;

        let finite = est.elbo.is_finite() && est.grad.iter().all(|g| g.is_finite());
        elbo_trace.push(est.elbo);
        walltime_trace.push(start.elapsed().as_secs_f64());

        if finite {
            consecutive_bad = 0;
            let mut grad = est.grad;
            if let Some(pre) = clip_global_norm(&mut grad, config.grad_clip_norm) {
                log::warn!(
                    "iteration {iter}: clipped gradient norm {pre:.3e} to {:.1}",
                    config.grad_clip_norm
                );
            }
            adam.step_ascend(net.params_mut(), &grad)?;
        } else {
            consecutive_bad += 1;
            log::warn!(
                "iteration {iter}: non-finite surrogate estimate ({consecutive_bad} in a row); skipping update"
            );
            if consecutive_bad >= 3 {
                stop_reason = StopReason::NonFinite;
                break;
            }
        }

        // Stopping rule: relative change between two consecutive trailing
        // windows of the trace.
        let t = elbo_trace.len();
        if t >= 2 * w {
            let recent: f64 = elbo_trace[t - w..].iter().sum::<f64>() / w as f64;
            let previous: f64 = elbo_trace[t - 2 * w..t - w].iter().sum::<f64>() / w as f64;
            let rel = (recent - previous).abs() / (previous.abs() + 1e-12);
            if rel < config.stop_eps {
                stop_reason = StopReason::Converged;
                break;
            }
        }
    }

    Ok(FitResult {
        iters_run: elbo_trace.len(),
        walltime_s: start.elapsed().as_secs_f64(),
        net,
        elbo_trace,
        walltime_trace,
        stop_reason,
    })
}

/// Draw `n_draws` posterior samples from a fitted variational family:
/// `psi_s = net(eps_s)`, `theta_s = psi_s + scales .* eps_tilde_s`.
pub fn draw_posterior<R: Rng>(
    fit: &FitResult,
    config: &SiviConfig,
    model: &ModelSpec,
    n_draws: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    if n_draws == 0 {
        return Err(SglmmError::InvalidArgument("need at least one posterior draw".into()));
    }
    let scales = config.cond_scales.scales_vector(&model.layout);
    let d = model.dim();
    let mut samples = DMatrix::zeros(n_draws, d);
    for s in 0..n_draws {
        let psi = sample_mixing(&fit.net, rng)?;
        let theta = conditional_sample(&psi, &scales, rng)?;
        for k in 0..d {
            if !theta[k].is_finite() {
                return Err(SglmmError::Numerical(format!(
                    "posterior draw {s} has non-finite coordinate {k}"
                )));
            }
            samples[(s, k)] = theta[k];
        }
    }
    Ok(PosteriorDraws { samples, family: model.family, layout: model.layout })
}
