//! Generalized linear mixed model over a basis-expanded spatial field.
//!
//! The linear predictor is `eta = X beta + Phi delta` where `Phi` holds
//! spatial basis functions. The hierarchy places independent Gaussian priors
//! on `beta`, a `N(0, sigma^2 Sigma_delta)` prior on `delta`, a Gaussian
//! prior on `log sigma^2`, and a family-specific prior on the extra response
//! parameter (observation variance, dispersion, or shape), which is always
//! handled on its unconstrained log scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Result, SglmmError};
use crate::spatial::{BasisSystem, SpatialDataset};

/// ln(2 pi), used by every Gaussian density in the model.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Response family of the observation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Identity link, Gaussian noise with variance tau^2.
    Gaussian,
    /// Log link, Poisson counts.
    Poisson,
    /// Logit link, binary responses.
    Bernoulli,
    /// Log link, negative binomial counts with dispersion kappa (NB2).
    Negbin,
    /// Log link, Gamma responses with shape alpha and mean exp(eta).
    Gamma,
}

impl Family {
    /// Short lowercase name used in configs and output files.
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::Negbin => "negbin",
            Family::Gamma => "gamma",
        }
    }

    /// Parse a family name as written in configs.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            "bernoulli" => Ok(Family::Bernoulli),
            "negbin" => Ok(Family::Negbin),
            "gamma" => Ok(Family::Gamma),
            other => Err(SglmmError::InvalidArgument(format!(
                "unknown family '{other}' (expected gaussian|poisson|bernoulli|negbin|gamma)"
            ))),
        }
    }

    /// Whether the family carries an extra response parameter beyond `eta`.
    pub fn has_extra_param(self) -> bool {
        !matches!(self, Family::Poisson | Family::Bernoulli)
    }

    /// Name of the transformed extra parameter as it appears in parameter
    /// vectors and output headers.
    pub fn extra_param_name(self) -> Option<&'static str> {
        match self {
            Family::Gaussian => Some("log_tau2"),
            Family::Negbin => Some("log_kappa"),
            Family::Gamma => Some("log_alpha"),
            _ => None,
        }
    }

    /// Generative default for the extra parameter (natural scale) used by
    /// synthetic scenarios: tau^2 = 1, kappa = 2, alpha = 2.
    pub fn default_extra_param(self) -> Option<f64> {
        match self {
            Family::Gaussian => Some(1.0),
            Family::Negbin => Some(2.0),
            Family::Gamma => Some(2.0),
            _ => None,
        }
    }

    /// Inverse link: the response mean as a function of the linear predictor.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Bernoulli => sigmoid(eta),
            _ => eta.exp(),
        }
    }

    /// Check a single response value against the family's support.
    pub fn validate_response(self, z: f64) -> std::result::Result<(), &'static str> {
        if !z.is_finite() {
            return Err("response is not finite");
        }
        match self {
            Family::Gaussian => Ok(()),
            Family::Bernoulli => {
                if z == 0.0 || z == 1.0 {
                    Ok(())
                } else {
                    Err("bernoulli responses must be 0 or 1")
                }
            }
            Family::Poisson | Family::Negbin => {
                if z >= 0.0 && z.fract() == 0.0 {
                    Ok(())
                } else {
                    Err("count responses must be non-negative integers")
                }
            }
            Family::Gamma => {
                if z > 0.0 {
                    Ok(())
                } else {
                    Err("gamma responses must be strictly positive")
                }
            }
        }
    }

    /// Draw one response given the linear predictor and the extra parameter
    /// on its natural scale (ignored by Poisson/Bernoulli).
    pub fn sample_response<R: Rng>(self, eta: f64, extra: Option<f64>, rng: &mut R) -> Result<f64> {
        match self {
            Family::Gaussian => {
                let tau2 = extra.unwrap_or(1.0);
                let e: f64 = rng.sample(StandardNormal);
                Ok(eta + tau2.sqrt() * e)
            }
            Family::Poisson => sample_poisson(eta.exp(), rng),
            Family::Bernoulli => {
                let u: f64 = rng.random();
                Ok(if u < sigmoid(eta) { 1.0 } else { 0.0 })
            }
            Family::Negbin => {
                // Gamma-Poisson mixture: lambda ~ Gamma(kappa, mu/kappa), Z ~ Poisson(lambda).
                let kappa = extra.unwrap_or(2.0);
                let mu = eta.exp();
                if mu == 0.0 {
                    return Ok(0.0);
                }
                let g = GammaDist::new(kappa, mu / kappa).map_err(|e| {
                    SglmmError::InvalidArgument(format!("negbin mixing draw: {e}"))
                })?;
                sample_poisson(g.sample(rng), rng)
            }
            Family::Gamma => {
                let alpha = extra.unwrap_or(2.0);
                let mu = eta.exp();
                let g = GammaDist::new(alpha, mu / alpha).map_err(|e| {
                    SglmmError::InvalidArgument(format!("gamma response draw: {e}"))
                })?;
                Ok(g.sample(rng))
            }
        }
    }
}

fn sample_poisson<R: Rng>(lambda: f64, rng: &mut R) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let d = Poisson::new(lambda)
        .map_err(|e| SglmmError::Numerical(format!("poisson draw with rate {lambda}: {e}")))?;
    let z: f64 = d.sample(rng);
    Ok(z)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Status of a variance-type parameter inside the packed vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Slot {
    /// Part of theta; occupies one packed coordinate.
    Free,
    /// Held at a constant (stored on the transformed scale); not in theta.
    Fixed(f64),
    /// Does not exist for this family.
    Absent,
}

impl Slot {
    fn is_free(self) -> bool {
        matches!(self, Slot::Free)
    }
}

/// Describes how model parameters map onto a flat vector.
///
/// Packing order is `(beta_1..beta_p, delta_1..delta_m, log sigma^2, [gamma])`;
/// fixed or absent slots are skipped, so the packed dimension is
/// `p + m + 1 + 1` in the default all-free configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub p: usize,
    pub m: usize,
    pub sigma2: Slot,
    pub gamma: Slot,
}

impl ParamLayout {
    /// Number of packed (free) coordinates.
    pub fn dim(&self) -> usize {
        self.p
            + self.m
            + usize::from(self.sigma2.is_free())
            + usize::from(self.gamma.is_free())
    }

    /// Packed index of `log sigma^2`, when free.
    pub fn sigma2_index(&self) -> Option<usize> {
        self.sigma2.is_free().then_some(self.p + self.m)
    }

    /// Packed index of the transformed extra parameter, when free.
    pub fn gamma_index(&self) -> Option<usize> {
        self.gamma
            .is_free()
            .then_some(self.p + self.m + usize::from(self.sigma2.is_free()))
    }

    /// Column names for chain/draws files, in packing order.
    pub fn names(&self, family: Family) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for j in 0..self.p {
            out.push(format!("beta_{}", j + 1));
        }
        for j in 0..self.m {
            out.push(format!("delta_{}", j + 1));
        }
        if self.sigma2.is_free() {
            out.push("log_sigma2".to_string());
        }
        if self.gamma.is_free() {
            out.push(family.extra_param_name().expect("free gamma requires an extra-parameter family").to_string());
        }
        out
    }
}

/// Structured view of the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub log_sigma2: f64,
    /// Transformed extra parameter (log tau^2 / log kappa / log alpha).
    pub gamma_t: Option<f64>,
}

impl ParameterVector {
    /// Flatten into packing order, skipping fixed/absent slots.
    pub fn pack(&self, layout: &ParamLayout) -> Result<DVector<f64>> {
        if self.beta.len() != layout.p || self.delta.len() != layout.m {
            return Err(SglmmError::InvalidArgument(format!(
                "pack: got beta len {} / delta len {}, layout expects {} / {}",
                self.beta.len(),
                self.delta.len(),
                layout.p,
                layout.m
            )));
        }
        if layout.gamma.is_free() && self.gamma_t.is_none() {
            return Err(SglmmError::InvalidArgument(
                "pack: layout has a free extra parameter but gamma_t is None".into(),
            ));
        }
        let mut flat = DVector::zeros(layout.dim());
        let mut k = 0;
        for j in 0..layout.p {
            flat[k] = self.beta[j];
            k += 1;
        }
        for j in 0..layout.m {
            flat[k] = self.delta[j];
            k += 1;
        }
        if layout.sigma2.is_free() {
            flat[k] = self.log_sigma2;
            k += 1;
        }
        if layout.gamma.is_free() {
            flat[k] = self.gamma_t.unwrap();
        }
        Ok(flat)
    }

    /// Rebuild the structured view from a flat vector; fixed slots are filled
    /// from the layout's stored constants.
    pub fn unpack(flat: &DVector<f64>, layout: &ParamLayout) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(SglmmError::InvalidArgument(format!(
                "unpack: flat vector has length {}, layout dimension is {}",
                flat.len(),
                layout.dim()
            )));
        }
        let beta = DVector::from_fn(layout.p, |j, _| flat[j]);
        let delta = DVector::from_fn(layout.m, |j, _| flat[layout.p + j]);
        let log_sigma2 = match layout.sigma2 {
            Slot::Free => flat[layout.sigma2_index().unwrap()],
            Slot::Fixed(v) => v,
            Slot::Absent => {
                return Err(SglmmError::InvalidArgument(
                    "layout marks sigma2 absent, which is not supported".into(),
                ))
            }
        };
        let gamma_t = match layout.gamma {
            Slot::Free => Some(flat[layout.gamma_index().unwrap()]),
            Slot::Fixed(v) => Some(v),
            Slot::Absent => None,
        };
        Ok(ParameterVector { beta, delta, log_sigma2, gamma_t })
    }
}

/// Prior hyperparameters for the full hierarchy.
///
/// The extra-parameter priors are per-family: `tau_*` (Gaussian, on
/// log tau^2), `kappa_*` (negbin, Gamma on kappa itself), `alpha_*`
/// (gamma, on log alpha). Absent entries are a construction error for the
/// families that need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta_mean: DVector<f64>,
    pub beta_var: DVector<f64>,
    /// Mean of the Gaussian prior on log sigma^2.
    pub sigma_mean: f64,
    /// Variance of the Gaussian prior on log sigma^2.
    pub sigma_var: f64,
    pub tau_mean: Option<f64>,
    pub tau_var: Option<f64>,
    pub kappa_shape: Option<f64>,
    pub kappa_rate: Option<f64>,
    pub alpha_mean: Option<f64>,
    pub alpha_var: Option<f64>,
}

impl PriorSpec {
    /// Weakly informative defaults: beta_j ~ N(0, 100), log sigma^2 ~ N(1, 1),
    /// log tau^2 ~ N(0, 1), kappa ~ Gamma(2, 1), log alpha ~ N(1, 1).
    pub fn default_for(family: Family, p: usize) -> Self {
        let mut s = PriorSpec {
            beta_mean: DVector::zeros(p),
            beta_var: DVector::from_element(p, 100.0),
            sigma_mean: 1.0,
            sigma_var: 1.0,
            tau_mean: None,
            tau_var: None,
            kappa_shape: None,
            kappa_rate: None,
            alpha_mean: None,
            alpha_var: None,
        };
        match family {
            Family::Gaussian => {
                s.tau_mean = Some(0.0);
                s.tau_var = Some(1.0);
            }
            Family::Negbin => {
                s.kappa_shape = Some(2.0);
                s.kappa_rate = Some(1.0);
            }
            Family::Gamma => {
                s.alpha_mean = Some(1.0);
                s.alpha_var = Some(1.0);
            }
            _ => {}
        }
        s
    }

    /// Validate shapes, positivity, and per-family presence.
    pub fn validate_for(&self, family: Family, p: usize) -> Result<()> {
        if self.beta_mean.len() != p || self.beta_var.len() != p {
            return Err(SglmmError::InvalidArgument(format!(
                "priors.beta_mean/beta_var must have length {p} (got {} / {})",
                self.beta_mean.len(),
                self.beta_var.len()
            )));
        }
        if self.beta_var.iter().any(|&v| v <= 0.0) {
            return Err(SglmmError::InvalidArgument("priors.beta_var entries must be positive".into()));
        }
        if self.sigma_var <= 0.0 {
            return Err(SglmmError::InvalidArgument("priors.sigma_var must be positive".into()));
        }
        let need = |name: &str, val: Option<f64>, positive: bool| -> Result<()> {
            match val {
                None => Err(SglmmError::InvalidArgument(format!(
                    "priors.{name} is required for family {}",
                    family.name()
                ))),
                Some(v) if positive && v <= 0.0 => Err(SglmmError::InvalidArgument(format!(
                    "priors.{name} must be positive"
                ))),
                Some(_) => Ok(()),
            }
        };
        match family {
            Family::Gaussian => {
                need("tau_mean", self.tau_mean, false)?;
                need("tau_var", self.tau_var, true)?;
            }
            Family::Negbin => {
                need("kappa_shape", self.kappa_shape, true)?;
                need("kappa_rate", self.kappa_rate, true)?;
            }
            Family::Gamma => {
                need("alpha_mean", self.alpha_mean, false)?;
                need("alpha_var", self.alpha_var, true)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Values held constant during inference rather than included in theta.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    /// Fix sigma^2 (natural scale) instead of inferring log sigma^2.
    pub sigma2: Option<f64>,
    /// Fix the family extra parameter (natural scale: tau^2, kappa, or alpha).
    pub extra: Option<f64>,
}

/// A fully validated model: training data, basis, priors, and layout.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: Family,
    pub priors: PriorSpec,
    /// Covariates, train rows only (n x p).
    pub x: DMatrix<f64>,
    /// Responses, train rows only.
    pub z: DVector<f64>,
    /// Basis functions evaluated at train rows (n x m).
    pub phi: DMatrix<f64>,
    /// Diagonal of Sigma_delta (ones for the identity mode, eigenvalues for
    /// the eigenvalue-diagonal mode).
    pub sigma_delta_diag: DVector<f64>,
    pub layout: ParamLayout,
    // Response-only caches reused by every likelihood evaluation.
    sum_ln_gamma_z1: f64,
    sum_ln_z: f64,
}

impl ModelSpec {
    /// Build and validate a model from raw matrices.
    pub fn new(
        family: Family,
        priors: PriorSpec,
        x: DMatrix<f64>,
        z: DVector<f64>,
        phi: DMatrix<f64>,
        sigma_delta_diag: DVector<f64>,
        fixed: FixedParams,
    ) -> Result<Self> {
        let n = z.len();
        let p = x.ncols();
        let m = phi.ncols();
        if x.nrows() != n || phi.nrows() != n {
            return Err(SglmmError::InvalidData(format!(
                "row mismatch: X has {}, Phi has {}, Z has {n}",
                x.nrows(),
                phi.nrows()
            )));
        }
        if p == 0 {
            return Err(SglmmError::InvalidData("model requires at least one covariate column".into()));
        }
        if sigma_delta_diag.len() != m {
            return Err(SglmmError::InvalidData(format!(
                "Sigma_delta diagonal has length {}, expected {m}",
                sigma_delta_diag.len()
            )));
        }
        if sigma_delta_diag.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(SglmmError::InvalidData("Sigma_delta diagonal entries must be positive and finite".into()));
        }
        priors.validate_for(family, p)?;
        for (i, &zi) in z.iter().enumerate() {
            if let Err(msg) = family.validate_response(zi) {
                return Err(SglmmError::InvalidData(format!("response row {i}: {msg} (value {zi})")));
            }
        }
        let sigma2_slot = match fixed.sigma2 {
            None => Slot::Free,
            Some(v) if v > 0.0 && v.is_finite() => Slot::Fixed(v.ln()),
            Some(v) => {
                return Err(SglmmError::InvalidArgument(format!(
                    "fixed sigma2 must be positive and finite (got {v})"
                )))
            }
        };
        let gamma_slot = if !family.has_extra_param() {
            if fixed.extra.is_some() {
                return Err(SglmmError::InvalidArgument(format!(
                    "family {} has no extra parameter to fix",
                    family.name()
                )));
            }
            Slot::Absent
        } else {
            match fixed.extra {
                None => Slot::Free,
                Some(v) if v > 0.0 && v.is_finite() => Slot::Fixed(v.ln()),
                Some(v) => {
                    return Err(SglmmError::InvalidArgument(format!(
                        "fixed extra parameter must be positive and finite (got {v})"
                    )))
                }
            }
        };
        let layout = ParamLayout { p, m, sigma2: sigma2_slot, gamma: gamma_slot };
        let sum_ln_gamma_z1 = match family {
            Family::Poisson | Family::Negbin => z.iter().map(|&zi| ln_gamma(zi + 1.0)).sum(),
            _ => 0.0,
        };
        let sum_ln_z = match family {
            Family::Gamma => z.iter().map(|&zi| zi.ln()).sum(),
            _ => 0.0,
        };
        Ok(ModelSpec {
            family,
            priors,
            x,
            z,
            phi,
            sigma_delta_diag,
            layout,
            sum_ln_gamma_z1,
            sum_ln_z,
        })
    }

    /// Build a model from the train rows of a dataset and its basis.
    pub fn from_training(
        dataset: &SpatialDataset,
        basis: &BasisSystem,
        family: Family,
        priors: PriorSpec,
        fixed: FixedParams,
    ) -> Result<Self> {
        let rows = &dataset.train_idx;
        if rows.is_empty() {
            return Err(SglmmError::InvalidData("dataset has no training rows".into()));
        }
        let p = dataset.x.ncols();
        let m = basis.phi.ncols();
        if basis.phi.nrows() != dataset.n() {
            return Err(SglmmError::InvalidData(format!(
                "basis has {} rows but dataset has {}",
                basis.phi.nrows(),
                dataset.n()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| dataset.x[(rows[i], j)]);
        let phi = DMatrix::from_fn(rows.len(), m, |i, j| basis.phi[(rows[i], j)]);
        let z = DVector::from_fn(rows.len(), |i, _| dataset.z[rows[i]]);
        ModelSpec::new(family, priors, x, z, phi, basis.prior_cov_diag(), fixed)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.layout.p
    }

    pub fn m(&self) -> usize {
        self.layout.m
    }

    /// Packed (free) dimension of theta.
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Packed coordinate names in order.
    pub fn param_names(&self) -> Vec<String> {
        self.layout.names(self.family)
    }

    /// eta = X beta + Phi delta over the training rows.
    pub fn linear_predictor(&self, pv: &ParameterVector) -> DVector<f64> {
        let mut eta = &self.x * &pv.beta;
        eta.gemv(1.0, &self.phi, &pv.delta, 1.0);
        eta
    }

    /// Extra parameter on its natural scale (tau^2 / kappa / alpha).
    pub fn extra_natural(&self, pv: &ParameterVector) -> f64 {
        pv.gamma_t.map(f64::exp).unwrap_or(f64::NAN)
    }

    /// Part of the log-likelihood that depends on eta (given the natural-scale
    /// extra parameter). Splitting out the eta-independent remainder lets the
    /// component-wise sampler skip constant terms.
    pub fn log_lik_eta_part(&self, eta: &DVector<f64>, extra: f64) -> f64 {
        let z = &self.z;
        match self.family {
            Family::Gaussian => {
                let tau2 = extra;
                let mut ss = 0.0;
                for i in 0..z.len() {
                    let r = z[i] - eta[i];
                    ss += r * r;
                }
                -0.5 * ss / tau2
            }
            Family::Poisson => {
                let mut acc = 0.0;
                for i in 0..z.len() {
                    acc += z[i] * eta[i] - eta[i].exp();
                }
                acc
            }
            Family::Bernoulli => {
                let mut acc = 0.0;
                for i in 0..z.len() {
                    acc += z[i] * eta[i] - softplus(eta[i]);
                }
                acc
            }
            Family::Negbin => {
                let kappa = extra;
                let mut acc = 0.0;
                for i in 0..z.len() {
                    let mu = eta[i].exp();
                    acc += z[i] * eta[i] - (kappa + z[i]) * (kappa + mu).ln();
                }
                acc
            }
            Family::Gamma => {
                let alpha = extra;
                let mut acc = 0.0;
                for i in 0..z.len() {
                    acc += eta[i] + z[i] * (-eta[i]).exp();
                }
                -alpha * acc
            }
        }
    }

    /// Part of the log-likelihood that does not depend on eta.
    pub fn log_lik_const_part(&self, extra: f64) -> f64 {
        let n = self.n() as f64;
        match self.family {
            Family::Gaussian => {
                let tau2 = extra;
                -0.5 * n * (LN_2PI + tau2.ln())
            }
            Family::Poisson => -self.sum_ln_gamma_z1,
            Family::Bernoulli => 0.0,
            Family::Negbin => {
                let kappa = extra;
                let mut acc = 0.0;
                for &zi in self.z.iter() {
                    acc += ln_gamma(zi + kappa);
                }
                acc - n * ln_gamma(kappa) - self.sum_ln_gamma_z1 + n * kappa * kappa.ln()
            }
            Family::Gamma => {
                let alpha = extra;
                n * (alpha * alpha.ln() - ln_gamma(alpha)) + (alpha - 1.0) * self.sum_ln_z
            }
        }
    }

    /// Log-likelihood of the training responses.
    pub fn log_likelihood(&self, pv: &ParameterVector) -> f64 {
        let eta = self.linear_predictor(pv);
        let extra = self.extra_natural(pv);
        self.log_lik_eta_part(&eta, extra) + self.log_lik_const_part(extra)
    }

    /// Log-prior of all free parameters (fixed slots contribute nothing;
    /// a fixed sigma^2 still scales the delta prior).
    pub fn log_prior(&self, pv: &ParameterVector) -> f64 {
        let mut lp = 0.0;
        for j in 0..self.layout.p {
            let v = self.priors.beta_var[j];
            let d = pv.beta[j] - self.priors.beta_mean[j];
            lp += -0.5 * (LN_2PI + v.ln()) - 0.5 * d * d / v;
        }
        let sigma2 = pv.log_sigma2.exp();
        for j in 0..self.layout.m {
            let v = sigma2 * self.sigma_delta_diag[j];
            lp += -0.5 * (LN_2PI + v.ln()) - 0.5 * pv.delta[j] * pv.delta[j] / v;
        }
        if self.layout.sigma2.is_free() {
            let d = pv.log_sigma2 - self.priors.sigma_mean;
            lp += -0.5 * (LN_2PI + self.priors.sigma_var.ln()) - 0.5 * d * d / self.priors.sigma_var;
        }
        if self.layout.gamma.is_free() {
            lp += self.gamma_log_prior(pv.gamma_t.expect("free gamma slot requires gamma_t"));
        }
        lp
    }

    /// Log-prior of the transformed extra parameter. For negbin the Gamma
    /// prior sits on kappa itself, so evaluating on u = log kappa picks up
    /// the change-of-variables Jacobian: a ln b - ln Gamma(a) + a u - b e^u.
    pub fn gamma_log_prior(&self, gamma_t: f64) -> f64 {
        match self.family {
            Family::Gaussian => {
                let (m, v) = (self.priors.tau_mean.unwrap(), self.priors.tau_var.unwrap());
                let d = gamma_t - m;
                -0.5 * (LN_2PI + v.ln()) - 0.5 * d * d / v
            }
            Family::Negbin => {
                let (a, b) = (self.priors.kappa_shape.unwrap(), self.priors.kappa_rate.unwrap());
                a * b.ln() - ln_gamma(a) + a * gamma_t - b * gamma_t.exp()
            }
            Family::Gamma => {
                let (m, v) = (self.priors.alpha_mean.unwrap(), self.priors.alpha_var.unwrap());
                let d = gamma_t - m;
                -0.5 * (LN_2PI + v.ln()) - 0.5 * d * d / v
            }
            _ => unreachable!("no extra parameter for family {}", self.family.name()),
        }
    }

    /// log p(Z, theta) for a structured parameter value.
    pub fn log_joint_pv(&self, pv: &ParameterVector) -> f64 {
        self.log_likelihood(pv) + self.log_prior(pv)
    }

    /// log p(Z, theta) for a packed parameter vector.
    pub fn log_joint(&self, flat: &DVector<f64>) -> f64 {
        match ParameterVector::unpack(flat, &self.layout) {
            Ok(pv) => self.log_joint_pv(&pv),
            Err(_) => f64::NAN,
        }
    }

    /// Analytic gradient of `log_joint` with respect to the packed vector.
    pub fn grad_log_joint(&self, flat: &DVector<f64>) -> DVector<f64> {
        let pv = match ParameterVector::unpack(flat, &self.layout) {
            Ok(pv) => pv,
            Err(_) => return DVector::from_element(flat.len(), f64::NAN),
        };
        let eta = self.linear_predictor(&pv);
        let extra = self.extra_natural(&pv);
        let n = self.n();

        // d log-lik / d eta_i, per family.
        let mut g_eta = DVector::zeros(n);
        match self.family {
            Family::Gaussian => {
                let tau2 = extra;
                for i in 0..n {
                    g_eta[i] = (self.z[i] - eta[i]) / tau2;
                }
            }
            Family::Poisson => {
                for i in 0..n {
                    g_eta[i] = self.z[i] - eta[i].exp();
                }
            }
            Family::Bernoulli => {
                for i in 0..n {
                    g_eta[i] = self.z[i] - sigmoid(eta[i]);
                }
            }
            Family::Negbin => {
                let kappa = extra;
                for i in 0..n {
                    let mu = eta[i].exp();
                    g_eta[i] = self.z[i] - (kappa + self.z[i]) * mu / (kappa + mu);
                }
            }
            Family::Gamma => {
                let alpha = extra;
                for i in 0..n {
                    g_eta[i] = alpha * (self.z[i] * (-eta[i]).exp() - 1.0);
                }
            }
        }

        let mut grad = DVector::zeros(self.dim());
        // beta block: X^T g_eta minus prior pull.
        let gb = self.x.tr_mul(&g_eta);
        for j in 0..self.layout.p {
            grad[j] = gb[j] - (pv.beta[j] - self.priors.beta_mean[j]) / self.priors.beta_var[j];
        }
        // delta block: Phi^T g_eta minus prior pull.
        let sigma2 = pv.log_sigma2.exp();
        let gd = self.phi.tr_mul(&g_eta);
        for j in 0..self.layout.m {
            grad[self.layout.p + j] = gd[j] - pv.delta[j] / (sigma2 * self.sigma_delta_diag[j]);
        }
        // log sigma^2: from the delta prior plus its own prior.
        if let Some(idx) = self.layout.sigma2_index() {
            let mut s = 0.0;
            for j in 0..self.layout.m {
                s += pv.delta[j] * pv.delta[j] / self.sigma_delta_diag[j];
            }
            grad[idx] = -0.5 * self.layout.m as f64 + 0.5 * s / sigma2
                - (pv.log_sigma2 - self.priors.sigma_mean) / self.priors.sigma_var;
        }
        // Transformed extra parameter: chain rule through extra = e^gamma.
        if let Some(idx) = self.layout.gamma_index() {
            let gamma_t = pv.gamma_t.unwrap();
            let lik_term = match self.family {
                Family::Gaussian => {
                    let tau2 = extra;
                    let mut ss = 0.0;
                    for i in 0..n {
                        let r = self.z[i] - eta[i];
                        ss += r * r;
                    }
                    -0.5 * n as f64 + 0.5 * ss / tau2
                }
                Family::Negbin => {
                    let kappa = extra;
                    let mut acc = 0.0;
                    for i in 0..n {
                        let mu = eta[i].exp();
                        acc += digamma(self.z[i] + kappa) - digamma(kappa) + kappa.ln() + 1.0
                            - (kappa + mu).ln()
                            - (kappa + self.z[i]) / (kappa + mu);
                    }
                    kappa * acc
                }
                Family::Gamma => {
                    let alpha = extra;
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += alpha.ln() + 1.0 - digamma(alpha) - eta[i] + self.z[i].ln()
                            - self.z[i] * (-eta[i]).exp();
                    }
                    alpha * acc
                }
                _ => unreachable!(),
            };
            let prior_term = match self.family {
                Family::Negbin => {
                    let (a, b) = (self.priors.kappa_shape.unwrap(), self.priors.kappa_rate.unwrap());
                    a - b * gamma_t.exp()
                }
                Family::Gaussian => {
                    -(gamma_t - self.priors.tau_mean.unwrap()) / self.priors.tau_var.unwrap()
                }
                Family::Gamma => {
                    -(gamma_t - self.priors.alpha_mean.unwrap()) / self.priors.alpha_var.unwrap()
                }
                _ => unreachable!(),
            };
            grad[idx] = lik_term + prior_term;
        }
        grad
    }
}
