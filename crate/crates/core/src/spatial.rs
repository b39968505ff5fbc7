//! Spatial kernels, covariance construction, Gaussian-process simulation,
//! eigenbasis extraction, and synthetic-scenario generation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SglmmError};
use crate::linalg;
use crate::model::Family;

/// A point in the (two-dimensional) spatial domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location2D {
    pub x: f64,
    pub y: f64,
}

impl Location2D {
    pub fn new(x: f64, y: f64) -> Self {
        Location2D { x, y }
    }

    pub fn dist(&self, other: &Location2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Matérn kernel parameters: smoothness, decay length, marginal variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: f64,
    pub range: f64,
    pub marg_var: f64,
}

impl MaternParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("range", self.range), ("marg_var", self.marg_var)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SglmmError::InvalidArgument(format!(
                    "matern {name} must be positive and finite (got {v})"
                )));
            }
        }
        Ok(())
    }
}

/// Matérn covariance between two points at distance `d`, using the
/// sqrt(2*nu)-scaled convention
///
/// ```text
/// C(d) = sigma^2 * 2^(1-nu)/Gamma(nu) * (sqrt(2 nu) d / range)^nu * K_nu(sqrt(2 nu) d / range)
/// ```
///
/// with closed-form fast paths for nu in {0.5, 1.5, 2.5} and a modified-Bessel
/// general branch otherwise. `C(0) = sigma^2` exactly for every nu.
pub fn matern_kernel(d: f64, params: &MaternParams) -> Result<f64> {
    params.validate()?;
    if !(d.is_finite() && d >= 0.0) {
        return Err(SglmmError::InvalidArgument(format!(
            "distance must be non-negative and finite (got {d})"
        )));
    }
    if d == 0.0 {
        return Ok(params.marg_var);
    }
    let s = d / params.range;
    let corr = if params.nu == 0.5 {
        (-s).exp()
    } else if params.nu == 1.5 {
        let r = 3.0f64.sqrt() * s;
        (1.0 + r) * (-r).exp()
    } else if params.nu == 2.5 {
        let r = 5.0f64.sqrt() * s;
        (1.0 + r + r * r / 3.0) * (-r).exp()
    } else {
        matern_correlation_general(params.nu, s)
    };
    Ok(params.marg_var * corr)
}

/// General-nu Matérn correlation at scaled distance s = d/range.
fn matern_correlation_general(nu: f64, s: f64) -> f64 {
    let t = (2.0 * nu).sqrt() * s;
    if t < 1e-12 {
        return 1.0;
    }
    let (_, k_nu, _, _) = puruspe::besselik(nu, t);
    if !k_nu.is_finite() {
        // K_nu underflows for large arguments; the correlation is zero there.
        return 0.0;
    }
    // 2^{1-nu}/Gamma(nu) * t^nu * K_nu(t), evaluated in log space for stability.
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * t.ln();
    if k_nu <= 0.0 {
        return 0.0;
    }
    (log_pref + k_nu.ln()).exp()
}

/// Dense spatial covariance with an explicit diagonal jitter.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub entries: DMatrix<f64>,
    pub jitter: f64,
}

impl CovarianceMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Lower Cholesky factor of the (jittered) covariance.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        linalg::cholesky_lower(&self.entries).map_err(|_| {
            SglmmError::Numerical(format!(
                "covariance Cholesky failed at jitter {:.3e}; increase the jitter",
                self.jitter
            ))
        })
    }

    /// Add `extra` to every diagonal entry and to the recorded jitter.
    pub fn add_jitter(&mut self, extra: f64) {
        for i in 0..self.entries.nrows() {
            self.entries[(i, i)] += extra;
        }
        self.jitter += extra;
    }

    /// Cholesky with automatic jitter escalation: on failure the jitter is
    /// doubled (from `fallback` if currently zero) up to `max_doublings`
    /// times before giving up.
    pub fn cholesky_escalating(&mut self, fallback: f64, max_doublings: usize) -> Result<DMatrix<f64>> {
        let mut attempt = self.cholesky();
        let mut doublings = 0;
        while attempt.is_err() && doublings < max_doublings {
            let extra = if self.jitter > 0.0 { self.jitter } else { fallback };
            log::warn!(
                "covariance Cholesky failed at jitter {:.3e}; retrying at {:.3e}",
                self.jitter,
                self.jitter + extra
            );
            self.add_jitter(extra);
            doublings += 1;
            attempt = self.cholesky();
        }
        attempt
    }
}

/// Default diagonal jitter for a covariance with marginal variance `marg_var`.
pub fn default_jitter(marg_var: f64) -> f64 {
    1e-8 * marg_var
}

/// Build the dense Matérn covariance over a set of locations.
///
/// Coincident locations with zero jitter make the matrix singular; that
/// situation is reported as a warning rather than an error because downstream
/// consumers may still only need kernel values.
pub fn build_covariance(
    locations: &[Location2D],
    params: &MaternParams,
    jitter: f64,
) -> Result<CovarianceMatrix> {
    params.validate()?;
    if locations.is_empty() {
        return Err(SglmmError::InvalidArgument("need at least one location".into()));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(SglmmError::InvalidArgument(format!(
            "jitter must be non-negative and finite (got {jitter})"
        )));
    }
    for (i, loc) in locations.iter().enumerate() {
        if !(loc.x.is_finite() && loc.y.is_finite()) {
            return Err(SglmmError::InvalidData(format!(
                "location {i} has non-finite coordinates ({}, {})",
                loc.x, loc.y
            )));
        }
    }
    let n = locations.len();
    let mut entries = DMatrix::zeros(n, n);
    let mut duplicate: Option<(usize, usize)> = None;
    for i in 0..n {
        entries[(i, i)] = params.marg_var + jitter;
        for j in (i + 1)..n {
            let d = locations[i].dist(&locations[j]);
            if d == 0.0 && duplicate.is_none() {
                duplicate = Some((i, j));
            }
            let v = matern_kernel(d, params)?;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    if let Some((i, j)) = duplicate {
        if jitter == 0.0 {
            log::warn!(
                "locations {i} and {j} coincide and jitter is zero; the covariance matrix is singular"
            );
        }
    }
    Ok(CovarianceMatrix { entries, jitter })
}

/// Draw one zero-mean Gaussian-process field `L z` with `z` i.i.d. standard
/// normal and `L` the lower Cholesky factor of the covariance.
pub fn sample_gp<R: Rng>(cov: &CovarianceMatrix, rng: &mut R) -> Result<DVector<f64>> {
    let l = cov.cholesky()?;
    let z = DVector::from_fn(cov.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(&l * z)
}

/// Prior covariance choice for the basis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorCovMode {
    /// Sigma_delta = I.
    Identity,
    /// Sigma_delta = diag(leading eigenvalues).
    EigenvalueDiagonal,
}

/// The leading-eigenvector spatial basis: an N x m orthonormal matrix plus
/// the corresponding eigenvalues.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    pub phi: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub prior_cov_mode: PriorCovMode,
}

impl BasisSystem {
    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    /// Diagonal of Sigma_delta implied by the prior covariance mode.
    pub fn prior_cov_diag(&self) -> DVector<f64> {
        match self.prior_cov_mode {
            PriorCovMode::Identity => DVector::from_element(self.m(), 1.0),
            PriorCovMode::EigenvalueDiagonal => self.eigenvalues.clone(),
        }
    }

    /// Basis rows for a subset of locations (e.g. the train or test split).
    pub fn phi_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.m(), |i, j| self.phi[(idx[i], j)])
    }
}

/// Extract the `m` leading eigenpairs of a covariance matrix as a basis.
///
/// Columns are unit-norm eigenvectors ordered by descending eigenvalue. Each
/// column's sign is normalized so its largest-magnitude entry is positive,
/// making the basis deterministic across eigensolver implementations.
pub fn leading_eigenbasis(
    cov: &CovarianceMatrix,
    m: usize,
    prior_cov_mode: PriorCovMode,
) -> Result<BasisSystem> {
    let n = cov.n();
    if m == 0 || m > n {
        return Err(SglmmError::InvalidArgument(format!(
            "basis size m={m} must satisfy 1 <= m <= {n}"
        )));
    }
    let (vals, mut vecs) = linalg::sym_eigen_topk(&cov.entries, m)?;
    if vals.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(SglmmError::Numerical(format!(
            "leading eigenvalues must be positive (smallest of the top {m} was {:.3e}); increase the jitter",
            vals.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    for j in 0..m {
        let mut best = 0;
        let mut best_abs = 0.0;
        for i in 0..n {
            let a = vecs[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if vecs[(best, j)] < 0.0 {
            for i in 0..n {
                vecs[(i, j)] = -vecs[(i, j)];
            }
        }
    }
    Ok(BasisSystem {
        phi: vecs,
        eigenvalues: DVector::from_vec(vals),
        prior_cov_mode,
    })
}

/// Generative description of one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub family: Family,
    pub matern: MaternParams,
    pub beta_true: DVector<f64>,
    pub n_train: usize,
    pub n_test: usize,
    /// True extra response parameter on its natural scale (tau^2 / kappa /
    /// alpha); `None` selects the family default.
    pub extra_param_true: Option<f64>,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn n(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        self.matern.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(SglmmError::InvalidArgument(
                "scenario requires n_train > 0 and n_test > 0".into(),
            ));
        }
        if self.beta_true.is_empty() {
            return Err(SglmmError::InvalidArgument("scenario requires at least one coefficient".into()));
        }
        if !self.family.has_extra_param() && self.extra_param_true.is_some() {
            return Err(SglmmError::InvalidArgument(format!(
                "family {} has no extra parameter",
                self.family.name()
            )));
        }
        if let Some(v) = self.extra_param_true {
            if !(v.is_finite() && v > 0.0) {
                return Err(SglmmError::InvalidArgument(format!(
                    "extra_param_true must be positive and finite (got {v})"
                )));
            }
        }
        Ok(())
    }
}

/// Observations at spatial locations, split into train and test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub locations: Vec<Location2D>,
    pub x: DMatrix<f64>,
    pub z: DVector<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub family: Family,
}

impl SpatialDataset {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Covariate rows for an index subset.
    pub fn x_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.p(), |i, j| self.x[(idx[i], j)])
    }

    /// Response entries for an index subset.
    pub fn z_rows(&self, idx: &[usize]) -> DVector<f64> {
        DVector::from_fn(idx.len(), |i, _| self.z[idx[i]])
    }

    /// Check structural invariants: split disjointness/coverage and response
    /// support. Reports the first offending row.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.locations.len() != n || self.x.nrows() != n {
            return Err(SglmmError::InvalidData(format!(
                "dataset row mismatch: {} locations, {} covariate rows, {} responses",
                self.locations.len(),
                self.x.nrows(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &i in self.train_idx.iter().chain(self.test_idx.iter()) {
            if i >= n {
                return Err(SglmmError::InvalidData(format!(
                    "split index {i} out of range for {n} rows"
                )));
            }
            if seen[i] {
                return Err(SglmmError::InvalidData(format!(
                    "row {i} appears in both splits or twice in one"
                )));
            }
            seen[i] = true;
        }
        if self.train_idx.len() + self.test_idx.len() != n {
            return Err(SglmmError::InvalidData(format!(
                "splits cover {} rows, dataset has {n}",
                self.train_idx.len() + self.test_idx.len()
            )));
        }
        for (i, &zi) in self.z.iter().enumerate() {
            if let Err(msg) = self.family.validate_response(zi) {
                return Err(SglmmError::InvalidData(format!("response row {i}: {msg} (value {zi})")));
            }
        }
        Ok(())
    }
}

/// The generating values behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub beta: DVector<f64>,
    /// Latent spatial field at every location (train and test).
    pub omega: DVector<f64>,
    /// Extra response parameter on its natural scale, when the family has one.
    pub extra_param: Option<f64>,
}

/// Simulate one dataset from a scenario.
///
/// The generator is consumed in a fixed documented order so outputs are a
/// pure function of the scenario: (1) locations, x then y per point;
/// (2) covariates Unif(-1,1), row-major; (3) the standard normals behind the
/// latent field; (4) response draws in row order. The first `n_train` rows
/// form the training split, the remainder the test split; rows are i.i.d., so
/// the split is exchangeable by construction.
pub fn simulate_dataset(scenario: &SyntheticScenario) -> Result<(SpatialDataset, TruthRecord)> {
    scenario.validate()?;
    let n = scenario.n();
    let p = scenario.beta_true.len();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let locations: Vec<Location2D> = (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            Location2D::new(x, y)
        })
        .collect();

    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = 2.0 * rng.random::<f64>() - 1.0;
        }
    }

    let mut cov = build_covariance(
        &locations,
        &scenario.matern,
        default_jitter(scenario.matern.marg_var),
    )?;
    let l = cov.cholesky_escalating(default_jitter(scenario.matern.marg_var), 3)?;
    let normals = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let omega = &l * normals;

    let extra = scenario.extra_param_true.or(scenario.family.default_extra_param());
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let mut eta = omega[i];
        for j in 0..p {
            eta += x[(i, j)] * scenario.beta_true[j];
        }
        z[i] = scenario.family.sample_response(eta, extra, &mut rng)?;
    }

    let dataset = SpatialDataset {
        locations,
        x,
        z,
        train_idx: (0..scenario.n_train).collect(),
        test_idx: (scenario.n_train..n).collect(),
        family: scenario.family,
    };
    let truth = TruthRecord {
        beta: scenario.beta_true.clone(),
        omega,
        extra_param: extra,
    };
    Ok((dataset, truth))
}
