//! Hamiltonian Monte Carlo with a fixed leapfrog length and dual-averaged
//! step size.
//!
//! Each iteration draws a Gaussian momentum, integrates Hamilton's equations
//! with the leapfrog scheme for a fixed number of steps, and accepts or
//! rejects with a Metropolis correction on the total-energy error. The step
//! size is tuned during warmup by Nesterov-style dual averaging toward a
//! target acceptance probability and frozen afterwards; the mass matrix is a
//! user-supplied diagonal (identity by default) and is never adapted.
//!
//! Trajectories whose energy error exceeds [`DIVERGENCE_THRESHOLD`] (or is
//! non-finite) are counted as divergent and rejected outright; a run whose
//! divergence count ever exceeds half the iterations completed so far is
//! aborted with a diagnostic error.
//!
//! RNG discipline (relied on by replay tests): every iteration draws exactly
//! `dim` standard normals (the momentum, in coordinate order) followed by one
//! uniform (the acceptance variable).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SglmmError};
use crate::model::ModelSpec;

use super::{ess_or_nan, initial_point, ChainOutput, HmcConfig};

/// Energy error beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Acceptance probability the warmup step-size adaptation steers toward.
const ADAPT_TARGET: f64 = 0.8;

/// Total energy: potential (negative log joint) plus Gaussian kinetic energy
/// `sum_d p_d^2 / (2 mass_d)`.
pub fn hamiltonian(
    model: &ModelSpec,
    theta: &DVector<f64>,
    momentum: &DVector<f64>,
    mass_diag: &DVector<f64>,
) -> f64 {
    let mut kinetic = 0.0;
    for d in 0..momentum.len() {
        kinetic += momentum[d] * momentum[d] / (2.0 * mass_diag[d]);
    }
    -model.log_joint(theta) + kinetic
}

/// Integrate Hamilton's equations for `n_steps` leapfrog steps of size
/// `step`, returning the final position and momentum.
///
/// The scheme is the standard kick-drift-kick composition: a half-step
/// momentum update, alternating full position and momentum steps, and a
/// closing half-step momentum update. It is symplectic and exactly
/// reversible up to floating-point rounding (negate the final momentum and
/// integrate again to return to the start).
pub fn leapfrog(
    model: &ModelSpec,
    theta: &DVector<f64>,
    momentum: &DVector<f64>,
    mass_diag: &DVector<f64>,
    step: f64,
    n_steps: usize,
) -> (DVector<f64>, DVector<f64>) {
    let mut q = theta.clone();
    let mut p = momentum.clone();
    let mut grad = model.grad_log_joint(&q);
    // d p / d t = -dU/dq = grad of the log joint.
    p.axpy(0.5 * step, &grad, 1.0);
    for l in 0..n_steps {
        for d in 0..q.len() {
            q[d] += step * p[d] / mass_diag[d];
        }
        grad = model.grad_log_joint(&q);
        if l + 1 < n_steps {
            p.axpy(step, &grad, 1.0);
        }
    }
    p.axpy(0.5 * step, &grad, 1.0);
    (q, p)
}

/// Run the Hamiltonian sampler on the model's log joint.
///
/// Starts from [`initial_point`]. During the first `config.warmup`
/// iterations the step size follows dual averaging toward an acceptance
/// probability of 0.8; those iterations are discarded, so the kept chain has
/// `iters - warmup` draws (no thinning).
pub fn hmc_fit(model: &ModelSpec, config: &HmcConfig) -> Result<ChainOutput> {
    let dim = model.dim();
    config.validate(dim)?;
    let start = std::time::Instant::now();

    let mass_diag = match &config.mass_diag {
        Some(m) => DVector::from_column_slice(m),
        None => DVector::from_element(dim, 1.0),
    };
    let mut theta = initial_point(model);
    let lj0 = model.log_joint(&theta);
    if !lj0.is_finite() {
        return Err(SglmmError::Numerical(format!(
            "log joint is not finite at the initial point (got {lj0})"
        )));
    }

    // Dual-averaging state (step size adapted during warmup only).
    let mut step = config.init_step_size;
    let mu = (10.0 * config.init_step_size).ln();
    let mut log_step_avg = 0.0f64;
    let mut h_avg = 0.0f64;
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kept_rows = config.kept_draws();
    let mut samples = DMatrix::zeros(kept_rows, dim);
    let mut kept = 0usize;
    let mut n_divergent = 0usize;
    let mut post_accepts = 0usize;
    let mut momentum = DVector::zeros(dim);

    for t in 1..=config.iters {
        for d in 0..dim {
            momentum[d] = mass_diag[d].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let u: f64 = rng.random();

        let h0 = hamiltonian(model, &theta, &momentum, &mass_diag);
        let (q_new, p_new) = leapfrog(model, &theta, &momentum, &mass_diag, step, config.leapfrog_steps);
        let h1 = hamiltonian(model, &q_new, &p_new, &mass_diag);
        let energy_error = h1 - h0;

        let divergent = !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD;
        let alpha = if divergent {
            0.0
        } else {
            (-energy_error).exp().min(1.0)
        };
        let accept = !divergent && u.ln() < -energy_error;
        if accept {
            theta.copy_from(&q_new);
        }
        if divergent {
            n_divergent += 1;
        }

        if t <= config.warmup {
            let m = t as f64;
            h_avg = (1.0 - 1.0 / (m + t0)) * h_avg + (ADAPT_TARGET - alpha) / (m + t0);
            let log_step = mu - m.sqrt() / gamma * h_avg;
            let w = m.powf(-kappa);
            log_step_avg = w * log_step + (1.0 - w) * log_step_avg;
            step = log_step.exp();
            if t == config.warmup {
                step = log_step_avg.exp();
                if !(step.is_finite() && step > 0.0) {
                    return Err(SglmmError::Numerical(format!(
                        "step-size adaptation produced an unusable step size ({step})"
                    )));
                }
            }
        } else {
            if accept {
                post_accepts += 1;
            }
            samples.row_mut(kept).copy_from_slice(theta.as_slice());
            kept += 1;
        }

        if t >= 100 && 2 * n_divergent > t {
            return Err(SglmmError::Numerical(format!(
                "aborting: {n_divergent} of {t} trajectories diverged (energy error above \
                 {DIVERGENCE_THRESHOLD}); the step size ({step:.3e}) is too large for this target"
            )));
        }
    }
    if 2 * n_divergent > config.iters {
        return Err(SglmmError::Numerical(format!(
            "aborting: {n_divergent} of {} trajectories diverged (energy error above \
             {DIVERGENCE_THRESHOLD}); the step size ({step:.3e}) is too large for this target",
            config.iters
        )));
    }
    debug_assert_eq!(kept, kept_rows);

    let ess = ess_or_nan(&samples);
    Ok(ChainOutput {
        samples,
        accept_rate: post_accepts as f64 / kept_rows as f64,
        walltime_s: start.elapsed().as_secs_f64(),
        ess,
        n_divergent,
    })
}
