//! Expectation-maximization for the informative-hyperprior model.

use nalgebra::{DMatrix, DVector};

use crate::clock::Stopwatch;
use crate::error::{Result, SblError};
use crate::linalg::{select_entries, symmetrize};
use crate::model::{
    active_priors, objective_from_parts, posterior_diag, posterior_moments, Dictionary,
    HyperPriors, SblEstimate,
};

/// Values below this are flushed to zero before pruning.
pub const GAMMA_FLOOR: f64 = 1e-300;
/// Learned noise variances are kept above this.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub tau: f64,
    /// Stop when the dense posterior mean moves less than this (Euclidean).
    pub tol: f64,
    pub max_iters: usize,
    pub learn_lambda: bool,
    pub lambda_init: f64,
    pub gamma_init: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tau: 1e-4,
            tol: 1e-4,
            max_iters: 2000,
            learn_lambda: false,
            lambda_init: 1e-3,
            gamma_init: 1.0,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.tau) && pos(self.tol) && pos(self.lambda_init) && pos(self.gamma_init)) {
            return Err(SblError::InvalidInput(
                "tau, tol, lambda_init and gamma_init must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(SblError::InvalidInput(
                "max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_problem(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
) -> Result<()> {
    dict.check_measurement(y)?;
    if priors.len() != dict.n() {
        return Err(SblError::Dimension(format!(
            "priors have {} entries, dictionary has {} columns",
            priors.len(),
            dict.n()
        )));
    }
    Ok(())
}

/// `(Σ_ii + μ_i² + 2b_i) / (1 + 2a_i)`.
pub fn gamma_update(sigma_ii: f64, mu_i: f64, a_i: f64, b_i: f64) -> f64 {
    ((sigma_ii + mu_i * mu_i + 2.0 * b_i) / (1.0 + 2.0 * a_i)).max(0.0)
}

/// Removes every active coordinate with `γ_i < τ` and drops the matching rows
/// and columns of `Σ` and entries of `μ`.
pub fn prune(state: &SblEstimate) -> SblEstimate {
    let keep: Vec<usize> = (0..state.active.len())
        .filter(|&k| state.gamma[state.active[k]] >= state.tau)
        .collect();
    let mut out = state.clone();
    for &i in &state.active {
        if state.gamma[i] < state.tau {
            out.gamma[i] = 0.0;
        }
    }
    out.active = keep.iter().map(|&k| state.active[k]).collect();
    out.mu = select_entries(&state.mu, &keep);
    out.sigma = DMatrix::from_fn(keep.len(), keep.len(), |r, c| {
        state.sigma[(keep[r], keep[c])]
    });
    out
}

/// One EM iteration: hyperparameter update, optional noise update, pruning
/// and a fresh posterior.
pub fn em_step(
    state: &SblEstimate,
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    opts: &EmOptions,
) -> Result<SblEstimate> {
    check_problem(dict, y, priors)?;
    let mut next = state.clone();
    for (k, &i) in state.active.iter().enumerate() {
        let g = gamma_update(state.sigma[(k, k)], state.mu[k], priors.a[i], priors.b[i]);
        next.gamma[i] = if g < GAMMA_FLOOR { 0.0 } else { g };
    }
    if opts.learn_lambda {
        let phi_t = dict.columns(&state.active);
        let resid = y - &phi_t * &state.mu;
        let trace = (phi_t.tr_mul(&phi_t) * &state.sigma).trace();
        next.lambda = ((resid.norm_squared() + trace) / dict.m() as f64).max(LAMBDA_FLOOR);
    }
    let mut next = prune(&next);
    let post = posterior_moments(
        &dict.columns(&next.active),
        y,
        &select_entries(&next.gamma, &next.active),
        next.lambda,
    )?;
    next.sigma = post.sigma;
    next.mu = post.mu;
    next.iterations += 1;
    Ok(next)
}

/// Runs EM from `γ = gamma_init` on every coordinate.
pub fn solve_em(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    opts: &EmOptions,
) -> Result<SblEstimate> {
    let n = dict.n();
    solve_em_from(
        dict,
        y,
        priors,
        opts,
        &DVector::from_element(n, opts.gamma_init),
        opts.lambda_init,
    )
}

/// Runs EM from the given variances. Coordinates with `γ_i = 0` stay out.
pub fn solve_em_from(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    opts: &EmOptions,
    gamma0: &DVector<f64>,
    lambda0: f64,
) -> Result<SblEstimate> {
    opts.validate()?;
    check_problem(dict, y, priors)?;
    let n = dict.n();
    let m = dict.m() as f64;
    if gamma0.len() != n {
        return Err(SblError::Dimension(
            "initial gamma has the wrong length".into(),
        ));
    }
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(SblError::Domain(format!(
            "lambda must be positive, got {lambda0}"
        )));
    }
    if y.iter().all(|&v| v == 0.0) && priors.b.iter().all(|&v| v == 0.0) {
        return Ok(SblEstimate::empty(n, lambda0, opts.tau));
    }

    let mut active: Vec<usize> = (0..n).filter(|&i| gamma0[i] > 0.0).collect();
    let mut gamma_act = select_entries(gamma0, &active);
    let mut lambda = lambda0;
    let mut phi_t = dict.columns(&active);
    let mut post = posterior_diag(&phi_t, y, &gamma_act, lambda)?;
    let mut x_old = scatter(n, &active, &post.mu);

    let mut est = SblEstimate::empty(n, lambda, opts.tau);
    est.converged = false;
    for it in 1..=opts.max_iters {
        let sw = Stopwatch::start();
        let (a_act, b_act) = active_priors(priors, &active);
        let new_gamma = DVector::from_fn(active.len(), |k, _| {
            let g = gamma_update(post.sigma_diag[k], post.mu[k], a_act[k], b_act[k]);
            if g < GAMMA_FLOOR {
                0.0
            } else {
                g
            }
        });
        if opts.learn_lambda {
            // Tr[ΦᵀΦΣ] = λ (k − Σ_i Σ_ii / γ_i)
            let resid = y - &phi_t * &post.mu;
            let k = active.len() as f64;
            let ratio: f64 = (0..active.len())
                .map(|i| post.sigma_diag[i] / gamma_act[i])
                .sum();
            lambda = ((resid.norm_squared() + lambda * (k - ratio)) / m).max(LAMBDA_FLOOR);
        }
        let keep: Vec<usize> = (0..active.len())
            .filter(|&k| new_gamma[k] >= opts.tau)
            .collect();
        let pruned = keep.len() < active.len();
        if pruned {
            est.diagnostics.pruning_iterations.push(it);
            phi_t = DMatrix::from_fn(phi_t.nrows(), keep.len(), |r, c| phi_t[(r, keep[c])]);
        }
        active = keep.iter().map(|&k| active[k]).collect();
        gamma_act = select_entries(&new_gamma, &keep);
        est.iterations = it;
        if active.is_empty() {
            est.diagnostics.active_sizes.push(0);
            est.diagnostics.iteration_nanos.push(sw.elapsed_nanos());
            let obj = y.len() as f64 * lambda.ln() + y.norm_squared() / lambda;
            est.objective_trace.push(obj);
            est.lambda = lambda;
            est.converged = true;
            return Ok(finish_empty(est));
        }
        post = posterior_diag(&phi_t, y, &gamma_act, lambda)?;
        let (a_act, b_act) = active_priors(priors, &active);
        est.objective_trace.push(objective_from_parts(
            post.log_det_c,
            post.y_cinv_y,
            &gamma_act,
            &a_act,
            &b_act,
        ));
        est.diagnostics.active_sizes.push(active.len());
        est.diagnostics.iteration_nanos.push(sw.elapsed_nanos());
        let x_new = scatter(n, &active, &post.mu);
        let step = (&x_new - &x_old).norm();
        x_old = x_new;
        if !pruned && step < opts.tol {
            est.converged = true;
            break;
        }
    }

    let full = posterior_moments(&phi_t, y, &gamma_act, lambda)?;
    let mut sigma = full.sigma;
    symmetrize(&mut sigma);
    est.gamma = DVector::zeros(n);
    for (k, &i) in active.iter().enumerate() {
        est.gamma[i] = gamma_act[k];
    }
    est.active = active;
    est.sigma = sigma;
    est.mu = full.mu;
    est.lambda = lambda;
    Ok(est)
}

fn finish_empty(mut est: SblEstimate) -> SblEstimate {
    est.gamma.fill(0.0);
    est.active.clear();
    est.sigma = DMatrix::zeros(0, 0);
    est.mu = DVector::zeros(0);
    est
}

pub(crate) fn scatter(n: usize, idx: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for (k, &i) in idx.iter().enumerate() {
        x[i] = v[k];
    }
    x
}
