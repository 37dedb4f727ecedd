//! Majorization-minimization solver in reweighted-ℓ1 form.
//!
//! The concave part `log|C| + 2Σ a_i log γ_i` of the objective is replaced by
//! its tangent plane at the current `γ`, with slope `z`. The remaining
//! problem in `(γ, x)` separates: for fixed `x` the best `γ_i` is
//! `√((x_i² + 2b_i) / z_i)`, and the best `x` solves a weighted, smoothed
//! ℓ1-regularized least-squares problem.

use nalgebra::{DMatrix, DVector};

use crate::clock::Stopwatch;
use crate::em::{check_problem, scatter};
use crate::error::{Result, SblError};
use crate::linalg::{select_entries, symmetrize, SpdFactor};
use crate::model::{active_priors, posterior_moments, Dictionary, HyperPriors, SblEstimate};

/// Denominator guard of the inner reweighting.
pub const IRLS_EPS: f64 = 1e-12;
/// Below this magnitude (relative to `max(1, ‖x‖∞)`) a coefficient with
/// `b_i = 0` is set to zero whenever zero is its coordinate-wise minimizer.
pub const ZERO_X: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RwlOptions {
    pub tau: f64,
    /// Outer stop: Euclidean change of the dense coefficient vector.
    pub tol: f64,
    pub max_iters: usize,
    /// Inner stop: stationarity residual, relative to `max(1, 2‖Φᵀy‖∞)`.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for RwlOptions {
    fn default() -> Self {
        RwlOptions {
            tau: 1e-4,
            tol: 1e-4,
            max_iters: 500,
            inner_tol: 1e-8,
            inner_max_iters: 200,
        }
    }
}

impl RwlOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.tau) && pos(self.tol) && pos(self.inner_tol)) {
            return Err(SblError::InvalidInput(
                "tau, tol and inner_tol must be positive".into(),
            ));
        }
        if self.max_iters == 0 || self.inner_max_iters == 0 {
            return Err(SblError::InvalidInput(
                "iteration caps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

struct Weights {
    z: DVector<f64>,
    log_det_c: f64,
    y_cinv_y: f64,
}

fn weights(
    phi_t: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    a: &DVector<f64>,
    lambda: f64,
) -> Result<Weights> {
    let m = phi_t.nrows();
    let mut phi_g = phi_t.clone();
    for (j, mut col) in phi_g.column_iter_mut().enumerate() {
        col *= gamma[j];
    }
    let mut c = &phi_g * phi_t.transpose();
    for i in 0..m {
        c[(i, i)] += lambda;
    }
    symmetrize(&mut c);
    let f = SpdFactor::new(c).ok_or_else(|| {
        SblError::numerical("evidence covariance factorization", gamma.as_slice())
    })?;
    let v = f.solve_lower_mat(phi_t);
    let z = DVector::from_fn(gamma.len(), |i, _| {
        v.column(i).norm_squared() + 2.0 * a[i] / gamma[i]
    });
    Ok(Weights {
        z,
        log_det_c: f.log_det(),
        y_cinv_y: y.dot(&f.solve_vec(y)),
    })
}

/// `z_i = φ_iᵀC⁻¹φ_i + 2a_i/γ_i` on the given columns.
pub fn majorize_weights(
    phi_active: &DMatrix<f64>,
    gamma_active: &DVector<f64>,
    a_active: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if gamma_active.iter().any(|&g| !(g > 0.0)) || !(lambda > 0.0) {
        return Err(SblError::Domain(
            "weights need gamma > 0 and lambda > 0".into(),
        ));
    }
    let y = DVector::zeros(phi_active.nrows());
    Ok(weights(phi_active, &y, gamma_active, a_active, lambda)?.z)
}

/// `γ_i = z_i^{-1/2} √(x_i² + 2b_i)`.
pub fn gamma_from_weights(z: &DVector<f64>, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| {
        (x[i] * x[i] + 2.0 * b[i]).sqrt() / z[i].sqrt()
    })
}

/// Output of the inner minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final stationarity residual (absolute).
    pub residual: f64,
}

/// Stationarity residual of `‖y − Φx‖² + 2λ Σ √z_i √(x_i² + 2b_i)`. For
/// `b_i = 0` and `x_i = 0` the subgradient excess is used instead.
pub fn stationarity_residual(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
    x: &DVector<f64>,
) -> f64 {
    let corr = phi.tr_mul(&(y - phi * x)) * 2.0;
    let mut sq = 0.0;
    for i in 0..x.len() {
        let w = 2.0 * lambda * z[i].sqrt();
        let r = if b[i] == 0.0 && x[i] == 0.0 {
            (corr[i].abs() - w).max(0.0)
        } else {
            -corr[i] + w * x[i] / (x[i] * x[i] + 2.0 * b[i]).sqrt()
        };
        sq += r * r;
    }
    sq.sqrt()
}

/// Minimizes `‖y − Φx‖² + 2λ Σ √z_i √(x_i² + 2b_i)` by iteratively
/// reweighted ridge regression started from `x0`.
pub fn minimize_x(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
    x0: &DVector<f64>,
    inner_tol: f64,
    inner_max_iters: usize,
) -> InnerSolution {
    let (m, k) = phi.shape();
    let mut x = x0.clone();
    if k == 0 {
        return InnerSolution {
            x,
            iterations: 0,
            converged: true,
            residual: 0.0,
        };
    }
    let scale = (phi.tr_mul(y) * 2.0).amax().max(1.0);
    let sqrt_z = z.map(f64::sqrt);
    let mut residual = f64::INFINITY;
    for it in 1..=inner_max_iters {
        // Coordinates with b_i = 0 that are numerically zero and satisfy the
        // subgradient condition stay exactly zero and leave the solve.
        let corr = phi.tr_mul(&(y - &*phi * &x)) * 2.0;
        let small = ZERO_X * x.amax().max(1.0);
        let mut free = Vec::with_capacity(k);
        for i in 0..k {
            let w = 2.0 * lambda * sqrt_z[i];
            if b[i] == 0.0 && x[i].abs() < small {
                // correlation with x_i removed
                let c0 = corr[i] + 2.0 * phi.column(i).norm_squared() * x[i];
                if c0.abs() <= w {
                    x[i] = 0.0;
                    continue;
                }
                if x[i] == 0.0 {
                    x[i] = small * c0.signum();
                }
            }
            free.push(i);
        }
        if !free.is_empty() {
            // x_F = W⁻¹Φ_Fᵀ (I + Φ_F W⁻¹ Φ_Fᵀ)⁻¹ (y − Φ_Z x_Z), with x_Z = 0
            let winv = DVector::from_fn(free.len(), |f, _| {
                let i = free[f];
                (x[i] * x[i] + 2.0 * b[i] + IRLS_EPS).sqrt() / (lambda * sqrt_z[i])
            });
            let mut phi_f = DMatrix::zeros(m, free.len());
            for (f, &i) in free.iter().enumerate() {
                phi_f.column_mut(f).copy_from(&phi.column(i));
            }
            let mut scaled = phi_f.clone();
            for (f, mut col) in scaled.column_iter_mut().enumerate() {
                col *= winv[f];
            }
            let mut g = &scaled * phi_f.transpose();
            for r in 0..m {
                g[(r, r)] += 1.0;
            }
            symmetrize(&mut g);
            let sol = match nalgebra::Cholesky::new(g) {
                Some(ch) => ch.solve(y),
                None => break,
            };
            let xf = scaled.tr_mul(&sol);
            for (f, &i) in free.iter().enumerate() {
                x[i] = xf[f];
            }
        }
        residual = stationarity_residual(phi, y, z, b, lambda, &x);
        if residual < inner_tol * scale {
            return InnerSolution {
                x,
                iterations: it,
                converged: true,
                residual,
            };
        }
    }
    InnerSolution {
        x,
        iterations: inner_max_iters,
        converged: false,
        residual,
    }
}

/// `zᵀγ + ‖y − Φx‖²/λ + Σ (x_i² + 2b_i)/γ_i`, the upper bound minimized in
/// each cycle (up to a constant). Terms with `γ_i = 0` and `x_i² + 2b_i = 0`
/// contribute nothing.
pub fn majorizer_objective(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    gamma: &DVector<f64>,
    x: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let mut v = z.dot(gamma) + (y - phi * x).norm_squared() / lambda;
    for i in 0..gamma.len() {
        let num = x[i] * x[i] + 2.0 * b[i];
        if num > 0.0 {
            v += if gamma[i] > 0.0 {
                num / gamma[i]
            } else {
                f64::INFINITY
            };
        }
    }
    v
}

/// Alternates weight, coefficient and variance updates with pruning. `λ` is
/// held fixed.
pub fn solve_rwl1(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    lambda: f64,
    opts: &RwlOptions,
) -> Result<SblEstimate> {
    opts.validate()?;
    check_problem(dict, y, priors)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SblError::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n = dict.n();
    let mut est = SblEstimate::empty(n, lambda, opts.tau);
    if y.iter().all(|&v| v == 0.0) && priors.b.iter().all(|&v| v == 0.0) {
        return Ok(est);
    }
    est.converged = false;

    let mut active: Vec<usize> = (0..n).collect();
    let mut gamma = DVector::from_element(n, 1.0);
    let mut phi_t = dict.phi().clone();
    let mut x = posterior_moments(&phi_t, y, &gamma, lambda)?.mu;
    let mut x_dense_old = scatter(n, &active, &x);

    for it in 1..=opts.max_iters {
        let sw = Stopwatch::start();
        let (a_act, b_act) = active_priors(priors, &active);
        let w = weights(&phi_t, y, &gamma, &a_act, lambda)?;
        // ℓ at the γ the previous cycle produced
        est.objective_trace
            .push(reduced_objective(&w, &gamma, &a_act, &b_act));
        let inner = minimize_x(
            &phi_t,
            y,
            &w.z,
            &b_act,
            lambda,
            &x,
            opts.inner_tol,
            opts.inner_max_iters,
        );
        let new_gamma = gamma_from_weights(&w.z, &inner.x, &b_act);
        let keep: Vec<usize> = (0..active.len())
            .filter(|&k| new_gamma[k] >= opts.tau)
            .collect();
        let pruned = keep.len() < active.len();
        if pruned {
            est.diagnostics.pruning_iterations.push(it);
            phi_t = DMatrix::from_fn(phi_t.nrows(), keep.len(), |r, c| phi_t[(r, keep[c])]);
        }
        active = keep.iter().map(|&k| active[k]).collect();
        gamma = select_entries(&new_gamma, &keep);
        x = select_entries(&inner.x, &keep);
        est.iterations = it;
        est.diagnostics.active_sizes.push(active.len());
        est.diagnostics.iteration_nanos.push(sw.elapsed_nanos());
        if active.is_empty() {
            est.converged = true;
            est.gamma.fill(0.0);
            return Ok(est);
        }
        let x_dense = scatter(n, &active, &x);
        let step = (&x_dense - &x_dense_old).norm();
        x_dense_old = x_dense;
        if step < opts.tol {
            est.converged = true;
            break;
        }
    }

    let post = posterior_moments(&phi_t, y, &gamma, lambda)?;
    let (a_act, b_act) = active_priors(priors, &active);
    let w = weights(&phi_t, y, &gamma, &a_act, lambda)?;
    est.objective_trace
        .push(reduced_objective(&w, &gamma, &a_act, &b_act));
    est.gamma = scatter(n, &active, &gamma);
    est.active = active;
    est.sigma = post.sigma;
    est.mu = post.mu;
    Ok(est)
}

fn reduced_objective(w: &Weights, gamma: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    crate::model::objective_from_parts(w.log_det_c, w.y_cinv_y, gamma, a, b)
}
