//! The hierarchical Gaussian model: shared types, posterior moments, the
//! evidence covariance, the type-II objective and the mapping from a
//! dynamics prediction to inverse-gamma hyperpriors.
//!
//! Conventions used throughout the crate:
//!
//! * `lambda` is the noise variance (never a precision).
//! * The objective is `-2 log p(y, log γ)` up to constants, i.e.
//!   `log|C| + yᵀC⁻¹y + Σ_i (2 a_i log γ_i + 2 b_i / γ_i)`.
//! * A coordinate with `γ_i = 0` has been removed from the model. Its prior
//!   term contributes nothing when `b_i = 0`; when `b_i > 0` the full objective
//!   is `+∞` (the `2 b_i / γ_i` term diverges). [`pruned_neg_log_likelihood`]
//!   evaluates the objective of the reduced model instead, which is what the
//!   solvers decrease.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SblError};
use crate::linalg::{select_columns, select_entries, symmetrize, SpdFactor};

/// Measurement matrix with cached squared column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    phi: DMatrix<f64>,
    column_sq_norms: DVector<f64>,
}

impl Dictionary {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(SblError::InvalidInput(
                "dictionary must have at least one row and one column".into(),
            ));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(SblError::InvalidInput(
                "dictionary has non-finite entries".into(),
            ));
        }
        let column_sq_norms =
            DVector::from_iterator(phi.ncols(), phi.column_iter().map(|c| c.norm_squared()));
        Ok(Dictionary {
            phi,
            column_sq_norms,
        })
    }

    /// Builds a dictionary from row-major data.
    pub fn from_rows(m: usize, n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * n {
            return Err(SblError::Dimension(format!(
                "expected {} entries for a {m}x{n} dictionary, got {}",
                m * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(m, n, data))
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Number of measurements (rows).
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of coefficients (columns).
    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn column_sq_norms(&self) -> &DVector<f64> {
        &self.column_sq_norms
    }

    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        select_columns(&self.phi, idx)
    }

    pub(crate) fn check_measurement(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.m() {
            return Err(SblError::Dimension(format!(
                "measurement has length {}, dictionary has {} rows",
                y.len(),
                self.m()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SblError::InvalidInput(
                "measurement has non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

/// Inverse-gamma hyperprior parameters: `(a_i, b_i)` per coefficient and
/// `(c, d)` for the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPriors {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub d: f64,
}

impl HyperPriors {
    pub fn new(a: DVector<f64>, b: DVector<f64>, c: f64, d: f64) -> Result<Self> {
        if a.len() != b.len() {
            return Err(SblError::Dimension(
                "a and b must have the same length".into(),
            ));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !a.iter().chain(b.iter()).all(|&v| ok(v)) || !ok(c) || !ok(d) {
            return Err(SblError::InvalidInput(
                "hyperprior parameters must be finite and nonnegative".into(),
            ));
        }
        Ok(HyperPriors { a, b, c, d })
    }

    /// `a = b = 0`, `c = d = 0`: plain SBL.
    pub fn uninformative(n: usize) -> Self {
        HyperPriors {
            a: DVector::zeros(n),
            b: DVector::zeros(n),
            c: 0.0,
            d: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn is_uninformative(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|&v| v == 0.0)
    }
}

/// A dynamics-based prediction of the signal and the weight it receives.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_tilde: DVector<f64>,
    pub xi: f64,
}

impl Prediction {
    pub fn new(x_tilde: DVector<f64>, xi: f64) -> Result<Self> {
        if x_tilde.iter().any(|v| !v.is_finite()) {
            return Err(SblError::InvalidInput(
                "prediction has non-finite entries".into(),
            ));
        }
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(SblError::InvalidInput(format!(
                "xi must be finite and >= 0, got {xi}"
            )));
        }
        Ok(Prediction { x_tilde, xi })
    }
}

/// Per-solve bookkeeping used by the benchmarks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Active-set size after each iteration / action.
    pub active_sizes: Vec<usize>,
    /// Wall time of each iteration / action in nanoseconds (zero on wasm).
    pub iteration_nanos: Vec<u64>,
    /// Iterations (1-based) in which at least one coordinate was pruned.
    pub pruning_iterations: Vec<usize>,
    pub reestimates: usize,
    pub adds: usize,
    pub deletes: usize,
}

/// Result of a static solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SblEstimate {
    /// Prior variances, length N; zero exactly off the active set.
    pub gamma: DVector<f64>,
    /// Noise variance.
    pub lambda: f64,
    /// Active coordinates, increasing.
    pub active: Vec<usize>,
    /// Posterior covariance on the active set.
    pub sigma: DMatrix<f64>,
    /// Posterior mean on the active set.
    pub mu: DVector<f64>,
    /// Pruning threshold.
    pub tau: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl SblEstimate {
    /// The model with every coordinate pruned.
    pub fn empty(n: usize, lambda: f64, tau: f64) -> Self {
        SblEstimate {
            gamma: DVector::zeros(n),
            lambda,
            active: Vec::new(),
            sigma: DMatrix::zeros(0, 0),
            mu: DVector::zeros(0),
            tau,
            iterations: 0,
            objective_trace: Vec::new(),
            converged: true,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    /// Posterior mean scattered into an N-vector.
    pub fn dense_estimate(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.gamma.len());
        for (k, &i) in self.active.iter().enumerate() {
            x[i] = self.mu[k];
        }
        x
    }
}

/// Posterior moments on an active set plus the two evidence quantities that
/// fall out of the same factorization.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// `log|C|` with `C = λI + Φ_T Γ_T Φ_Tᵀ`.
    pub log_det_c: f64,
    /// `yᵀ C⁻¹ y`.
    pub y_cinv_y: f64,
}

/// Posterior with only the diagonal of `Σ`, which is all EM needs.
#[derive(Debug, Clone)]
pub(crate) struct PosteriorDiag {
    pub sigma: Option<DMatrix<f64>>,
    pub sigma_diag: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_det_c: f64,
    pub y_cinv_y: f64,
}

fn check_posterior_args(
    phi_active: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_active: &DVector<f64>,
    lambda: f64,
) -> Result<()> {
    if phi_active.ncols() != gamma_active.len() || phi_active.nrows() != y.len() {
        return Err(SblError::Dimension(format!(
            "phi is {}x{}, y has {}, gamma has {}",
            phi_active.nrows(),
            phi_active.ncols(),
            y.len(),
            gamma_active.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SblError::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if gamma_active.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(SblError::Domain(
            "active gamma must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// `Σ = (Γ⁻¹ + λ⁻¹ΦᵀΦ)⁻¹`, `μ = λ⁻¹ΣΦᵀy` on the columns given.
///
/// Uses the k×k factorization when `k ≤ M` and the M×M Woodbury form
/// otherwise; both agree to rounding.
pub fn posterior_moments(
    phi_active: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_active: &DVector<f64>,
    lambda: f64,
) -> Result<Posterior> {
    check_posterior_args(phi_active, y, gamma_active, lambda)?;
    let p = if phi_active.ncols() > phi_active.nrows() {
        posterior_woodbury_impl(phi_active, y, gamma_active, lambda, true)?
    } else {
        posterior_direct_impl(phi_active, y, gamma_active, lambda)?
    };
    Ok(into_full(p))
}

/// Direct k×k route, exposed so the two routes can be compared.
pub fn posterior_moments_direct(
    phi_active: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_active: &DVector<f64>,
    lambda: f64,
) -> Result<Posterior> {
    check_posterior_args(phi_active, y, gamma_active, lambda)?;
    Ok(into_full(posterior_direct_impl(
        phi_active,
        y,
        gamma_active,
        lambda,
    )?))
}

/// M×M Woodbury route, exposed so the two routes can be compared.
pub fn posterior_moments_woodbury(
    phi_active: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_active: &DVector<f64>,
    lambda: f64,
) -> Result<Posterior> {
    check_posterior_args(phi_active, y, gamma_active, lambda)?;
    Ok(into_full(posterior_woodbury_impl(
        phi_active,
        y,
        gamma_active,
        lambda,
        true,
    )?))
}

fn into_full(p: PosteriorDiag) -> Posterior {
    Posterior {
        sigma: p.sigma.expect("full covariance requested"),
        mu: p.mu,
        log_det_c: p.log_det_c,
        y_cinv_y: p.y_cinv_y,
    }
}

/// Same as [`posterior_moments`] but skips forming the full `Σ` on the
/// Woodbury route.
pub(crate) fn posterior_diag(
    phi_active: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_active: &DVector<f64>,
    lambda: f64,
) -> Result<PosteriorDiag> {
    check_posterior_args(phi_active, y, gamma_active, lambda)?;
    // Without the full Σ the M×M route is cheaper from about k = 0.4·M on
    if 5 * phi_active.ncols() > 2 * phi_active.nrows() {
        posterior_woodbury_impl(phi_active, y, gamma_active, lambda, false)
    } else {
        posterior_direct_impl(phi_active, y, gamma_active, lambda)
    }
}

fn empty_posterior(y: &DVector<f64>, lambda: f64) -> PosteriorDiag {
    PosteriorDiag {
        sigma: Some(DMatrix::zeros(0, 0)),
        sigma_diag: DVector::zeros(0),
        mu: DVector::zeros(0),
        log_det_c: y.len() as f64 * lambda.ln(),
        y_cinv_y: y.norm_squared() / lambda,
    }
}

fn posterior_direct_impl(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
) -> Result<PosteriorDiag> {
    let k = phi.ncols();
    if k == 0 {
        return Ok(empty_posterior(y, lambda));
    }
    let mut a = phi.tr_mul(phi) / lambda;
    for i in 0..k {
        a[(i, i)] += 1.0 / gamma[i];
    }
    let f = SpdFactor::new(a).ok_or_else(|| {
        SblError::numerical("posterior precision factorization", gamma.as_slice())
    })?;
    let sigma = f.inverse();
    let mu = &sigma * (phi.tr_mul(y) / lambda);
    let m = y.len() as f64;
    let log_det_c = m * lambda.ln() + gamma.iter().map(|g| g.ln()).sum::<f64>() + f.log_det();
    // yᵀC⁻¹y = ‖y − Φμ‖²/λ + μᵀΓ⁻¹μ avoids the cancellation in yᵀy − yᵀΦμ.
    let resid = y - phi * &mu;
    let y_cinv_y = resid.norm_squared() / lambda
        + mu.iter()
            .zip(gamma.iter())
            .map(|(u, g)| u * u / g)
            .sum::<f64>();
    let sigma_diag = sigma.diagonal();
    Ok(PosteriorDiag {
        sigma: Some(sigma),
        sigma_diag,
        mu,
        log_det_c,
        y_cinv_y,
    })
}

fn posterior_woodbury_impl(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    full: bool,
) -> Result<PosteriorDiag> {
    let (m, k) = phi.shape();
    if k == 0 {
        return Ok(empty_posterior(y, lambda));
    }
    let mut phi_g = phi.clone();
    for (j, mut col) in phi_g.column_iter_mut().enumerate() {
        col *= gamma[j];
    }
    let mut c = &phi_g * phi.transpose();
    for i in 0..m {
        c[(i, i)] += lambda;
    }
    symmetrize(&mut c);
    let f = SpdFactor::new(c).ok_or_else(|| {
        SblError::numerical("evidence covariance factorization", gamma.as_slice())
    })?;
    let cinv_y = f.solve_vec(y);
    let mu = phi_g.tr_mul(&cinv_y);
    let y_cinv_y = y.dot(&cinv_y);
    let log_det_c = f.log_det();
    let (sigma, sigma_diag) = if full {
        // C⁻¹ΦΓ, M×k
        let w = f.solve_mat(&phi_g);
        let mut s = -(phi_g.tr_mul(&w));
        for i in 0..k {
            s[(i, i)] += gamma[i];
        }
        symmetrize(&mut s);
        let d = s.diagonal();
        (Some(s), d)
    } else {
        // Σ_ii = γ_i − γ_i² ‖L⁻¹φ_i‖²
        let v = f.solve_lower_mat(phi);
        let d = DVector::from_iterator(
            k,
            (0..k).map(|j| gamma[j] - gamma[j] * gamma[j] * v.column(j).norm_squared()),
        );
        (None, d)
    };
    Ok(PosteriorDiag {
        sigma,
        sigma_diag,
        mu,
        log_det_c,
        y_cinv_y,
    })
}

/// `C = λI + Σ_i γ_i φ_i φ_iᵀ`, accumulated over the nonzero `γ_i` only.
pub fn marginal_covariance(
    dict: &Dictionary,
    gamma: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if gamma.len() != dict.n() {
        return Err(SblError::Dimension(format!(
            "gamma has {} entries, dictionary has {} columns",
            gamma.len(),
            dict.n()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) || gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(SblError::Domain(
            "need lambda > 0 and finite gamma >= 0".into(),
        ));
    }
    let active: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] > 0.0).collect();
    let m = dict.m();
    let mut c = DMatrix::identity(m, m) * lambda;
    if !active.is_empty() {
        let phi_t = dict.columns(&active);
        let mut phi_g = phi_t.clone();
        for (j, mut col) in phi_g.column_iter_mut().enumerate() {
            col *= gamma[active[j]];
        }
        c += &phi_g * phi_t.transpose();
    }
    symmetrize(&mut c);
    Ok(c)
}

/// Hyperprior part of the objective, `Σ_i 2 a_i log γ_i + 2 b_i / γ_i`.
///
/// Coordinates with `γ_i = 0` contribute 0 when `b_i = 0` and make the value
/// `+∞` when `b_i > 0`.
pub fn dyn_objective(gamma: &DVector<f64>, priors: &HyperPriors) -> f64 {
    let mut total = 0.0;
    for i in 0..gamma.len() {
        let (g, a, b) = (gamma[i], priors.a[i], priors.b[i]);
        if g == 0.0 {
            if b > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        total += 2.0 * a * g.ln() + 2.0 * b / g;
    }
    total
}

fn active_prior_term(gamma: &DVector<f64>, priors: &HyperPriors) -> f64 {
    (0..gamma.len())
        .filter(|&i| gamma[i] > 0.0)
        .map(|i| 2.0 * priors.a[i] * gamma[i].ln() + 2.0 * priors.b[i] / gamma[i])
        .sum()
}

fn evidence_terms(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    dict.check_measurement(y)?;
    let c = marginal_covariance(dict, gamma, lambda)?;
    let f = SpdFactor::new(c).ok_or_else(|| {
        SblError::numerical("evidence covariance factorization", gamma.as_slice())
    })?;
    Ok(f.log_det() + y.dot(&f.solve_vec(y)))
}

fn check_priors(priors: &HyperPriors, n: usize) -> Result<()> {
    if priors.len() != n {
        return Err(SblError::Dimension(format!(
            "priors have {} entries, expected {n}",
            priors.len()
        )));
    }
    Ok(())
}

/// `log|C| + yᵀC⁻¹y − 2Σ_i (a_i log γ_i⁻¹ − b_i γ_i⁻¹)` evaluated densely.
///
/// Returns `+∞` (not an error) when some `γ_i = 0` has `b_i > 0`.
pub fn neg_log_likelihood(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    priors: &HyperPriors,
) -> Result<f64> {
    check_priors(priors, dict.n())?;
    let prior = dyn_objective(gamma, priors);
    if prior == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(evidence_terms(dict, y, gamma, lambda)? + prior)
}

/// Objective of the reduced model: pruned coordinates (`γ_i = 0`) are dropped
/// together with their hyperprior terms. This is the quantity every solver
/// decreases and the reference level for the fast-marginal-likelihood
/// action gains.
pub fn pruned_neg_log_likelihood(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    priors: &HyperPriors,
) -> Result<f64> {
    check_priors(priors, dict.n())?;
    Ok(evidence_terms(dict, y, gamma, lambda)? + active_prior_term(gamma, priors))
}

/// Reduced-model objective from an already computed posterior.
pub(crate) fn objective_from_parts(
    log_det_c: f64,
    y_cinv_y: f64,
    gamma_active: &DVector<f64>,
    a_active: &DVector<f64>,
    b_active: &DVector<f64>,
) -> f64 {
    let prior: f64 = (0..gamma_active.len())
        .map(|k| 2.0 * a_active[k] * gamma_active[k].ln() + 2.0 * b_active[k] / gamma_active[k])
        .sum();
    log_det_c + y_cinv_y + prior
}

/// `a_i = ξ`, `b_i = ξ x̃_i²`, `c = d = 0`.
pub fn map_prediction_to_hyperpriors(pred: &Prediction) -> HyperPriors {
    let n = pred.x_tilde.len();
    HyperPriors {
        a: DVector::from_element(n, pred.xi),
        b: pred.x_tilde.map(|x| pred.xi * x * x),
        c: 0.0,
        d: 0.0,
    }
}

/// Minimizer `b_i / a_i` of each hyperprior term.
pub fn gamma_dyn_optimum(priors: &HyperPriors) -> Result<DVector<f64>> {
    if let Some(i) = priors.a.iter().position(|&a| a <= 0.0) {
        return Err(SblError::Domain(format!(
            "a[{i}] = 0: the hyperprior term has no interior minimizer"
        )));
    }
    Ok(priors.b.component_div(&priors.a))
}

/// Marginal prior on one coefficient after integrating out its variance:
/// a Student's-t with `ν = 2a` and scale `√(b/a)`. Requires `a, b > 0`.
pub fn effective_prior_density(x: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0, "effective prior needs a, b > 0");
    let log_p = a * b.ln() + libm::lgamma(a + 0.5)
        - 0.5 * (2.0 * std::f64::consts::PI).ln()
        - libm::lgamma(a)
        - (a + 0.5) * (b + 0.5 * x * x).ln();
    log_p.exp()
}

/// Relative squared error `‖x − x̂‖² / ‖x‖²`.
pub fn rmse(x_hat: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(SblError::Dimension(
            "estimate and truth differ in length".into(),
        ));
    }
    let denom = x.norm_squared();
    if denom == 0.0 {
        return Err(SblError::Domain(
            "relative error of a zero ground truth".into(),
        ));
    }
    Ok((x - x_hat).norm_squared() / denom)
}

/// Recovery counts as successful below this relative error.
pub const SUCCESS_RMSE: f64 = 1e-2;

pub(crate) fn active_priors(
    priors: &HyperPriors,
    active: &[usize],
) -> (DVector<f64>, DVector<f64>) {
    (
        select_entries(&priors.a, active),
        select_entries(&priors.b, active),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scalar_posterior() {
        let phi = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 2.0);
        let p = posterior_moments(&phi, &y, &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert!((p.sigma[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.mu[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_posterior_decouples() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let p = posterior_moments(&phi, &y, &DVector::from_vec(vec![1.0, 1.0]), 1.0).unwrap();
        assert!((p.sigma[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.sigma[(1, 1)] - 0.2).abs() < 1e-15);
        assert!(p.sigma[(0, 1)].abs() < 1e-15);
        assert!((p.mu[0] - 0.5).abs() < 1e-15);
        assert!((p.mu[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = random_matrix(&mut rng, 4, 8);
        let y = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let gamma = DVector::from_fn(8, |_, _| rng.random_range(0.1..2.0));
        let lambda = 0.3;
        // oracle: explicit inverse of the precision matrix
        let prec =
            DMatrix::from_diagonal(&gamma.map(|g| 1.0 / g)) + phi.transpose() * &phi / lambda;
        let sigma = prec.try_inverse().unwrap();
        let mu = &sigma * phi.transpose() * &y / lambda;
        for p in [
            posterior_moments(&phi, &y, &gamma, lambda).unwrap(),
            posterior_moments_direct(&phi, &y, &gamma, lambda).unwrap(),
        ] {
            assert!(crate::linalg::max_rel_diff(p.sigma.as_slice(), sigma.as_slice()) < 1e-10);
            assert!(crate::linalg::max_rel_diff(p.mu.as_slice(), mu.as_slice()) < 1e-10);
        }
    }

    #[test]
    fn woodbury_route_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (m, k) in [(5, 12), (3, 9), (6, 6)] {
            let phi = random_matrix(&mut rng, m, k);
            let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let gamma = DVector::from_fn(k, |_, _| rng.random_range(0.05..3.0));
            let d = posterior_moments_direct(&phi, &y, &gamma, 0.1).unwrap();
            let w = posterior_moments_woodbury(&phi, &y, &gamma, 0.1).unwrap();
            assert!(crate::linalg::max_rel_diff(w.sigma.as_slice(), d.sigma.as_slice()) < 1e-9);
            assert!(crate::linalg::max_rel_diff(w.mu.as_slice(), d.mu.as_slice()) < 1e-9);
            assert!((w.log_det_c - d.log_det_c).abs() < 1e-9 * d.log_det_c.abs().max(1.0));
            assert!((w.y_cinv_y - d.y_cinv_y).abs() < 1e-9 * d.y_cinv_y.abs().max(1.0));
        }
    }

    #[test]
    fn posterior_rejects_bad_arguments() {
        let phi = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 1.0);
        assert!(matches!(
            posterior_moments(&phi, &y, &DVector::from_element(1, 0.0), 1.0),
            Err(SblError::Domain(_))
        ));
        assert!(matches!(
            posterior_moments(&phi, &y, &DVector::from_element(1, 1.0), 0.0),
            Err(SblError::Domain(_))
        ));
    }

    #[test]
    fn ill_conditioned_posterior_is_a_numerical_failure() {
        let phi = DMatrix::identity(2, 2);
        let y = DVector::from_element(2, 1.0);
        let gamma = DVector::from_vec(vec![1e-18, 1e3]);
        let err = posterior_moments(&phi, &y, &gamma, 1.0).unwrap_err();
        match err {
            SblError::NumericalFailure {
                gamma_min,
                gamma_max,
                ..
            } => {
                assert_eq!(gamma_min, 1e-18);
                assert_eq!(gamma_max, 1e3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn marginal_covariance_examples() {
        let d = Dictionary::from_rows(2, 2, &[1.0, 0.0, 0.0, 2.0]).unwrap();
        let c = marginal_covariance(&d, &DVector::from_vec(vec![1.0, 1.0]), 1.0).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]));
        let c0 = marginal_covariance(&d, &DVector::zeros(2), 0.7).unwrap();
        assert_eq!(c0, DMatrix::identity(2, 2) * 0.7);
    }

    #[test]
    fn marginal_covariance_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_matrix(&mut rng, 5, 12);
        let gamma = DVector::from_fn(12, |i, _| {
            if i % 3 == 0 {
                0.0
            } else {
                rng.random_range(0.0..2.0)
            }
        });
        let d = Dictionary::new(phi.clone()).unwrap();
        let c = marginal_covariance(&d, &gamma, 0.4).unwrap();
        let dense =
            &phi * DMatrix::from_diagonal(&gamma) * phi.transpose() + DMatrix::identity(5, 5) * 0.4;
        assert!((c - dense).abs().max() < 1e-12);
    }

    #[test]
    fn objective_examples() {
        let d = Dictionary::from_rows(1, 1, &[1.0]).unwrap();
        let y = DVector::from_element(1, 2.0);
        let g = DVector::from_element(1, 1.0);
        let v = neg_log_likelihood(&d, &y, &g, 1.0, &HyperPriors::uninformative(1)).unwrap();
        assert!((v - (2f64.ln() + 2.0)).abs() < 1e-14);
        let pr = HyperPriors::new(
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
            0.0,
        )
        .unwrap();
        let v2 = neg_log_likelihood(&d, &y, &g, 1.0, &pr).unwrap();
        assert!((v2 - (2f64.ln() + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn objective_is_infinite_when_a_pruned_coordinate_carries_b() {
        let d = Dictionary::from_rows(1, 2, &[1.0, 1.0]).unwrap();
        let y = DVector::from_element(1, 1.0);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let pr = HyperPriors::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            neg_log_likelihood(&d, &y, &g, 1.0, &pr).unwrap(),
            f64::INFINITY
        );
        assert!(pruned_neg_log_likelihood(&d, &y, &g, 1.0, &pr)
            .unwrap()
            .is_finite());
        // a_i > 0 with b_i = 0 on a pruned coordinate contributes nothing
        let pr2 = HyperPriors::new(
            DVector::from_vec(vec![0.0, 3.0]),
            DVector::zeros(2),
            0.0,
            0.0,
        )
        .unwrap();
        let base = neg_log_likelihood(&d, &y, &g, 1.0, &HyperPriors::uninformative(2)).unwrap();
        assert_eq!(neg_log_likelihood(&d, &y, &g, 1.0, &pr2).unwrap(), base);
    }

    #[test]
    fn dyn_objective_examples() {
        let g = DVector::from_element(1, 2.0);
        assert_eq!(dyn_objective(&g, &HyperPriors::uninformative(1)), 0.0);
        let pr = HyperPriors::new(
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 2.0),
            0.0,
            0.0,
        )
        .unwrap();
        assert!((dyn_objective(&g, &pr) - 2.0 * (2f64.ln() + 1.0)).abs() < 1e-14);
        // b/a minimizes each term: compare with neighbours
        let best = dyn_objective(&DVector::from_element(1, 2.0), &pr);
        for g2 in [1.9, 2.1, 1.0, 4.0] {
            assert!(dyn_objective(&DVector::from_element(1, g2), &pr) > best);
        }
    }

    #[test]
    fn mapping_examples() {
        let pr = map_prediction_to_hyperpriors(
            &Prediction::new(DVector::from_vec(vec![0.0, 2.0]), 0.5).unwrap(),
        );
        assert_eq!(pr.a.as_slice(), &[0.5, 0.5]);
        assert_eq!(pr.b.as_slice(), &[0.0, 2.0]);
        assert_eq!((pr.c, pr.d), (0.0, 0.0));
        let pr0 = map_prediction_to_hyperpriors(
            &Prediction::new(DVector::from_vec(vec![1.0, -3.0]), 0.0).unwrap(),
        );
        assert!(pr0.is_uninformative());
        let pr1 = map_prediction_to_hyperpriors(
            &Prediction::new(DVector::from_vec(vec![3.0]), 1.0).unwrap(),
        );
        assert_eq!(pr1.a[0], 1.0);
        assert_eq!(pr1.b[0], 9.0);
        assert_eq!(gamma_dyn_optimum(&pr1).unwrap()[0], 9.0);
    }

    #[test]
    fn gamma_dyn_optimum_examples() {
        let pr = HyperPriors::new(
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 8.0),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(gamma_dyn_optimum(&pr).unwrap()[0], 4.0);
        let pr = HyperPriors::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(gamma_dyn_optimum(&pr).unwrap().as_slice(), &[0.0, 1.0]);
        let x = DVector::from_vec(vec![0.5, -1.5, 0.0]);
        let pr = map_prediction_to_hyperpriors(&Prediction::new(x.clone(), 0.3).unwrap());
        let g = gamma_dyn_optimum(&pr).unwrap();
        for i in 0..3 {
            assert!((g[i] - x[i] * x[i]).abs() < 1e-15);
        }
        assert!(matches!(
            gamma_dyn_optimum(&HyperPriors::uninformative(2)),
            Err(SblError::Domain(_))
        ));
    }

    #[test]
    fn cauchy_case_of_effective_prior() {
        let p = effective_prior_density(0.0, 0.5, 0.5);
        assert!((p - 1.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn rmse_examples() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.0]);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert_eq!(rmse(&DVector::zeros(3), &x).unwrap(), 1.0);
        assert!(matches!(
            rmse(&x, &DVector::zeros(3)),
            Err(SblError::Domain(_))
        ));
    }

    #[test]
    fn dictionary_validation() {
        assert!(Dictionary::new(DMatrix::zeros(0, 3)).is_err());
        assert!(Dictionary::from_rows(1, 2, &[1.0, f64::NAN]).is_err());
        let d = Dictionary::from_rows(2, 2, &[3.0, 1.0, 4.0, 0.0]).unwrap();
        assert_eq!(d.column_sq_norms().as_slice(), &[25.0, 1.0]);
    }

    #[test]
    fn hyperprior_validation() {
        assert!(
            HyperPriors::new(DVector::from_element(1, -1.0), DVector::zeros(1), 0.0, 0.0).is_err()
        );
        assert!(HyperPriors::new(DVector::zeros(2), DVector::zeros(1), 0.0, 0.0).is_err());
        assert!(Prediction::new(DVector::zeros(1), -0.1).is_err());
    }
}
