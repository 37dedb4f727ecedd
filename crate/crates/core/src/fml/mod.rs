//! Fast marginal likelihood: greedy one-coordinate moves (re-estimate, add,
//! delete) with rank-one maintenance of the posterior and of `S, Q`.

mod roots;
mod state;

pub use roots::{
    best_gamma, cubic_coefficients, d2_ell, d_ell, ell_gamma_j, positive_real_cubic_roots,
    select_gamma, stationary_points,
};
pub use state::{FmlState, UPDATE_TOLERANCE};

use nalgebra::DVector;

use crate::clock::Stopwatch;
use crate::em::{check_problem, LAMBDA_FLOOR};
use crate::error::{Result, SblError};
use crate::model::{Dictionary, HyperPriors, SblEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Reestimate,
    Add,
    Delete,
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateAction {
    pub index: usize,
    pub kind: ActionKind,
    /// Proposed variance, 0 for a deletion or no-op.
    pub gamma_new: f64,
    /// Decrease of the objective if applied.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmlOptions {
    pub tau: f64,
    /// Actions gaining less than `tol · (|ℓ| + 1)` stop the solver.
    pub tol: f64,
    /// Defaults to `100 · N` when `None`.
    pub max_actions: Option<usize>,
    pub learn_lambda: bool,
    /// With `learn_lambda`, re-estimate the noise every this many actions.
    pub lambda_every: usize,
    /// Check every rank-one update against a full rebuild and resynchronize
    /// from the rebuild when they disagree.
    pub verify: bool,
}

impl Default for FmlOptions {
    fn default() -> Self {
        FmlOptions {
            tau: 1e-1,
            tol: 1e-4,
            max_actions: None,
            learn_lambda: false,
            lambda_every: 10,
            verify: cfg!(debug_assertions),
        }
    }
}

impl FmlOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite() && self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SblError::InvalidInput(
                "tau and tol must be positive".into(),
            ));
        }
        if self.max_actions == Some(0) || self.lambda_every == 0 {
            return Err(SblError::InvalidInput(
                "action counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluates the best move for coordinate `j`.
pub fn propose_action(
    state: &FmlState,
    priors: &HyperPriors,
    tau: f64,
    j: usize,
) -> CandidateAction {
    let (s, q, a, b) = (state.s[j], state.q[j], priors.a[j], priors.b[j]);
    let g_new = best_gamma(s, q, a, b);
    let active = state.is_active(j);
    let (kind, gamma_new, delta) = match (active, g_new > tau) {
        (true, true) => (
            ActionKind::Reestimate,
            g_new,
            ell_gamma_j(state.gamma[j], s, q, a, b) - ell_gamma_j(g_new, s, q, a, b),
        ),
        (false, true) => (ActionKind::Add, g_new, -ell_gamma_j(g_new, s, q, a, b)),
        // leaving the model drops the coordinate's terms entirely
        (true, false) => (
            ActionKind::Delete,
            0.0,
            ell_gamma_j(state.gamma[j], s, q, a, b),
        ),
        (false, false) => (ActionKind::NoOp, 0.0, 0.0),
    };
    CandidateAction {
        index: j,
        kind,
        gamma_new,
        delta,
    }
}

/// The proposal with the largest gain; ties go to the lowest index.
pub fn best_action(state: &FmlState, priors: &HyperPriors, tau: f64) -> CandidateAction {
    let mut best = propose_action(state, priors, tau, 0);
    for j in 1..state.n() {
        let c = propose_action(state, priors, tau, j);
        if c.delta > best.delta {
            best = c;
        }
    }
    best
}

/// Applies a proposal with rank-one updates. If the updated state is invalid
/// it is rebuilt from scratch. With `verify` the update is also compared with
/// a rebuild, and the rebuild replaces it when they disagree beyond
/// `UPDATE_TOLERANCE`.
pub fn apply_action(
    state: &mut FmlState,
    dict: &Dictionary,
    y: &DVector<f64>,
    action: &CandidateAction,
    verify: bool,
) -> Result<()> {
    let j = action.index;
    let res = match action.kind {
        ActionKind::Reestimate => state.reestimate(dict, j, action.gamma_new),
        ActionKind::Add => state.add(dict, j, action.gamma_new),
        ActionKind::Delete => state.delete(dict, j),
        ActionKind::NoOp => return Ok(()),
    };
    match res {
        Ok(()) => {
            if verify {
                // drift on an ill-conditioned C: continue from the rebuild
                let fresh =
                    FmlState::recompute(dict, y, &state.active, &state.gamma, state.lambda)?;
                if !(state.max_rel_diff(&fresh) <= UPDATE_TOLERANCE) {
                    *state = fresh;
                }
            }
            Ok(())
        }
        Err(SblError::NumericalFailure { .. }) => {
            let active = state.active.clone();
            let gamma = state.gamma.clone();
            *state = FmlState::recompute(dict, y, &active, &gamma, state.lambda)?;
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Starts from the column best correlated with `y` (lowest index on ties).
/// `y = 0` gives the empty model.
pub fn fml_initialize(
    dict: &Dictionary,
    y: &DVector<f64>,
    lambda: f64,
    priors: &HyperPriors,
    tau: f64,
) -> Result<FmlState> {
    check_problem(dict, y, priors)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SblError::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let mut st = FmlState::empty(dict, y, lambda);
    if y.iter().all(|&v| v == 0.0) {
        return Ok(st);
    }
    let corr = dict.phi().tr_mul(y);
    let mut j = 0;
    for i in 1..dict.n() {
        if corr[i].abs() > corr[j].abs() {
            j = i;
        }
    }
    let g = best_gamma(st.s[j], st.q[j], priors.a[j], priors.b[j]);
    if g > tau {
        st.add(dict, j, g)?;
    }
    Ok(st)
}

fn empty_objective(y: &DVector<f64>, lambda: f64) -> f64 {
    y.len() as f64 * lambda.ln() + y.norm_squared() / lambda
}

/// Runs the greedy loop from [`fml_initialize`].
pub fn solve_fml(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    lambda: f64,
    opts: &FmlOptions,
) -> Result<SblEstimate> {
    opts.validate()?;
    let n = dict.n();
    let max_actions = opts.max_actions.unwrap_or(100 * n);
    let mut st = fml_initialize(dict, y, lambda, priors, opts.tau)?;
    let mut est = SblEstimate::empty(n, lambda, opts.tau);
    est.converged = false;
    let mut ell = match st.active.first() {
        Some(&j) => {
            empty_objective(y, lambda)
                + ell_gamma_j(st.gamma[j], st.s[j], st.q[j], priors.a[j], priors.b[j])
        }
        None => empty_objective(y, lambda),
    };
    if !st.active.is_empty() {
        est.diagnostics.adds += 1;
    }
    est.objective_trace.push(ell);

    let mut actions = 0;
    loop {
        if actions >= max_actions {
            break;
        }
        let sw = Stopwatch::start();
        let best = best_action(&st, priors, opts.tau);
        if !(best.delta > opts.tol * (ell.abs() + 1.0)) {
            if opts.learn_lambda && update_lambda(&mut st, dict, y)? > opts.tol {
                ell = rebuild_objective(&st, dict, y, priors)?;
                est.objective_trace.push(ell);
                continue;
            }
            est.converged = true;
            break;
        }
        apply_action(&mut st, dict, y, &best, opts.verify)?;
        actions += 1;
        match best.kind {
            ActionKind::Reestimate => est.diagnostics.reestimates += 1,
            ActionKind::Add => est.diagnostics.adds += 1,
            ActionKind::Delete => est.diagnostics.deletes += 1,
            ActionKind::NoOp => {}
        }
        ell -= best.delta;
        if opts.learn_lambda && actions % opts.lambda_every == 0 {
            update_lambda(&mut st, dict, y)?;
            ell = rebuild_objective(&st, dict, y, priors)?;
        }
        est.objective_trace.push(ell);
        est.diagnostics.active_sizes.push(st.active.len());
        est.diagnostics.iteration_nanos.push(sw.elapsed_nanos());
    }
    est.iterations = actions;
    Ok(export(st, est))
}

/// Noise update from the current posterior followed by a full rebuild.
/// Returns the relative change of `λ`.
fn update_lambda(st: &mut FmlState, dict: &Dictionary, y: &DVector<f64>) -> Result<f64> {
    let m = dict.m() as f64;
    let mut resid = y.clone();
    let mut ratio = 0.0;
    for (p, &i) in st.active.iter().enumerate() {
        resid.axpy(-st.mu[p], &dict.phi().column(i), 1.0);
        ratio += st.sigma[(p, p)] / st.gamma[i];
    }
    let k = st.active.len() as f64;
    let old = st.lambda;
    let new = ((resid.norm_squared() + old * (k - ratio)) / m).max(LAMBDA_FLOOR);
    let active = st.active.clone();
    let gamma = st.gamma.clone();
    *st = FmlState::recompute(dict, y, &active, &gamma, new)?;
    Ok((new - old).abs() / old)
}

fn rebuild_objective(
    st: &FmlState,
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
) -> Result<f64> {
    crate::model::pruned_neg_log_likelihood(dict, y, &st.gamma, st.lambda, priors)
}

fn export(st: FmlState, mut est: SblEstimate) -> SblEstimate {
    let mut order: Vec<usize> = (0..st.active.len()).collect();
    order.sort_by_key(|&p| st.active[p]);
    est.active = order.iter().map(|&p| st.active[p]).collect();
    est.mu = DVector::from_iterator(order.len(), order.iter().map(|&p| st.mu[p]));
    est.sigma = nalgebra::DMatrix::from_fn(order.len(), order.len(), |r, c| {
        st.sigma[(order[r], order[c])]
    });
    est.gamma = st.gamma;
    est.lambda = st.lambda;
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{solve_em, EmOptions};
    use crate::model::{
        map_prediction_to_hyperpriors, pruned_neg_log_likelihood, rmse, Prediction,
    };
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn instance(
        seed: u64,
        m: usize,
        n: usize,
        s: usize,
        noise: f64,
    ) -> (Dictionary, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi =
            DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng)) / (m as f64).sqrt();
        let mut x = DVector::zeros(n);
        let mut placed = 0;
        while placed < s {
            let i = rng.random_range(0..n);
            if x[i] == 0.0 {
                let v: f64 = StandardNormal.sample(&mut rng);
                x[i] = v.signum() * (v.abs() + 0.5);
                placed += 1;
            }
        }
        let e = DVector::from_fn(m, |_, _| {
            noise.sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let y = &phi * &x + e;
        (Dictionary::new(phi).unwrap(), y, x)
    }

    fn state_1d(gamma: f64, s: f64, q: f64) -> FmlState {
        let d = Dictionary::from_rows(1, 1, &[1.0]).unwrap();
        let mut st = FmlState::empty(&d, &DVector::from_element(1, 1.0), 1.0);
        st.s[0] = s;
        st.q[0] = q;
        if gamma > 0.0 {
            st = FmlState::recompute(
                &d,
                &DVector::from_element(1, 1.0),
                &[0],
                &DVector::from_element(1, gamma),
                1.0,
            )
            .unwrap();
            st.s[0] = s;
            st.q[0] = q;
        }
        st
    }

    #[test]
    fn proposal_examples() {
        let pr = HyperPriors::uninformative(1);
        let add = propose_action(&state_1d(0.0, 1.0, 2.0), &pr, 0.1, 0);
        assert_eq!(add.kind, ActionKind::Add);
        assert!((add.gamma_new - 3.0).abs() < 1e-12);
        assert!((add.delta - 1.6137).abs() < 1e-4);
        let re = propose_action(&state_1d(3.0, 1.0, 2.0), &pr, 0.1, 0);
        assert_eq!(re.kind, ActionKind::Reestimate);
        assert!(re.delta.abs() < 1e-12);
        let del = propose_action(&state_1d(1.0, 1.0, 0.5), &pr, 0.1, 0);
        assert_eq!(del.kind, ActionKind::Delete);
        // ℓ(1) with s = 1, q = 0.5: ln 2 − 0.25/2
        assert!((del.delta - (2f64.ln() - 0.125)).abs() < 1e-12);
        let noop = propose_action(&state_1d(0.0, 1.0, 0.5), &pr, 0.1, 0);
        assert_eq!(noop.kind, ActionKind::NoOp);
        assert_eq!(noop.delta, 0.0);
    }

    #[test]
    fn initialization_examples() {
        let d = Dictionary::from_rows(1, 2, &[1.0, 0.1]).unwrap();
        let y = DVector::from_element(1, 2.0);
        let st = fml_initialize(&d, &y, 1.0, &HyperPriors::uninformative(2), 0.1).unwrap();
        assert_eq!(st.active, vec![0]);

        let d = Dictionary::from_rows(1, 1, &[1.0]).unwrap();
        let st = fml_initialize(&d, &y, 1.0, &HyperPriors::uninformative(1), 0.1).unwrap();
        assert!((st.gamma[0] - 3.0).abs() < 1e-12);
        assert!((st.mu[0] - 1.5).abs() < 1e-12);

        let st = fml_initialize(
            &d,
            &DVector::zeros(1),
            1.0,
            &HyperPriors::uninformative(1),
            0.1,
        )
        .unwrap();
        assert!(st.active.is_empty());
    }

    #[test]
    fn initialized_statistics_match_dense() {
        let (d, y, _) = instance(12, 8, 20, 3, 1e-3);
        let st = fml_initialize(&d, &y, 0.05, &HyperPriors::uninformative(20), 0.1).unwrap();
        let cinv = crate::model::marginal_covariance(&d, &st.gamma, 0.05)
            .unwrap()
            .try_inverse()
            .unwrap();
        let s = (d.phi().transpose() * &cinv * d.phi()).diagonal();
        let q = d.phi().transpose() * &cinv * &y;
        assert!(crate::linalg::max_rel_diff(st.big_s.as_slice(), s.as_slice()) < 1e-10);
        assert!(crate::linalg::max_rel_diff(st.big_q.as_slice(), q.as_slice()) < 1e-10);
    }

    #[test]
    fn scalar_solve() {
        let d = Dictionary::from_rows(1, 1, &[1.0]).unwrap();
        let e = solve_fml(
            &d,
            &DVector::from_element(1, 2.0),
            &HyperPriors::uninformative(1),
            1.0,
            &FmlOptions::default(),
        )
        .unwrap();
        assert!(e.converged);
        assert!(e.iterations <= 2);
        assert!((e.gamma[0] - 3.0).abs() < 1e-12);
        assert!((e.mu[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn close_to_em() {
        let (d, y, x) = instance(31, 32, 64, 4, 1e-3);
        let pr = HyperPriors::uninformative(64);
        let f = solve_fml(&d, &y, &pr, 1e-3, &FmlOptions::default()).unwrap();
        let e = solve_em(
            &d,
            &y,
            &pr,
            &EmOptions {
                lambda_init: 1e-3,
                ..EmOptions::default()
            },
        )
        .unwrap();
        let rf = rmse(&f.dense_estimate(), &x).unwrap();
        let re = rmse(&e.dense_estimate(), &x).unwrap();
        assert!(rf <= 2.0 * re, "fml {rf} em {re}");
    }

    #[test]
    fn gains_match_realized_decrease() {
        let (d, y, x) = instance(7, 16, 32, 4, 1e-3);
        let lambda = 1e-3;
        for pr in [
            HyperPriors::uninformative(32),
            map_prediction_to_hyperpriors(&Prediction::new(x.map(|v| v * 1.1), 1.0).unwrap()),
        ] {
            let tau = 0.1;
            let mut st = fml_initialize(&d, &y, lambda, &pr, tau).unwrap();
            let mut before = pruned_neg_log_likelihood(&d, &y, &st.gamma, lambda, &pr).unwrap();
            for _ in 0..200 {
                let a = best_action(&st, &pr, tau);
                if !(a.delta > 1e-4 * (before.abs() + 1.0)) {
                    break;
                }
                apply_action(&mut st, &d, &y, &a, true).unwrap();
                let after = pruned_neg_log_likelihood(&d, &y, &st.gamma, lambda, &pr).unwrap();
                assert!(
                    ((before - after) - a.delta).abs() <= 1e-6 * a.delta.abs(),
                    "{:?}: {} vs {}",
                    a.kind,
                    before - after,
                    a.delta
                );
                assert!(after < before);
                before = after;
            }
        }
    }

    #[test]
    fn exact_prediction_needs_fewer_actions() {
        let (d, y, x) = instance(3, 32, 64, 4, 1e-3);
        let plain = solve_fml(
            &d,
            &y,
            &HyperPriors::uninformative(64),
            1e-3,
            &FmlOptions::default(),
        )
        .unwrap();
        let pr = map_prediction_to_hyperpriors(&Prediction::new(x.clone(), 1.0).unwrap());
        let informed = solve_fml(&d, &y, &pr, 1e-3, &FmlOptions::default()).unwrap();
        assert!(
            informed.iterations < plain.iterations,
            "{} vs {}",
            informed.iterations,
            plain.iterations
        );
    }

    #[test]
    fn learned_noise_tracks_the_truth() {
        let (d, y, _) = instance(5, 40, 80, 4, 1e-2);
        let opts = FmlOptions {
            learn_lambda: true,
            ..FmlOptions::default()
        };
        let e = solve_fml(&d, &y, &HyperPriors::uninformative(80), 1.0, &opts).unwrap();
        assert!(e.converged);
        assert!(e.lambda > 2e-3 && e.lambda < 5e-2, "{}", e.lambda);
    }

    #[test]
    fn estimate_is_sorted_and_consistent() {
        let (d, y, _) = instance(9, 16, 40, 5, 1e-3);
        let e = solve_fml(
            &d,
            &y,
            &HyperPriors::uninformative(40),
            1e-3,
            &FmlOptions::default(),
        )
        .unwrap();
        assert!(e.active.windows(2).all(|w| w[0] < w[1]));
        let p = crate::model::posterior_moments(
            &d.columns(&e.active),
            &y,
            &crate::linalg::select_entries(&e.gamma, &e.active),
            e.lambda,
        )
        .unwrap();
        assert!(crate::linalg::max_rel_diff(e.sigma.as_slice(), p.sigma.as_slice()) < 1e-8);
        assert!(crate::linalg::max_rel_diff(e.mu.as_slice(), p.mu.as_slice()) < 1e-8);
    }
}
