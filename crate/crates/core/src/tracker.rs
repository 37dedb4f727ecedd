//! Causal tracking: each step's estimate is pushed through a dynamics model
//! and the prediction becomes the next step's hyperpriors.

use nalgebra::{DMatrix, DVector};

use crate::clock::Stopwatch;
use crate::em::{solve_em, solve_em_from, EmOptions};
use crate::error::{Result, SblError};
use crate::fml::{solve_fml, FmlOptions};
use crate::model::{
    map_prediction_to_hyperpriors, rmse, Dictionary, HyperPriors, Prediction, SblEstimate,
};
use crate::rwl1::{solve_rwl1, RwlOptions};

/// The map `x̃ = f_t(x̂_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    Identity,
    /// One matrix for every step.
    Linear(DMatrix<f64>),
    /// `F_t` for each transition; entry `k` maps step `k + 1` to step `k + 2`
    /// (1-based steps). The last matrix is reused past the end.
    TimeVarying(Vec<DMatrix<f64>>),
    /// Normalized Gaussian blur with standard deviation `width` (in samples),
    /// zero beyond the signal edges.
    Kernel {
        width: f64,
    },
}

impl DynamicsModel {
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |f: &DMatrix<f64>| {
            if f.shape() != (n, n) {
                return Err(SblError::Dimension(format!(
                    "dynamics matrix must be {n}x{n}"
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(SblError::InvalidInput(
                    "dynamics matrix has non-finite entries".into(),
                ));
            }
            Ok(())
        };
        match self {
            DynamicsModel::Identity => Ok(()),
            DynamicsModel::Linear(f) => check(f),
            DynamicsModel::TimeVarying(fs) => {
                if fs.is_empty() {
                    return Err(SblError::InvalidInput("no dynamics matrices given".into()));
                }
                fs.iter().try_for_each(check)
            }
            DynamicsModel::Kernel { width } => {
                if *width > 0.0 && width.is_finite() {
                    Ok(())
                } else {
                    Err(SblError::InvalidInput(
                        "kernel width must be positive".into(),
                    ))
                }
            }
        }
    }

    /// Prediction for step `t` (1-based, `t ≥ 2`) from the step `t − 1` estimate.
    pub fn predict(&self, t: usize, x_prev: &DVector<f64>) -> DVector<f64> {
        match self {
            DynamicsModel::Identity => x_prev.clone(),
            DynamicsModel::Linear(f) => f * x_prev,
            DynamicsModel::TimeVarying(fs) => {
                let k = t.saturating_sub(2).min(fs.len() - 1);
                &fs[k] * x_prev
            }
            DynamicsModel::Kernel { width } => blur(x_prev, *width),
        }
    }
}

fn blur(x: &DVector<f64>, width: f64) -> DVector<f64> {
    let radius = (4.0 * width).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * width * width)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let n = x.len() as isize;
    DVector::from_fn(x.len(), |i, _| {
        let mut acc = 0.0;
        for (o, wk) in (-radius..=radius).zip(&w) {
            let j = i as isize + o;
            if (0..n).contains(&j) {
                acc += wk * x[j as usize];
            }
        }
        acc / total
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverKind {
    Em(EmOptions),
    Fml(FmlOptions),
    Rwl1(RwlOptions),
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Em(_) => "em",
            SolverKind::Fml(_) => "fml",
            SolverKind::Rwl1(_) => "rwl1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// Learned within each step, restarting from `init` every step.
    Learned {
        init: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub xi: f64,
    pub solver: SolverKind,
    pub lambda: LambdaPolicy,
    /// EM only: start each step from the previous step's variances and noise.
    pub warm_start: bool,
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(SblError::InvalidInput(format!(
                "xi must be finite and >= 0, got {}",
                self.xi
            )));
        }
        let lam = match self.lambda {
            LambdaPolicy::Fixed(v) | LambdaPolicy::Learned { init: v } => v,
        };
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(SblError::InvalidInput("lambda must be positive".into()));
        }
        if matches!(self.lambda, LambdaPolicy::Learned { .. })
            && matches!(self.solver, SolverKind::Rwl1(_))
        {
            return Err(SblError::InvalidInput(
                "the reweighted-l1 solver keeps lambda fixed".into(),
            ));
        }
        if self.warm_start && !matches!(self.solver, SolverKind::Em(_)) {
            return Err(SblError::InvalidInput(
                "warm starts are only supported by the EM solver".into(),
            ));
        }
        Ok(())
    }
}

/// Runs one static solve with the given solver and noise policy.
pub fn solve_static(
    dict: &Dictionary,
    y: &DVector<f64>,
    priors: &HyperPriors,
    solver: &SolverKind,
    lambda: LambdaPolicy,
) -> Result<SblEstimate> {
    match (solver, lambda) {
        (SolverKind::Em(o), LambdaPolicy::Fixed(l)) => solve_em(
            dict,
            y,
            priors,
            &EmOptions {
                learn_lambda: false,
                lambda_init: l,
                ..o.clone()
            },
        ),
        (SolverKind::Em(o), LambdaPolicy::Learned { init }) => solve_em(
            dict,
            y,
            priors,
            &EmOptions {
                learn_lambda: true,
                lambda_init: init,
                ..o.clone()
            },
        ),
        (SolverKind::Fml(o), LambdaPolicy::Fixed(l)) => solve_fml(
            dict,
            y,
            priors,
            l,
            &FmlOptions {
                learn_lambda: false,
                ..o.clone()
            },
        ),
        (SolverKind::Fml(o), LambdaPolicy::Learned { init }) => solve_fml(
            dict,
            y,
            priors,
            init,
            &FmlOptions {
                learn_lambda: true,
                ..o.clone()
            },
        ),
        (SolverKind::Rwl1(o), LambdaPolicy::Fixed(l)) => solve_rwl1(dict, y, priors, l, o),
        (SolverKind::Rwl1(_), LambdaPolicy::Learned { .. }) => Err(SblError::InvalidInput(
            "the reweighted-l1 solver keeps lambda fixed".into(),
        )),
    }
}

/// Outcome of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// `None` when the solver failed at this step.
    pub estimate: Option<SblEstimate>,
    /// Dense estimate (zero after a failure).
    pub x_hat: DVector<f64>,
    pub rmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_nanos: u64,
    pub error: Option<String>,
}

/// Runs the tracker over `measurements`. `truth`, if given, must have one
/// entry per step and fills the per-step rMSE.
pub fn sbl_df_run(
    dict: &Dictionary,
    measurements: &[DVector<f64>],
    model: &DynamicsModel,
    cfg: &TrackerConfig,
    truth: Option<&[DVector<f64>]>,
) -> Result<Vec<StepResult>> {
    cfg.validate()?;
    model.validate(dict.n())?;
    if measurements.is_empty() {
        return Err(SblError::InvalidInput("need at least one time step".into()));
    }
    if let Some(tr) = truth {
        if tr.len() != measurements.len() {
            return Err(SblError::Dimension(
                "truth and measurements differ in length".into(),
            ));
        }
    }
    for y in measurements {
        dict.check_measurement(y)?;
    }
    let n = dict.n();
    let mut out: Vec<StepResult> = Vec::with_capacity(measurements.len());
    for (k, y) in measurements.iter().enumerate() {
        let t = k + 1;
        let prev = out.last().filter(|r| r.error.is_none());
        let priors = match prev {
            Some(p) => {
                map_prediction_to_hyperpriors(&Prediction::new(model.predict(t, &p.x_hat), cfg.xi)?)
            }
            None => HyperPriors::uninformative(n),
        };
        let sw = Stopwatch::start();
        let res = match (
            cfg.warm_start,
            &cfg.solver,
            prev.and_then(|p| p.estimate.as_ref()),
        ) {
            (true, SolverKind::Em(o), Some(e)) => {
                let (learn, init) = match cfg.lambda {
                    LambdaPolicy::Fixed(l) => (false, l),
                    LambdaPolicy::Learned { .. } => (true, e.lambda),
                };
                let g0 = e.gamma.map(|g| if g > 0.0 { g } else { o.gamma_init });
                let opts = EmOptions {
                    learn_lambda: learn,
                    ..o.clone()
                };
                solve_em_from(dict, y, &priors, &opts, &g0, init)
            }
            _ => solve_static(dict, y, &priors, &cfg.solver, cfg.lambda),
        };
        let wall_nanos = sw.elapsed_nanos();
        let step = match res {
            Ok(est) => {
                let x_hat = est.dense_estimate();
                StepResult {
                    rmse: truth.and_then(|tr| rmse(&x_hat, &tr[k]).ok()),
                    iterations: est.iterations,
                    converged: est.converged,
                    x_hat,
                    estimate: Some(est),
                    wall_nanos,
                    error: None,
                }
            }
            Err(e) => {
                let x_hat = DVector::zeros(n);
                StepResult {
                    rmse: truth.and_then(|tr| rmse(&x_hat, &tr[k]).ok()),
                    x_hat,
                    estimate: None,
                    iterations: 0,
                    converged: false,
                    wall_nanos,
                    error: Some(e.to_string()),
                }
            }
        };
        out.push(step);
    }
    Ok(out)
}
