//! The four studies. Trials run in parallel; every trial derives its own
//! seeds, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use sbldf::model::{
    map_prediction_to_hyperpriors, rmse, Dictionary, HyperPriors, Prediction, SblEstimate,
};
use sbldf::synth::{
    corrupt_prediction, gen_dictionary, gen_sparse_signal, gen_tracking, measure, trial_seed,
    DictModel, SignalModel, Structure, SupportError,
};
use sbldf::tracker::{
    sbl_df_run, solve_static, DynamicsModel, LambdaPolicy, SolverKind, TrackerConfig,
};
use sbldf::{EmOptions, FmlOptions, RwlOptions};

use crate::config::{Experiment, ExperimentConfig, NoisePolicy, SolverChoice};
use crate::rows::{is_success, sort_rows, PointKey, ResultRow, TraceRow};
use crate::stats::median;

/// Streams of randomness inside one trial.
#[derive(Clone, Copy)]
enum Purpose {
    Dictionary = 1,
    Signal = 2,
    Noise = 3,
    Corruption = 4,
    Tracking = 5,
}

/// Seed for one purpose inside a trial.
fn sub_seed(seed: u64, p: Purpose) -> u64 {
    seed ^ ((p as u64) << 56)
}

pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceRow>,
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    match cfg.experiment {
        Experiment::Measurements | Experiment::Coherence => run_single_step(cfg),
        Experiment::Tracking => run_tracking(cfg),
        Experiment::Runtime => run_runtime(cfg),
    }
}

fn em_options(cfg: &ExperimentConfig) -> EmOptions {
    EmOptions {
        tau: cfg.tau_em,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        ..EmOptions::default()
    }
}

fn fml_options(cfg: &ExperimentConfig) -> FmlOptions {
    FmlOptions {
        tau: cfg.tau_fml,
        tol: cfg.tol,
        verify: false,
        ..FmlOptions::default()
    }
}

fn solver_kind(cfg: &ExperimentConfig, choice: SolverChoice) -> SolverKind {
    match choice {
        SolverChoice::Em => SolverKind::Em(em_options(cfg)),
        SolverChoice::Fml => SolverKind::Fml(fml_options(cfg)),
    }
}

fn lambda_policy(cfg: &ExperimentConfig) -> LambdaPolicy {
    match cfg.lambda {
        NoisePolicy::Fixed(l) => LambdaPolicy::Fixed(l),
        NoisePolicy::Learned => LambdaPolicy::Learned {
            init: cfg.lambda_init,
        },
    }
}

fn structure_value(s: Structure) -> f64 {
    match s {
        Structure::Preset => 0.0,
        Structure::Param(c) => c,
    }
}

/// Fields shared by every row of one trial at one point.
#[derive(Clone)]
struct RowBase {
    experiment: Experiment,
    trial: u64,
    seed: u64,
    n: usize,
    m: usize,
    s: usize,
    sigma_obs2: f64,
    sigma_dyn2: f64,
    support_errors: i64,
    structure_c: f64,
}

impl RowBase {
    fn row(&self, solver: &str, xi: f64, t: i64, solve: &Solve) -> ResultRow {
        ResultRow {
            experiment: self.experiment.name().into(),
            trial: self.trial,
            seed: self.seed,
            n: self.n,
            m: self.m,
            s: self.s,
            sigma_obs2: self.sigma_obs2,
            sigma_dyn2: self.sigma_dyn2,
            support_errors: self.support_errors,
            structure_c: self.structure_c,
            xi,
            solver: solver.into(),
            t,
            rmse: solve.rmse,
            success: is_success(solve.rmse) as u8,
            iters: solve.iters,
            actions: solve.actions,
            wall_ms: solve.wall_ms,
            converged: solve.converged as u8,
        }
    }
}

struct Solve {
    rmse: f64,
    iters: usize,
    actions: usize,
    wall_ms: f64,
    converged: bool,
    estimate: Option<SblEstimate>,
}

fn timed_solve(
    dict: &Dictionary,
    y: &DVector<f64>,
    x: &DVector<f64>,
    priors: &HyperPriors,
    solver: &SolverKind,
    lambda: LambdaPolicy,
) -> Solve {
    let start = Instant::now();
    let res = solve_static(dict, y, priors, solver, lambda);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match res {
        Ok(est) => Solve {
            rmse: rmse(&est.dense_estimate(), x).unwrap_or(f64::INFINITY),
            iters: est.iterations,
            actions: est.diagnostics.adds + est.diagnostics.deletes + est.diagnostics.reestimates,
            wall_ms,
            converged: est.converged,
            estimate: Some(est),
        },
        // a failed solve counts as the zero estimate
        Err(_) => Solve {
            rmse: rmse(&DVector::zeros(x.len()), x).unwrap_or(f64::INFINITY),
            iters: 0,
            actions: 0,
            wall_ms,
            converged: false,
            estimate: None,
        },
    }
}

fn dict_model(cfg: &ExperimentConfig, structure: Structure) -> DictModel {
    DictModel {
        kind: cfg.dict,
        structure,
        block_size: cfg.block_size,
    }
}

/// Dynamics-error levels: `(support_errors column, corruption, σ_dyn²)`.
fn levels(cfg: &ExperimentConfig) -> Vec<(i64, SupportError, f64)> {
    let mut out = Vec::new();
    for &v in &cfg.sigma_dyn2 {
        match cfg.swap_prob {
            Some(p) => out.push((-1, SupportError::SwapProb(p), v)),
            None => out.extend(
                cfg.support_errors
                    .iter()
                    .map(|&k| (k as i64, SupportError::Swaps(k), v)),
            ),
        }
    }
    out
}

fn cartesian(cfg: &ExperimentConfig) -> Vec<(usize, f64, Structure, u64)> {
    let mut tasks = Vec::new();
    for &m in &cfg.m {
        for &sigma in &cfg.sigma_obs2 {
            for &c in &cfg.structure_c {
                for trial in 0..cfg.trials as u64 {
                    tasks.push((m, sigma, c, trial));
                }
            }
        }
    }
    tasks
}

/// One-step recovery with a corrupted prediction. The measurement study keeps
/// every ξ of the grid and adds the rows of the best ξ per point (highest
/// success rate); the coherence study keeps only the best ξ per point
/// (lowest median rMSE). Both emit the static baseline for every trial.
fn run_single_step(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let name = cfg.solver.name();
    let df_name = format!("{name}-df");
    let solver = solver_kind(cfg, cfg.solver);
    let lambda = lambda_policy(cfg);
    let levels = levels(cfg);
    let per_trial: Vec<Vec<ResultRow>> = cartesian(cfg)
        .into_par_iter()
        .map(
            |(m, sigma_obs2, structure, trial)| -> anyhow::Result<Vec<ResultRow>> {
                let seed = trial_seed(cfg.seed, trial);
                let dict = gen_dictionary(
                    m,
                    cfg.n,
                    &dict_model(cfg, structure),
                    sub_seed(seed, Purpose::Dictionary),
                )?;
                let x = gen_sparse_signal(
                    cfg.n,
                    &SignalModel {
                        kind: cfg.signal,
                        s: cfg.s,
                    },
                    sub_seed(seed, Purpose::Signal),
                )?;
                let y = measure(&dict, &x, sigma_obs2, sub_seed(seed, Purpose::Noise))?;
                let baseline = timed_solve(
                    &dict,
                    &y,
                    &x,
                    &HyperPriors::uninformative(cfg.n),
                    &solver,
                    lambda,
                );
                let mut rows = Vec::new();
                for &(support_errors, err, sigma_dyn2) in &levels {
                    let base = RowBase {
                        experiment: cfg.experiment,
                        trial,
                        seed,
                        n: cfg.n,
                        m,
                        s: cfg.s,
                        sigma_obs2,
                        sigma_dyn2,
                        support_errors,
                        structure_c: structure_value(structure),
                    };
                    rows.push(base.row(name, 0.0, -1, &baseline));
                    let x_tilde = corrupt_prediction(
                        &x,
                        err,
                        sigma_dyn2,
                        sub_seed(seed, Purpose::Corruption),
                    )?;
                    for &xi in &cfg.xi_grid {
                        let priors =
                            map_prediction_to_hyperpriors(&Prediction::new(x_tilde.clone(), xi)?);
                        rows.push(base.row(
                            &df_name,
                            xi,
                            -1,
                            &timed_solve(&dict, &y, &x, &priors, &solver, lambda),
                        ));
                    }
                }
                Ok(rows)
            },
        )
        .collect::<anyhow::Result<_>>()?;
    let grid_rows: Vec<ResultRow> = per_trial.into_iter().flatten().collect();
    let best = best_xi(&grid_rows, &df_name, cfg.experiment);
    let mut rows: Vec<ResultRow> = match cfg.experiment {
        Experiment::Measurements => {
            let mut extra: Vec<ResultRow> = grid_rows
                .iter()
                .filter(|r| r.solver == df_name && best.get(&r.point()) == Some(&r.xi.to_bits()))
                .cloned()
                .map(|mut r| {
                    r.solver = format!("{df_name}-best");
                    r
                })
                .collect();
            extra.extend(grid_rows);
            extra
        }
        _ => grid_rows
            .into_iter()
            .filter(|r| r.solver != df_name || best.get(&r.point()) == Some(&r.xi.to_bits()))
            .collect(),
    };
    sort_rows(&mut rows);
    Ok(Outcome {
        rows,
        traces: vec![],
    })
}

/// Chosen ξ (as bits) per point. Ties go to the smaller ξ.
fn best_xi(rows: &[ResultRow], solver: &str, experiment: Experiment) -> BTreeMap<PointKey, u64> {
    let mut groups: BTreeMap<PointKey, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.solver == solver) {
        groups
            .entry(r.point())
            .or_default()
            .entry(r.xi.to_bits())
            .or_default()
            .push(r.rmse);
    }
    groups
        .into_iter()
        .map(|(point, by_xi)| {
            let mut scored: Vec<(u64, usize, f64)> = by_xi
                .into_iter()
                .map(|(xi, v)| (xi, v.iter().filter(|&&e| is_success(e)).count(), median(&v)))
                .collect();
            // bit patterns of non-negative floats sort like the values
            scored.sort_by_key(|s| s.0);
            let pick = scored
                .iter()
                .min_by(|a, b| match experiment {
                    Experiment::Measurements => b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)),
                    _ => a.2.total_cmp(&b.2),
                })
                .map(|s| s.0)
                .expect("nonempty grid");
            (point, pick)
        })
        .collect()
}

/// Moving targets: the tracker, the static solver at every step, and static
/// reweighted ℓ1.
fn run_tracking(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let name = cfg.solver.name();
    let df_name = format!("{name}-df");
    let lambda = lambda_policy(cfg);
    let per_trial: Vec<Vec<ResultRow>> = cartesian(cfg)
        .into_par_iter()
        .map(
            |(m, sigma_obs2, structure, trial)| -> anyhow::Result<Vec<ResultRow>> {
                let seed = trial_seed(cfg.seed, trial);
                let ds = gen_tracking(
                    cfg.n,
                    cfg.s,
                    cfg.steps,
                    cfg.innovation_prob,
                    sub_seed(seed, Purpose::Tracking),
                )?;
                let dict = gen_dictionary(
                    m,
                    cfg.n,
                    &dict_model(cfg, structure),
                    sub_seed(seed, Purpose::Dictionary),
                )?;
                let ys = ds.measure(&dict, sigma_obs2, sub_seed(seed, Purpose::Noise))?;
                // a single step never consults the dynamics
                let model = if ds.dynamics.is_empty() {
                    DynamicsModel::Identity
                } else {
                    DynamicsModel::TimeVarying(ds.dynamics.clone())
                };
                let base = RowBase {
                    experiment: cfg.experiment,
                    trial,
                    seed,
                    n: cfg.n,
                    m,
                    s: cfg.s,
                    sigma_obs2,
                    sigma_dyn2: 0.0,
                    support_errors: -1,
                    structure_c: structure_value(structure),
                };
                let rwl_lambda = match cfg.lambda {
                    NoisePolicy::Fixed(l) => l,
                    NoisePolicy::Learned => sigma_obs2.max(1e-8),
                };
                let runs = [
                    (
                        df_name.as_str(),
                        cfg.xi,
                        solver_kind(cfg, cfg.solver),
                        lambda,
                    ),
                    (name, 0.0, solver_kind(cfg, cfg.solver), lambda),
                    (
                        "rwl1",
                        0.0,
                        SolverKind::Rwl1(RwlOptions::default()),
                        LambdaPolicy::Fixed(rwl_lambda),
                    ),
                ];
                let mut rows = Vec::new();
                for (label, xi, solver, lambda) in runs {
                    let tc = TrackerConfig {
                        xi,
                        solver,
                        lambda,
                        warm_start: false,
                    };
                    let steps = sbl_df_run(&dict, &ys, &model, &tc, Some(&ds.x_true))?;
                    for (k, st) in steps.iter().enumerate() {
                        let e = st.estimate.as_ref();
                        let solve = Solve {
                            rmse: st.rmse.unwrap_or(f64::INFINITY),
                            iters: st.iterations,
                            actions: e.map_or(0, |e| {
                                e.diagnostics.adds
                                    + e.diagnostics.deletes
                                    + e.diagnostics.reestimates
                            }),
                            wall_ms: st.wall_nanos as f64 * 1e-6,
                            converged: st.converged,
                            estimate: None,
                        };
                        rows.push(base.row(label, xi, k as i64 + 1, &solve));
                    }
                }
                Ok(rows)
            },
        )
        .collect::<anyhow::Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_trial.into_iter().flatten().collect();
    sort_rows(&mut rows);
    Ok(Outcome {
        rows,
        traces: vec![],
    })
}

/// EM and FML, with and without a prediction, across signal lengths.
fn run_runtime(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let lambda = lambda_policy(cfg);
    let err = match cfg.swap_prob {
        Some(p) => (-1, SupportError::SwapProb(p)),
        None => (
            cfg.support_errors[0] as i64,
            SupportError::Swaps(cfg.support_errors[0]),
        ),
    };
    let sigma_dyn2 = cfg.sigma_dyn2[0];
    let sigma_obs2 = cfg.sigma_obs2[0];
    let tasks: Vec<(usize, u64)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| (0..cfg.trials as u64).map(move |t| (n, t)))
        .collect();
    let results: Vec<(Vec<ResultRow>, Vec<TraceRow>)> = tasks
        .into_par_iter()
        .map(
            |(n, trial)| -> anyhow::Result<(Vec<ResultRow>, Vec<TraceRow>)> {
                let m = ((n as f64 * cfg.m_ratio).round() as usize).max(1);
                let seed = trial_seed(cfg.seed, trial);
                let dict = gen_dictionary(
                    m,
                    n,
                    &dict_model(cfg, cfg.structure_c[0]),
                    sub_seed(seed, Purpose::Dictionary),
                )?;
                let x = gen_sparse_signal(
                    n,
                    &SignalModel {
                        kind: cfg.signal,
                        s: cfg.s,
                    },
                    sub_seed(seed, Purpose::Signal),
                )?;
                let y = measure(&dict, &x, sigma_obs2, sub_seed(seed, Purpose::Noise))?;
                let x_tilde =
                    corrupt_prediction(&x, err.1, sigma_dyn2, sub_seed(seed, Purpose::Corruption))?;
                let informed = map_prediction_to_hyperpriors(&Prediction::new(x_tilde, cfg.xi)?);
                let flat = HyperPriors::uninformative(n);
                let base = RowBase {
                    experiment: cfg.experiment,
                    trial,
                    seed,
                    n,
                    m,
                    s: cfg.s,
                    sigma_obs2,
                    sigma_dyn2,
                    support_errors: err.0,
                    structure_c: structure_value(cfg.structure_c[0]),
                };
                let mut rows = Vec::new();
                let mut traces = Vec::new();
                for choice in [SolverChoice::Em, SolverChoice::Fml] {
                    let solver = solver_kind(cfg, choice);
                    for (label, xi, priors) in [
                        (choice.name().to_string(), 0.0, &flat),
                        (format!("{}-df", choice.name()), cfg.xi, &informed),
                    ] {
                        let solve = timed_solve(&dict, &y, &x, priors, &solver, lambda);
                        if let Some(est) = &solve.estimate {
                            let d = &est.diagnostics;
                            for (i, &active) in d.active_sizes.iter().enumerate() {
                                traces.push(TraceRow {
                                    n,
                                    trial,
                                    solver: label.clone(),
                                    iter: i + 1,
                                    active,
                                    wall_ms: d
                                        .iteration_nanos
                                        .get(i)
                                        .map_or(0.0, |&ns| ns as f64 * 1e-6),
                                });
                            }
                        }
                        rows.push(base.row(&label, xi, -1, &solve));
                    }
                }
                Ok((rows, traces))
            },
        )
        .collect::<anyhow::Result<_>>()?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        traces.extend(t);
    }
    sort_rows(&mut rows);
    traces
        .sort_by(|a, b| (a.n, &a.solver, a.trial, a.iter).cmp(&(b.n, &b.solver, b.trial, b.iter)));
    Ok(Outcome { rows, traces })
}
