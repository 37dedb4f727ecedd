//! Browser bindings for the static demo page in `www/`.
//!
//! Every function returns a flat `Float64Array` so the page can draw it
//! without any glue beyond `wasm-bindgen`.

use wasm_bindgen::prelude::*;

use sbldf::fml::{best_gamma, ell_gamma_j};
use sbldf::model::effective_prior_density;
use sbldf::synth::{gen_dictionary, gen_tracking, DictKind, DictModel, Structure};
use sbldf::{sbl_df_run, DynamicsModel, EmOptions, LambdaPolicy, SolverKind, TrackerConfig};

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let step = if points > 1 {
        (hi - lo) / (points - 1) as f64
    } else {
        0.0
    };
    (0..points).map(move |k| lo + step * k as f64)
}

/// Marginal density of one coefficient on `points` values of `x` in
/// `[-width, width]`, returned as `[x..., p...]`.
#[wasm_bindgen]
pub fn prior_curve(a: f64, b: f64, width: f64, points: usize) -> Result<Vec<f64>, JsError> {
    if !(a > 0.0 && b > 0.0 && width > 0.0) || points < 2 {
        return Err(err("need a > 0, b > 0, width > 0 and at least 2 points"));
    }
    let xs: Vec<f64> = grid(-width, width, points).collect();
    let ps: Vec<f64> = xs
        .iter()
        .map(|&x| effective_prior_density(x, a, b))
        .collect();
    Ok(xs.into_iter().chain(ps).collect())
}

/// One-coordinate objective over log-spaced `γ` in `[10^lo, 10^hi]`,
/// returned as `[γ..., ℓ..., γ*]` with the minimizer last (0 when pruned).
#[wasm_bindgen]
pub fn objective_curve(
    s: f64,
    q: f64,
    a: f64,
    b: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    if !(s > 0.0 && a >= 0.0 && b >= 0.0 && lo < hi) || points < 2 {
        return Err(err("need s > 0, a, b >= 0, lo < hi and at least 2 points"));
    }
    let gs: Vec<f64> = grid(lo, hi, points).map(|e| 10f64.powf(e)).collect();
    let ls: Vec<f64> = gs.iter().map(|&g| ell_gamma_j(g, s, q, a, b)).collect();
    Ok(gs
        .into_iter()
        .chain(ls)
        .chain([best_gamma(s, q, a, b)])
        .collect())
}

/// Runs a small moving-target problem with and without the dynamics prior.
/// Returns `[rMSE with prior..., rMSE without...]`, one value per step.
#[wasm_bindgen]
pub fn tracking_run(
    n: usize,
    s: usize,
    m: usize,
    steps: usize,
    xi: f64,
    noise: f64,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    if n > 256 || steps > 60 {
        return Err(err("demo is limited to n <= 256 and at most 60 steps"));
    }
    let ds = gen_tracking(n, s, steps, 0.1, seed).map_err(err)?;
    let model = DictModel {
        kind: DictKind::LocalCoherentScaled,
        structure: Structure::Preset,
        block_size: if n % 4 == 0 { 4 } else { 1 },
    };
    let dict = gen_dictionary(m, n, &model, seed ^ 0x5eed).map_err(err)?;
    let ys = ds.measure(&dict, noise, seed ^ 0xface).map_err(err)?;
    let dynamics = if ds.dynamics.is_empty() {
        DynamicsModel::Identity
    } else {
        DynamicsModel::TimeVarying(ds.dynamics.clone())
    };
    let mut out = Vec::with_capacity(2 * steps);
    for weight in [xi, 0.0] {
        let cfg = TrackerConfig {
            xi: weight,
            solver: SolverKind::Em(EmOptions::default()),
            lambda: LambdaPolicy::Learned { init: 1e-3 },
            warm_start: false,
        };
        let res = sbl_df_run(&dict, &ys, &dynamics, &cfg, Some(&ds.x_true)).map_err(err)?;
        out.extend(res.iter().map(|r| r.rmse.unwrap_or(f64::NAN)));
    }
    Ok(out)
}
