//! Small summary statistics.

use std::collections::BTreeMap;

use crate::rows::{is_success, ResultRow, SummaryRow};

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Normal-approximation 95% interval for a success rate, clipped to [0, 1].
pub fn success_interval(successes: usize, trials: usize) -> (f64, f64, f64) {
    let p = successes as f64 / trials as f64;
    let half = 1.96 * (p * (1.0 - p) / trials as f64).sqrt();
    (p, (p - half).max(0.0), (p + half).min(1.0))
}

/// Groups rows by point, solver, ξ and time step.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (crate::rows::PointKey, String, u64, i64);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.point(), r.solver.clone(), r.xi.to_bits(), r.t))
            .or_default()
            .push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let mut rm: Vec<f64> = g.iter().map(|r| r.rmse).collect();
            rm.sort_by(f64::total_cmp);
            let succ = g.iter().filter(|r| is_success(r.rmse)).count();
            let (rate, lo, hi) = success_interval(succ, g.len());
            SummaryRow {
                experiment: first.experiment.clone(),
                n: first.n,
                m: first.m,
                s: first.s,
                sigma_obs2: first.sigma_obs2,
                sigma_dyn2: first.sigma_dyn2,
                support_errors: first.support_errors,
                structure_c: first.structure_c,
                solver: first.solver.clone(),
                xi: first.xi,
                t: first.t,
                trials: g.len(),
                success_rate: rate,
                ci_low: lo,
                ci_high: hi,
                mean_rmse: mean(&rm),
                median_rmse: quantile(&rm, 0.5),
                q25_rmse: quantile(&rm, 0.25),
                q75_rmse: quantile(&rm, 0.75),
                mean_iters: g.iter().map(|r| r.iters as f64).sum::<f64>() / g.len() as f64,
                mean_wall_ms: g.iter().map(|r| r.wall_ms).sum::<f64>() / g.len() as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.n, a.m, a.support_errors, &a.solver, a.t)
            .cmp(&(b.n, b.m, b.support_errors, &b.solver, b.t))
            .then(a.sigma_obs2.total_cmp(&b.sigma_obs2))
            .then(a.sigma_dyn2.total_cmp(&b.sigma_dyn2))
            .then(a.structure_c.total_cmp(&b.structure_c))
            .then(a.xi.total_cmp(&b.xi))
    });
    out
}
