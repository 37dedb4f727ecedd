//! Result tables and their CSV form.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use sbldf::model::SUCCESS_RMSE;

/// One solve, or one time step of a tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub trial: u64,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub sigma_obs2: f64,
    pub sigma_dyn2: f64,
    /// Swap count, or −1 when swaps were drawn per element.
    pub support_errors: i64,
    /// Structure parameter; 0 marks the preset dictionary.
    pub structure_c: f64,
    /// 0 for static solves.
    pub xi: f64,
    pub solver: String,
    /// Time step, −1 outside tracking.
    pub t: i64,
    pub rmse: f64,
    pub success: u8,
    pub iters: usize,
    pub actions: usize,
    pub wall_ms: f64,
    pub converged: u8,
}

pub fn is_success(rmse: f64) -> bool {
    rmse < SUCCESS_RMSE
}

impl ResultRow {
    /// Ordering used before writing; independent of how rows were produced.
    pub fn sort_key_cmp(&self, o: &Self) -> Ordering {
        self.experiment
            .cmp(&o.experiment)
            .then(self.n.cmp(&o.n))
            .then(self.m.cmp(&o.m))
            .then(self.s.cmp(&o.s))
            .then(self.sigma_obs2.total_cmp(&o.sigma_obs2))
            .then(self.sigma_dyn2.total_cmp(&o.sigma_dyn2))
            .then(self.support_errors.cmp(&o.support_errors))
            .then(self.structure_c.total_cmp(&o.structure_c))
            .then(self.solver.cmp(&o.solver))
            .then(self.xi.total_cmp(&o.xi))
            .then(self.trial.cmp(&o.trial))
            .then(self.t.cmp(&o.t))
    }

    /// Parameters identifying the point a row belongs to, without solver,
    /// trial or time step.
    pub fn point(&self) -> PointKey {
        PointKey {
            n: self.n,
            m: self.m,
            s: self.s,
            sigma_obs2: self.sigma_obs2.to_bits(),
            sigma_dyn2: self.sigma_dyn2.to_bits(),
            support_errors: self.support_errors,
            structure_c: self.structure_c.to_bits(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointKey {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub sigma_obs2: u64,
    pub sigma_dyn2: u64,
    pub support_errors: i64,
    pub structure_c: u64,
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_key_cmp(b));
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(true).from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> csv::Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Aggregate over the trials of one (point, solver, ξ) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub sigma_obs2: f64,
    pub sigma_dyn2: f64,
    pub support_errors: i64,
    pub structure_c: f64,
    pub solver: String,
    pub xi: f64,
    pub t: i64,
    pub trials: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub q25_rmse: f64,
    pub q75_rmse: f64,
    pub mean_iters: f64,
    pub mean_wall_ms: f64,
}

/// One iteration of one solve in the runtime study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    pub trial: u64,
    pub solver: String,
    pub iter: usize,
    pub active: usize,
    pub wall_ms: f64,
}
