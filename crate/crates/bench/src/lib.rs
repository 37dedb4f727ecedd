//! Experiment harness for the `sbldf` solvers: configuration, the four
//! studies, CSV tables and SVG plots.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod rows;
pub mod stats;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use config::Experiment;
use experiments::Outcome;
use rows::write_rows;

/// Writes `<experiment>.csv`, `<experiment>_summary.csv`, the runtime trace
/// when present, and the plots. Returns every path written.
pub fn write_outputs(
    dir: &Path,
    experiment: Experiment,
    outcome: &Outcome,
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let name = experiment.name();
    let main = dir.join(format!("{name}.csv"));
    write_rows(BufWriter::new(File::create(&main)?), &outcome.rows)?;
    written.push(main);
    let summary = dir.join(format!("{name}_summary.csv"));
    write_rows(
        BufWriter::new(File::create(&summary)?),
        &stats::summarize(&outcome.rows),
    )?;
    written.push(summary);
    if !outcome.traces.is_empty() {
        let trace = dir.join(format!("{name}_trace.csv"));
        write_rows(BufWriter::new(File::create(&trace)?), &outcome.traces)?;
        written.push(trace);
    }
    written.extend(plot::emit_plots(&outcome.rows, dir)?);
    Ok(written)
}
