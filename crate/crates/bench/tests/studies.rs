use sbldf_bench::config::{Experiment, ExperimentConfig};
use sbldf_bench::experiments;
use sbldf_bench::stats::median;

fn config(experiment: Experiment, pairs: &[(&str, &str)]) -> ExperimentConfig {
    let o: Vec<(String, String)> = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    ExperimentConfig::load(experiment, None, &o).unwrap()
}

#[test]
fn exact_prediction_recovers_almost_always() {
    let cfg = config(
        Experiment::Measurements,
        &[
            ("n", "128"),
            ("s", "8"),
            ("m", "48"),
            ("trials", "100"),
            ("support_errors", "0"),
            ("sigma_dyn2", "0"),
            ("xi_grid", "10"),
            ("sigma_obs2", "1e-3"),
        ],
    );
    let out = experiments::run(&cfg).unwrap();
    let df: Vec<_> = out.rows.iter().filter(|r| r.solver == "fml-df").collect();
    assert_eq!(df.len(), 100);
    let wins = df.iter().filter(|r| r.success == 1).count();
    assert!(wins >= 95, "{wins} of 100");
}

#[test]
fn coherence_row_accounting() {
    let cfg = config(
        Experiment::Coherence,
        &[
            ("trials", "20"),
            ("sigma_obs2", "1e-6,1e-5,1e-4"),
            ("xi_grid", "1"),
        ],
    );
    let out = experiments::run(&cfg).unwrap();
    assert_eq!(out.rows.iter().filter(|r| r.solver == "em-df").count(), 60);
    assert_eq!(out.rows.iter().filter(|r| r.solver == "em").count(), 60);
}

#[test]
fn em_iterations_get_cheaper_as_the_model_shrinks() {
    let cfg = config(Experiment::Runtime, &[("trials", "1"), ("n_values", "512")]);
    let out = experiments::run(&cfg).unwrap();
    let trace: Vec<_> = out.traces.iter().filter(|t| t.solver == "em").collect();
    assert!(trace.len() > 10);
    // median time in 8 equal-width bins of active-set size, largest first
    let n = 512.0;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 8];
    for t in &trace {
        let b = ((t.active as f64 / n) * 8.0).min(7.0) as usize;
        bins[b].push(t.wall_ms);
    }
    let medians: Vec<f64> = bins
        .iter()
        .rev()
        .filter(|b| !b.is_empty())
        .map(|b| median(b))
        .collect();
    for w in medians.windows(2) {
        assert!(
            w[1] <= 1.1 * w[0],
            "per-iteration times by size: {medians:?}"
        );
    }
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for e in [
        Experiment::Measurements,
        Experiment::Coherence,
        Experiment::Tracking,
        Experiment::Runtime,
    ] {
        let text = std::fs::read_to_string(dir.join(format!("{}.cfg", e.name()))).unwrap();
        let cfg = ExperimentConfig::load(e, Some(&text), &[]).unwrap();
        assert_eq!(cfg.experiment, e);
    }
}
