//! Static SVG plots of result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::rows::{ResultRow, SummaryRow};
use crate::stats::summarize;

pub struct Series {
    pub label: String,
    /// `(x, y, optional (low, high) bar)`.
    pub points: Vec<(f64, f64, Option<(f64, f64)>)>,
}

pub struct Axes<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            // a single value gets a unit-wide window around it
            lo -= 0.5;
            hi += 0.5;
        }
        Scale { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, k: usize) -> String {
        let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    }
}

fn usable(v: f64, log: bool) -> bool {
    v.is_finite() && (!log || v > 0.0)
}

pub fn line_plot(axes: &Axes, series: &[Series]) -> String {
    let pts = |f: &dyn Fn(&(f64, f64, Option<(f64, f64)>)) -> Vec<f64>| -> Vec<f64> {
        series
            .iter()
            .flat_map(|s| s.points.iter().flat_map(f))
            .collect()
    };
    let xs = pts(&|p| vec![p.0]);
    let ys = pts(&|p| match p.2 {
        Some((lo, hi)) => vec![p.1, lo, hi],
        None => vec![p.1],
    });
    let sx = Scale::new(
        xs.into_iter().filter(|&v| usable(v, axes.log_x)),
        axes.log_x,
    );
    let sy = Scale::new(
        ys.into_iter().filter(|&v| usable(v, axes.log_y)),
        axes.log_y,
    );
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |v: f64| LEFT + sx.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - sy.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(axes.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let gx = LEFT + pw * k as f64 / 4.0;
        let gy = TOP + ph * (1.0 - k as f64 / 4.0);
        let _ = writeln!(
            s,
            r##"<line x1="{gx}" y1="{TOP}" x2="{gx}" y2="{}" stroke="#ddd"/><text x="{gx}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            sx.label(k)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{gy}" x2="{}" y2="{gy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            gy + 4.0,
            sy.label(k)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(axes.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(axes.y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let good: Vec<_> = ser
            .points
            .iter()
            .filter(|p| usable(p.0, axes.log_x) && usable(p.1, axes.log_y))
            .collect();
        if good.len() > 1 {
            let path: Vec<String> = good
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for p in &good {
            if let Some((lo, hi)) = p.2 {
                if usable(lo, axes.log_y) && usable(hi, axes.log_y) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                        py(lo),
                        py(hi),
                        x = px(p.0)
                    );
                }
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(p.0),
                py(p.1)
            );
        }
        let ly = TOP + 14.0 * i as f64 + 8.0;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            ly - 8.0,
            lx + 14.0,
            ly + 1.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write(dir: &Path, name: &str, svg: String, out: &mut Vec<PathBuf>) -> io::Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, svg)?;
    out.push(p);
    Ok(())
}

fn level_label(r: &SummaryRow) -> String {
    if r.support_errors >= 0 {
        format!(
            "{} swaps={} dyn={:e}",
            r.solver, r.support_errors, r.sigma_dyn2
        )
    } else {
        format!("{} dyn={:e}", r.solver, r.sigma_dyn2)
    }
}

fn group<F: Fn(&SummaryRow) -> String>(
    rows: &[SummaryRow],
    key: F,
) -> BTreeMap<String, Vec<&SummaryRow>> {
    let mut g: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        g.entry(key(r)).or_default().push(r);
    }
    g
}

/// Writes the plots for a table and returns their paths. An empty table
/// produces nothing.
pub fn emit_plots(rows: &[ResultRow], dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if rows.is_empty() {
        return Ok(out);
    }
    std::fs::create_dir_all(dir)?;
    let summary = summarize(rows);
    let by_experiment = group(&summary, |r| r.experiment.clone());
    for (experiment, rs) in by_experiment {
        let rs: Vec<SummaryRow> = rs.into_iter().cloned().collect();
        match experiment.as_str() {
            "measurements" => {
                let keep: Vec<SummaryRow> = rs
                    .iter()
                    .filter(|r| r.solver.ends_with("-best") || !r.solver.contains("-df"))
                    .cloned()
                    .collect();
                let series = group(&keep, level_label)
                    .into_iter()
                    .map(|(label, pts)| Series {
                        label,
                        points: pts
                            .iter()
                            .map(|r| (r.m as f64, r.success_rate, Some((r.ci_low, r.ci_high))))
                            .collect(),
                    })
                    .collect::<Vec<_>>();
                let axes = Axes {
                    title: "Recovery rate",
                    x_label: "measurements M",
                    y_label: "success rate",
                    log_x: false,
                    log_y: false,
                };
                write(
                    dir,
                    "measurements_success.svg",
                    line_plot(&axes, &series),
                    &mut out,
                )?;
            }
            "coherence" => {
                let distinct_sigma = rs
                    .iter()
                    .map(|r| r.sigma_obs2.to_bits())
                    .collect::<std::collections::BTreeSet<_>>();
                let by_sigma = distinct_sigma.len() > 1;
                let series = group(&rs, |r| {
                    if by_sigma {
                        format!("{} c={}", r.solver, r.structure_c)
                    } else {
                        format!("{} noise={:e}", r.solver, r.sigma_obs2)
                    }
                })
                .into_iter()
                .map(|(label, pts)| Series {
                    label,
                    points: pts
                        .iter()
                        .map(|r| {
                            let x = if by_sigma {
                                r.sigma_obs2
                            } else {
                                r.structure_c
                            };
                            (x, r.median_rmse, Some((r.q25_rmse, r.q75_rmse)))
                        })
                        .collect(),
                })
                .collect::<Vec<_>>();
                let axes = Axes {
                    title: "Median relative error",
                    x_label: if by_sigma {
                        "observation noise variance"
                    } else {
                        "structure c"
                    },
                    y_label: "rMSE",
                    log_x: by_sigma,
                    log_y: true,
                };
                write(
                    dir,
                    "coherence_rmse.svg",
                    line_plot(&axes, &series),
                    &mut out,
                )?;
            }
            "tracking" => {
                for (solver, pts) in group(&rs, |r| r.solver.clone()) {
                    let series = vec![Series {
                        label: solver.clone(),
                        points: pts
                            .iter()
                            .map(|r| (r.t as f64, r.mean_rmse, Some((r.q25_rmse, r.q75_rmse))))
                            .collect(),
                    }];
                    let axes = Axes {
                        title: &format!("Tracking error ({solver})"),
                        x_label: "time step",
                        y_label: "rMSE",
                        log_x: false,
                        log_y: true,
                    };
                    write(
                        dir,
                        &format!("tracking_{solver}.svg"),
                        line_plot(&axes, &series),
                        &mut out,
                    )?;
                }
            }
            "runtime" => {
                let series = group(&rs, |r| r.solver.clone())
                    .into_iter()
                    .map(|(label, pts)| Series {
                        label,
                        points: pts
                            .iter()
                            .map(|r| (r.n as f64, r.mean_wall_ms, None))
                            .collect(),
                    })
                    .collect::<Vec<_>>();
                let axes = Axes {
                    title: "Reconstruction time",
                    x_label: "signal length N",
                    y_label: "time (ms)",
                    log_x: true,
                    log_y: true,
                };
                write(dir, "runtime_time.svg", line_plot(&axes, &series), &mut out)?;
            }
            _ => {}
        }
    }
    Ok(out)
}
