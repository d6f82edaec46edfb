//! SVG figures from sweep rows and margin CDFs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use wrongline::estimators::MarginCdf;
use wrongline::stats::{mean, pearson};

use crate::error::{HarnessError, Result};
use crate::sweep::ResultRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    IdVsOod,
    AccVsN,
    SensitivityVsN,
    MarginCdf,
    OodVsAngle,
}

impl std::str::FromStr for PlotKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| HarnessError::Config(format!("unknown plot kind `{s}`")))
    }
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

type Column = fn(&ResultRow) -> Option<f64>;

fn column(name: &str) -> Option<Column> {
    let f: Column = match name {
        "id_acc" => |r| r.id_acc,
        "ood_acc" => |r| r.ood_acc,
        "mean_sensitivity" => |r| r.mean_sensitivity,
        "k_eff" => |r| r.k_eff.map(|k| k as f64),
        "angle" => |r| r.angle,
        _ => return None,
    };
    Some(f)
}

/// Fails with a schema error naming the first required column that has no
/// value in any row.
fn require(rows: &[ResultRow], names: &[&str]) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::Schema("no rows to plot".into()));
    }
    for &name in names {
        let f = column(name).expect("known column");
        if rows.iter().all(|r| f(r).is_none()) {
            return Err(HarnessError::Schema(format!("column `{name}` has no values")));
        }
    }
    Ok(())
}

fn by_eta(rows: &[ResultRow]) -> BTreeMap<String, Vec<&ResultRow>> {
    let mut groups: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(format!("{}", r.eta)).or_default().push(r);
    }
    groups
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Io(format!("plot rendering: {e}"))
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-3);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    line: bool,
}

fn draw(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series], extra: &[(f64, f64, f64, f64, RGBColor)]) -> Result<()> {
    let all = series.iter().flat_map(|s| s.points.iter().copied());
    let (x0, x1) = extent(all.clone().map(|p| p.0).chain(extra.iter().flat_map(|e| [e.0, e.2])));
    let (y0, y1) = extent(all.map(|p| p.1).chain(extra.iter().flat_map(|e| [e.1, e.3])));
    let root = SVGBackend::new(path, (720, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(60)
        .build_cartesian_2d(padded(x0, x1), padded(y0, y1))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = s.points.clone();
        if s.line {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        } else {
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| Circle::new((x + 9, y), 3, color.filled()));
        }
    }
    for &(ax, ay, bx, by, color) in extra {
        chart
            .draw_series(std::iter::once(PathElement::new(vec![(ax, ay), (bx, by)], color.stroke_width(2))))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Means of `y` per distinct `x`, in ascending `x`.
fn mean_curve(rows: &[&ResultRow], x: Column, y: Column) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let (Some(xv), Some(yv)) = (x(r), y(r)) {
            acc.entry(xv.to_bits()).or_insert((xv, Vec::new())).1.push(yv);
        }
    }
    let mut pts: Vec<(f64, f64)> = acc.into_values().map(|(xv, ys)| (xv, mean(&ys).unwrap_or(f64::NAN))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Renders `kind` from sweep rows into `out_dir` and returns the files
/// written. `MarginCdf` plots come from [`emit_margin_cdf`] instead.
pub fn emit_plots(rows: &[ResultRow], kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let n_col: Column = |r| Some(r.n as f64);
    let mut written = Vec::new();
    match kind {
        PlotKind::IdVsOod => {
            require(rows, &["id_acc", "ood_acc"])?;
            for (eta, group) in by_eta(rows) {
                let pts: Vec<(f64, f64)> = group.iter().filter_map(|r| Some((r.id_acc?, r.ood_acc?))).collect();
                if pts.is_empty() {
                    continue;
                }
                let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
                let r = pearson(&xs, &ys).map(|r| format!("r = {r:+.2}")).unwrap_or_else(|_| "r undefined".into());
                let path = out_dir.join(format!("id_vs_ood_eta{eta}.svg"));
                let series = [Series {
                    label: format!("eta = {eta} ({r})"),
                    points: pts,
                    line: false,
                }];
                draw(&path, &format!("ID vs OOD accuracy, eta = {eta}, {r}"), "ID accuracy", "OOD accuracy", &series, &[])?;
                written.push(path);
            }
        }
        PlotKind::AccVsN => {
            require(rows, &["id_acc", "ood_acc"])?;
            for (eta, group) in by_eta(rows) {
                let series = [
                    Series {
                        label: "ID".into(),
                        points: mean_curve(&group, n_col, column("id_acc").unwrap()),
                        line: true,
                    },
                    Series {
                        label: "OOD".into(),
                        points: mean_curve(&group, n_col, column("ood_acc").unwrap()),
                        line: true,
                    },
                ];
                let path = out_dir.join(format!("acc_vs_n_eta{eta}.svg"));
                draw(&path, &format!("Accuracy vs training size, eta = {eta}"), "training size n", "accuracy", &series, &[])?;
                written.push(path);
            }
        }
        PlotKind::SensitivityVsN => {
            require(rows, &["mean_sensitivity", "k_eff"])?;
            let groups = by_eta(rows);
            for (col, desc) in [("mean_sensitivity", "mean nuisance |w_i|"), ("k_eff", "nuisance support size")] {
                let f = column(col).unwrap();
                let series: Vec<Series> = groups
                    .iter()
                    .map(|(eta, g)| Series {
                        label: format!("eta = {eta}"),
                        points: mean_curve(g, n_col, f),
                        line: true,
                    })
                    .filter(|s| !s.points.is_empty())
                    .collect();
                let path = out_dir.join(format!("{col}_vs_n.svg"));
                draw(&path, &format!("{desc} vs training size"), "training size n", desc, &series, &[])?;
                written.push(path);
            }
        }
        PlotKind::OodVsAngle => {
            require(rows, &["ood_acc", "angle"])?;
            let series: Vec<Series> = by_eta(rows)
                .iter()
                .map(|(eta, g)| Series {
                    label: format!("eta = {eta}"),
                    points: mean_curve(g, column("angle").unwrap(), column("ood_acc").unwrap()),
                    line: true,
                })
                .filter(|s| !s.points.is_empty())
                .collect();
            let path = out_dir.join("ood_vs_angle.svg");
            draw(&path, "OOD accuracy vs shift angle", "angle between shift mean and -w (degrees)", "OOD accuracy", &series, &[])?;
            written.push(path);
        }
        PlotKind::MarginCdf => {
            return Err(HarnessError::Schema("margin_cdf plots need margin CDF data, not sweep rows".into()));
        }
    }
    Ok(written)
}

/// CDF of positive margins with the vulnerability threshold (vertical)
/// and the measured OOD error (horizontal).
pub fn emit_margin_cdf(cdf: &MarginCdf, out: &Path) -> Result<()> {
    if cdf.sorted_margins.is_empty() {
        return Err(HarnessError::Schema("margin CDF has no margins".into()));
    }
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    // Thin the curve to keep files small.
    let len = cdf.sorted_margins.len();
    let stride = (len / 2000).max(1);
    let mut pts: Vec<(f64, f64)> = (0..len)
        .step_by(stride)
        .map(|i| (cdf.sorted_margins[i], (i + 1) as f64 / len as f64))
        .collect();
    pts.push((cdf.sorted_margins[len - 1], 1.0));
    let x_hi = cdf.sorted_margins[len - 1].max(cdf.threshold).max(cdf.mean_threshold);
    let series = [Series {
        label: "CDF of positive ID margins".into(),
        points: pts,
        line: true,
    }];
    let extra = [
        (cdf.threshold, 0.0, cdf.threshold, 1.0, RGBColor(214, 39, 40)),
        (cdf.mean_threshold, 0.0, cdf.mean_threshold, 1.0, RGBColor(255, 127, 14)),
        (0.0, cdf.empirical_ood_error, x_hi, cdf.empirical_ood_error, RGBColor(44, 160, 44)),
    ];
    let title = format!(
        "margin CDF: predicted {:.3} at tau*gamma*k, OOD error {:.3}",
        cdf.predicted_vulnerable_fraction, cdf.empirical_ood_error
    );
    draw(out, &title, "margin <w, x>", "fraction of positive points", &series, &extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eta: f64, n: usize, seed: u64, id: f64, ood: f64) -> ResultRow {
        let mut r: ResultRow = serde_json::from_value(serde_json::json!({
            "seed": seed, "n": n, "eta": eta, "lambda": 0.1, "angle": null,
            "train_error": 0.0, "interpolating": true, "id_acc": id, "ood_acc": ood,
            "tau": null, "big_m": null, "mean_sensitivity": null, "gamma": null, "c_max": null,
            "rho": null, "k_eff": null, "Gamma": null, "thm1_lower": null, "corollary_lower": null,
            "c1_ok": null, "c2_ok": null, "c3_ok": null
        }))
        .unwrap();
        r.mean_sensitivity = Some(0.01 * n as f64);
        r.k_eff = Some(n / 10);
        r
    }

    #[test]
    fn one_file_per_noise_rate() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ResultRow> = [0.0, 0.2]
            .iter()
            .flat_map(|&eta| (1..=3).map(move |i| row(eta, 100 * i, i as u64, 0.8 + 0.01 * i as f64, 0.7 - eta * i as f64 / 10.0)))
            .collect();
        let files = emit_plots(&rows, PlotKind::IdVsOod, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let svg = std::fs::read_to_string(&files[1]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("r = -1.00"));
        assert_eq!(emit_plots(&rows, PlotKind::AccVsN, dir.path()).unwrap().len(), 2);
        assert_eq!(emit_plots(&rows, PlotKind::SensitivityVsN, dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(&[], PlotKind::IdVsOod, dir.path()), Err(HarnessError::Schema(_))));
        let rows = vec![row(0.2, 100, 1, 0.9, 0.5)];
        match emit_plots(&rows, PlotKind::OodVsAngle, dir.path()) {
            Err(HarnessError::Schema(msg)) => assert!(msg.contains("`angle`")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn margin_cdf_figure_has_reference_lines() {
        let dir = tempfile::tempdir().unwrap();
        let cdf = MarginCdf {
            sorted_margins: vec![0.1, 0.2, 0.4, 0.8],
            threshold: 0.3,
            predicted_vulnerable_fraction: 0.5,
            mean_threshold: 0.5,
            mean_predicted_fraction: 0.75,
            empirical_ood_error: 0.45,
            positive_ood_error: 0.6,
            n_samples: 8,
        };
        let path = dir.path().join("cdf.svg");
        emit_margin_cdf(&cdf, &path).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        assert!(svg.matches("<polyline").count() >= 4);
    }
}
