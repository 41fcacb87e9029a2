//! Static SVG plots and a markdown summary rendered from metrics CSVs.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::SWEEP_HEADER;
use crate::trainer::CURVE_HEADER;

const DATA_CURVE_HEADER: &str = "size,human_sr,preexp_sr";

/// Numeric columns of one CSV file.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.header.iter().position(|h| h == name) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .map(|r| r.get(i).and_then(|x| x.parse().ok()).unwrap_or(f64::NAN))
            .collect()
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("plot rendering failed: {e}"))
}

/// One panel per `(title, series)` group; each series is `(label, ys)`.
fn render(path: &Path, title: &str, x_label: &str, xs: &[f64], panels: &[(&str, Vec<(&str, Vec<f64>)>)]) -> Result<()> {
    let root = SVGBackend::new(path, (480 * panels.len() as u32, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 18)).map_err(plot_err)?;
    let areas = root.split_evenly((1, panels.len()));
    let finite = |v: &f64| v.is_finite();
    let (x0, x1) = bounds(xs.iter().copied().filter(finite));
    for (area, (name, series)) in areas.iter().zip(panels) {
        let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().copied()).filter(finite));
        let mut chart = ChartBuilder::on(area)
            .caption(*name, ("sans-serif", 14))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(45)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_label).draw().map_err(plot_err)?;
        for (k, (label, ys)) in series.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|p| p.1.is_finite()).map(|(&x, &y)| (x, y)).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(*label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart
                .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Renders every recognised CSV under `input` into `out` and writes
/// `summary.md`. Returns the plot files written.
pub fn render_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut summary = String::from("# Results\n");
    for path in csv_files(input)? {
        let rel = path.strip_prefix(input).unwrap_or(&path);
        let stem = rel.with_extension("").to_string_lossy().replace(['/', '\\'], "_");
        let table = Table::read(&path)?;
        let header = table.header.join(",");
        let svg = out.join(format!("{stem}.svg"));
        if header == SWEEP_HEADER {
            let xs = table.column("value");
            let axis = table.rows.first().and_then(|r| r.first()).cloned().unwrap_or_default();
            render(
                &svg,
                &stem,
                &axis,
                &xs,
                &[
                    ("success rate", vec![("SR", table.column("success_rate"))]),
                    ("questions per episode", vec![("questions", table.column("mean_questions"))]),
                ],
            )?;
            summary.push_str(&format!(
                "\n## {stem}\n\n| {axis} | SR | questions | moves | ask% | n |\n|---|---|---|---|---|---|\n"
            ));
            for r in &table.rows {
                let f = |i: usize| r.get(i).and_then(|x| x.parse::<f64>().ok()).unwrap_or(f64::NAN);
                summary.push_str(&format!(
                    "| {} | {:.3} | {:.2} | {:.2} | {:.3} | {} |\n",
                    r[1],
                    f(2),
                    f(3),
                    f(4),
                    f(5),
                    r.get(6).map(String::as_str).unwrap_or("")
                ));
            }
        } else if header == DATA_CURVE_HEADER {
            render(
                &svg,
                &stem,
                "items",
                &table.column("size"),
                &[(
                    "evaluation success rate",
                    vec![
                        ("human-guided", table.column("human_sr")),
                        ("pre-exploration", table.column("preexp_sr")),
                    ],
                )],
            )?;
            summary.push_str(&format!(
                "\n## {stem}\n\n| items | human-guided SR | pre-exploration SR |\n|---|---|---|\n"
            ));
            for r in &table.rows {
                summary.push_str(&format!("| {} | {} | {} |\n", r[0], r[1], r[2]));
            }
        } else if header == CURVE_HEADER {
            render(
                &svg,
                &stem,
                "iteration",
                &table.column("iter"),
                &[
                    (
                        "losses",
                        vec![("imitation", table.column("il_loss")), ("policy", table.column("rl_loss"))],
                    ),
                    ("validation", vec![("SR", table.column("val_sr")), ("questions", table.column("val_asks"))]),
                ],
            )?;
        } else {
            continue;
        }
        written.push(svg);
    }
    let p = out.join("summary.md");
    std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))?;
    Ok(written)
}
