//! SVG line charts for sweep tables and training curves.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::sweep::{read_sweep_csv, CsvRow, SWEEP_HEADER};
use crate::error::{Error, Result};
use crate::trainer::read_curve_csv;

const SIZE: (u32, u32) = (720, 480);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(148, 103, 189),
        RGBColor(255, 127, 14),
        RGBColor(127, 127, 127),
    ];
    COLORS[i % COLORS.len()]
}

fn padded_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

/// One line per method with a shaded 95% band.
pub fn plot_sweep(rows: &[CsvRow], x_label: &str, title: &str, out: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Plot("sweep table has no methods".into()));
    }
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| r.axis.parse::<f64>().map_err(|_| Error::Plot(format!("axis value `{}` is not numeric", r.axis))))
        .collect::<Result<_>>()?;
    let mut methods = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let (x_lo, x_hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (y_lo, y_hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.summary.ci_low), b.max(r.summary.ci_high)));
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(padded_range(x_lo, x_hi), padded_range(y_lo.min(0.0), y_hi))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("mean sum secrecy rate (bit/s/Hz)")
        .draw()
        .map_err(plot_err)?;
    for (i, m) in methods.iter().enumerate() {
        let color = palette(i);
        let pts: Vec<(f64, &CsvRow)> = xs.iter().copied().zip(rows).filter(|(_, r)| r.method == *m).collect();
        let mut band: Vec<(f64, f64)> = pts.iter().map(|(x, r)| (*x, r.summary.ci_high)).collect();
        band.extend(pts.iter().rev().map(|(x, r)| (*x, r.summary.ci_low)));
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.iter().map(|(x, r)| (*x, r.summary.mean)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(m.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|(x, r)| Circle::new((*x, r.summary.mean), 3, color.filled())))
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

/// Single-series convergence chart.
pub fn plot_curve(epochs: &[usize], values: &[f64], y_label: &str, title: &str, out: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = epochs
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite())
        .map(|(&e, &v)| (e as f64, v))
        .collect();
    if pts.is_empty() {
        return Err(Error::Plot("curve has no points".into()));
    }
    let (x_lo, x_hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y_lo, y_hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(padded_range(x_lo, x_hi), padded_range(y_lo, y_hi))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(pts, palette(0).stroke_width(2)))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Render every CSV into `out_dir`, one `<stem>.svg` per input. Sweep tables
/// are recognized by their header; two-column `epoch,<metric>` files become
/// convergence charts.
pub fn emit_plots(csvs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csvs.is_empty() {
        return Err(Error::Plot("no input files".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for csv in csvs {
        let stem = csv
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Plot(format!("bad file name {}", csv.display())))?;
        let out = out_dir.join(format!("{stem}.svg"));
        let header = std::fs::read_to_string(csv)?.lines().next().unwrap_or_default().trim().to_string();
        if header == SWEEP_HEADER {
            let rows = read_sweep_csv(csv)?;
            let axis = stem.strip_prefix("sweep_").unwrap_or(stem);
            let label = axis.parse::<super::sweep::Axis>().map(|a| a.label()).unwrap_or(axis);
            plot_sweep(&rows, label, &format!("sum secrecy rate vs {axis}"), &out)?;
        } else if header.starts_with("epoch,") {
            let (column, epochs, values) = read_curve_csv(csv)?;
            plot_curve(&epochs, &values, &column, &format!("{stem}: {column} per epoch"), &out)?;
        } else {
            return Err(Error::CorruptData {
                path: csv.clone(),
                reason: format!("unrecognized header `{header}`"),
            });
        }
        written.push(out);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::eval::{MethodId, Summary};
    use crate::experiments::sweep::{write_sweep_csv, SweepRow};

    fn rows() -> Vec<SweepRow> {
        let mut out = Vec::new();
        for (i, v) in [0.0, 5.0, 10.0].into_iter().enumerate() {
            for (j, m) in [MethodId::Opt, MethodId::RzfNs].into_iter().enumerate() {
                let mean = 1.0 + i as f64 - 0.3 * j as f64;
                out.push(SweepRow {
                    value: v,
                    method: m,
                    summary: Summary {
                        mean,
                        ci_low: mean - 0.2,
                        ci_high: mean + 0.2,
                        n: 16,
                    },
                    channel_hash: String::new(),
                });
            }
        }
        out
    }

    #[test]
    fn sweep_plot_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("sweep_power.csv");
        write_sweep_csv(&csv, &rows()).unwrap();
        let a = emit_plots(&[csv.clone()], &dir.path().join("a")).unwrap();
        let b = emit_plots(&[csv], &dir.path().join("b")).unwrap();
        let (a, b) = (std::fs::read(&a[0]).unwrap(), std::fs::read(&b[0]).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().contains("<svg"));
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("sweep_power.csv");
        write_sweep_csv(&csv, &[]).unwrap();
        let out = dir.path().join("fig");
        assert!(emit_plots(&[csv], &out).is_err());
        assert!(!out.join("sweep_power.svg").exists());
    }

    #[test]
    fn curves_and_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("loss.csv");
        crate::trainer::write_curve_csv(&csv, "loss", &[1, 2, 3], &[3.0, 2.0, 1.5]).unwrap();
        let out = emit_plots(&[csv], dir.path()).unwrap();
        assert!(std::fs::metadata(&out[0]).unwrap().len() > 0);
        let junk = dir.path().join("junk.csv");
        std::fs::write(&junk, "a,b,c\n").unwrap();
        assert!(emit_plots(&[junk], dir.path()).is_err());
        assert!(emit_plots(&[], dir.path()).is_err());
    }
}
