//! SVG figures: line plots for profiles, time series and scaling cuts,
//! heatmaps for grid scans.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{HarnessError, Result};

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn padded_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    if !(lo.is_finite() && hi.is_finite()) {
        return 0.0..1.0;
    }
    if hi - lo < 1e-12 {
        return lo - 0.5..hi + 0.5;
    }
    let pad = 0.05 * (hi - lo);
    lo - pad..hi + pad
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| HarnessError::output(path, e);
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(padded_range(x0, x1), padded_range(y0, y1))
        .map_err(|e| fail(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| fail(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| fail(&e))?
            .label(&s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| fail(&e))?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| fail(&e))?;
    }
    root.present().map_err(|e| fail(&e))
}

/// Heatmap over the `(α, β)` grid. `values[i * betas.len() + j]` belongs to
/// `(alphas[i], betas[j])`; missing values are drawn grey.
pub fn heatmap(path: &Path, title: &str, alphas: &[f64], betas: &[f64], values: &[Option<f64>]) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| HarnessError::output(path, e);
    let (lo, hi) = bounds(values.iter().flatten().copied());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let step = |axis: &[f64]| {
        if axis.len() > 1 {
            (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
        } else {
            0.1
        }
    };
    let (da, db) = (step(alphas), step(betas));
    let x_range = alphas[0] - da / 2.0..alphas[alphas.len() - 1] + da / 2.0;
    let y_range = betas[0] - db / 2.0..betas[betas.len() - 1] + db / 2.0;

    let root = SVGBackend::new(path, (760, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(&e))?;
    let (main, bar) = root.split_horizontally(640);
    let mut chart = ChartBuilder::on(&main)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x_range, y_range)
        .map_err(|e| fail(&e))?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("alpha")
        .y_desc("beta")
        .draw()
        .map_err(|e| fail(&e))?;
    let cells = alphas.iter().enumerate().flat_map(|(i, &a)| {
        betas.iter().enumerate().map(move |(j, &b)| (a, b, values[i * betas.len() + j]))
    });
    chart
        .draw_series(cells.map(|(a, b, v)| {
            let color = match v {
                Some(v) if v.is_finite() => ViridisRGB::get_color_normalized(v, lo, lo + span),
                _ => RGBColor(200, 200, 200),
            };
            Rectangle::new(
                [(a - da / 2.0, b - db / 2.0), (a + da / 2.0, b + db / 2.0)],
                color.filled(),
            )
        }))
        .map_err(|e| fail(&e))?;

    let mut scale = ChartBuilder::on(&bar)
        .margin_top(44)
        .margin_bottom(52)
        .margin_right(12)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..1.0, lo..lo + span)
        .map_err(|e| fail(&e))?;
    scale
        .configure_mesh()
        .disable_mesh()
        .disable_x_axis()
        .y_label_formatter(&|v| format!("{v:.3e}"))
        .draw()
        .map_err(|e| fail(&e))?;
    let bands = 64;
    scale
        .draw_series((0..bands).map(|k| {
            let v0 = lo + span * k as f64 / bands as f64;
            let v1 = lo + span * (k + 1) as f64 / bands as f64;
            Rectangle::new(
                [(0.0, v0), (1.0, v1)],
                ViridisRGB::get_color_normalized(0.5 * (v0 + v1), lo, lo + span).filled(),
            )
        }))
        .map_err(|e| fail(&e))?;
    root.present().map_err(|e| fail(&e))
}
