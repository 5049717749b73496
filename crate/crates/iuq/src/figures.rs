//! Figure emission: calibration scatter plots with a linear fit, and
//! qualitative panel grids. Rendered directly onto pixel buffers so the
//! binary stays dependency-light; numeric results (fit coefficients) are
//! written alongside as CSV.

use std::path::{Path, PathBuf};

use anyhow::Context;
use image::{Rgb, RgbImage};
use serde::Serialize;

const PLOT_SIZE: u32 = 640;
const MARGIN: u32 = 48;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

fn least_squares(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        n: points.len(),
    }
}

/// Scatter of (sigma, |error|) points with a red least-squares line.
/// Returns the fit and writes `<stem>.png` plus `<stem>_fit.csv`.
pub fn calibration_scatter(points: &[(f64, f64)], stem: &Path) -> anyhow::Result<LinearFit> {
    anyhow::ensure!(points.len() >= 2, "scatter needs at least 2 points");
    let fit = least_squares(points);
    let max_x = points.iter().map(|p| p.0).fold(0.0f64, f64::max).max(1e-9) * 1.05;
    let max_y = points.iter().map(|p| p.1).fold(0.0f64, f64::max).max(1e-9) * 1.05;

    let mut img = RgbImage::from_pixel(PLOT_SIZE, PLOT_SIZE, Rgb([255, 255, 255]));
    let inner = (PLOT_SIZE - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = MARGIN as f64 + (x / max_x) * inner;
        let py = (PLOT_SIZE - MARGIN) as f64 - (y / max_y) * inner;
        (px.round() as i64, py.round() as i64)
    };
    let mut put = |x: i64, y: i64, c: Rgb<u8>| {
        if x >= 0 && y >= 0 && (x as u32) < PLOT_SIZE && (y as u32) < PLOT_SIZE {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    // axes
    for t in MARGIN..=(PLOT_SIZE - MARGIN) {
        put(MARGIN as i64, t as i64, Rgb([60, 60, 60]));
        put(t as i64, (PLOT_SIZE - MARGIN) as i64, Rgb([60, 60, 60]));
    }
    // light grid at quarters
    for q in 1..4u32 {
        let t = MARGIN + (PLOT_SIZE - 2 * MARGIN) * q / 4;
        for s in MARGIN..=(PLOT_SIZE - MARGIN) {
            put(t as i64, s as i64, Rgb([225, 225, 225]));
            put(s as i64, t as i64, Rgb([225, 225, 225]));
        }
    }
    // points
    for (x, y) in points {
        let (px, py) = to_px(*x, *y);
        for dx in 0..2 {
            for dy in 0..2 {
                put(px + dx, py + dy, Rgb([40, 70, 160]));
            }
        }
    }
    // fit line sampled across the x range
    for i in 0..=400 {
        let x = max_x * i as f64 / 400.0;
        let y = fit.slope * x + fit.intercept;
        if y < 0.0 || y > max_y {
            continue;
        }
        let (px, py) = to_px(x, y);
        put(px, py, Rgb([200, 30, 30]));
        put(px, py + 1, Rgb([200, 30, 30]));
    }

    let png = stem.with_extension("png");
    if let Some(parent) = png.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(&png).with_context(|| format!("writing {}", png.display()))?;
    let csv = format!(
        "slope,intercept,n\n{},{},{}\n",
        fit.slope, fit.intercept, fit.n
    );
    std::fs::write(stem.with_file_name(format!(
        "{}_fit.csv",
        stem.file_name().and_then(|s| s.to_str()).unwrap_or("fit")
    )), csv)?;
    Ok(fit)
}

/// Tiles per-frame panel PNGs into a rows x cols grid with 2px separators.
/// Rows with missing panels are skipped and reported back to the caller.
pub fn panel_grid(
    rows: &[Vec<PathBuf>],
    out: &Path,
) -> anyhow::Result<Vec<String>> {
    let mut warnings = Vec::new();
    let mut loaded: Vec<Vec<RgbImage>> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let mut imgs = Vec::new();
        let mut ok = true;
        for p in row {
            match image::open(p) {
                Ok(img) => imgs.push(img.to_rgb8()),
                Err(e) => {
                    warnings.push(format!("row {i}: missing panel {}: {e}", p.display()));
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            loaded.push(imgs);
        }
    }
    anyhow::ensure!(!loaded.is_empty(), "no complete panel rows to tile");
    let cell_w = loaded[0][0].width();
    let cell_h = loaded[0][0].height();
    let cols = loaded[0].len() as u32;
    let sep = 2u32;
    let total_w = cols * cell_w + (cols - 1) * sep;
    let total_h = loaded.len() as u32 * cell_h + (loaded.len() as u32 - 1) * sep;
    let mut canvas = RgbImage::from_pixel(total_w, total_h, Rgb([255, 255, 255]));
    for (ri, row) in loaded.iter().enumerate() {
        for (ci, cell) in row.iter().enumerate() {
            let ox = ci as u32 * (cell_w + sep);
            let oy = ri as u32 * (cell_h + sep);
            for (x, y, px) in cell.enumerate_pixels() {
                if x < cell_w && y < cell_h {
                    canvas.put_pixel(ox + x, oy + y, *px);
                }
            }
        }
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(warnings)
}


/// Builds figures from a finished experiment's persisted artifacts: one
/// calibration scatter per run with scatter data, one qualitative grid per
/// run with saved panels. Returns the number of figures written; skipped
/// items are listed in `figures/manifest.json`.
pub fn emit_figures(out_dir: &Path) -> anyhow::Result<usize> {
    let (_, reports) = crate::report::load_experiment(out_dir)?;
    let fig_dir = out_dir.join("figures");
    std::fs::create_dir_all(&fig_dir)?;
    let mut written = 0usize;
    let mut skipped: Vec<String> = Vec::new();
    for r in &reports {
        let scatter_csv = out_dir.join("scatter").join(format!("{}.csv", r.run_id));
        if scatter_csv.exists() {
            let text = std::fs::read_to_string(&scatter_csv)?;
            let points: Vec<(f64, f64)> = text
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let mut it = l.split(',');
                    Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
                })
                .collect();
            if points.len() >= 2 {
                calibration_scatter(&points, &fig_dir.join(format!("{}_calibration", r.run_id)))?;
                written += 1;
            } else {
                skipped.push(format!("{}: not enough scatter points", r.run_id));
            }
        } else {
            skipped.push(format!("{}: no scatter data (no sigma head)", r.run_id));
        }

        let maps_dir = out_dir.join("maps").join(&r.run_id);
        if maps_dir.is_dir() {
            let mut rows = Vec::new();
            for k in 0.. {
                let panel = |name: &str| maps_dir.join(format!("frame_{k:02}_{name}.png"));
                if !panel("input").exists() {
                    break;
                }
                rows.push(vec![
                    panel("input"),
                    panel("reflectance"),
                    panel("shading"),
                    panel("residual"),
                    panel("sigma_tex"),
                    panel("sigma_nl"),
                ]);
            }
            if !rows.is_empty() {
                match panel_grid(&rows, &fig_dir.join(format!("{}_grid.png", r.run_id))) {
                    Ok(warnings) => {
                        skipped.extend(warnings.into_iter().map(|w| format!("{}: {w}", r.run_id)));
                        written += 1;
                    }
                    Err(e) => skipped.push(format!("{}: grid failed: {e}", r.run_id)),
                }
            } else {
                skipped.push(format!("{}: no panel images", r.run_id));
            }
        } else {
            skipped.push(format!("{}: no maps directory", r.run_id));
        }
    }
    std::fs::write(
        fig_dir.join("manifest.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "written": written,
            "skipped": skipped,
        }))?,
    )?;
    Ok(written)
}
