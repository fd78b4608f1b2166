//! Posterior summaries: mean/std table, Gaussian KDE grids and a corner-plot
//! export (per-panel CSV plus one SVG).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::prior::PriorBox;

pub const GRID_1D: usize = 200;
pub const GRID_2D: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub real: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub prior_lower: f64,
    pub prior_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub rows: Vec<TableRow>,
}

impl PosteriorTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,real,mean,std,prior_lower,prior_upper\n");
        for r in &self.rows {
            let real = r.real.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{real},{},{},{},{}", r.name, r.mean, r.std, r.prior_lower, r.prior_upper);
        }
        s
    }
}

fn column(samples: &[Vec<f64>], k: usize) -> Vec<f64> {
    samples.iter().map(|s| s[k]).collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-parameter sample mean and (n-1) standard deviation.
pub fn posterior_table(samples: &[Vec<f64>], truth: Option<&[f64]>, prior: &PriorBox) -> Result<PosteriorTable> {
    check_samples(samples, prior)?;
    let rows = (0..prior.dim())
        .map(|k| {
            let (mean, std) = mean_std(&column(samples, k));
            TableRow {
                name: prior.names[k].clone(),
                real: truth.map(|t| t[k]),
                mean,
                std,
                prior_lower: prior.lower[k],
                prior_upper: prior.upper[k],
            }
        })
        .collect();
    Ok(PosteriorTable { rows })
}

fn check_samples(samples: &[Vec<f64>], prior: &PriorBox) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples; at least 2 needed", samples.len())));
    }
    if samples.iter().any(|s| s.len() != prior.dim() || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Format(format!("every sample needs {} finite values", prior.dim())));
    }
    Ok(())
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Scott's rule `sigma * n^(-1/(d+4))`.
pub fn scott_bandwidth(x: &[f64], d: usize) -> Result<f64> {
    let (mean, sd) = mean_std(x);
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::InsufficientData(
            "samples have zero spread; kernel density is undefined, use the table only".into(),
        ));
    }
    Ok(sd * (x.len() as f64).powf(-1.0 / (d as f64 + 4.0)))
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian KDE on `grid` with bandwidth `h`.
pub fn kde_1d_with(x: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    let norm = INV_SQRT_2PI / (h * x.len() as f64);
    grid.iter()
        .map(|g| x.iter().map(|v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// Gaussian KDE with Scott's bandwidth; returns densities and the bandwidth.
pub fn kde_1d(x: &[f64], grid: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("kernel density needs at least 2 samples".into()));
    }
    let h = scott_bandwidth(x, 1)?;
    Ok((kde_1d_with(x, grid, h), h))
}

/// Product-kernel 2-D KDE. Result is row-major over `(gy, gx)`: entry
/// `i * gx.len() + j` is the density at `(gx[j], gy[i])`.
pub fn kde_2d(x: &[f64], y: &[f64], gx: &[f64], gy: &[f64]) -> Result<(Vec<f64>, [f64; 2])> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InsufficientData("kernel density needs at least 2 paired samples".into()));
    }
    let (hx, hy) = (scott_bandwidth(x, 2)?, scott_bandwidth(y, 2)?);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * hx * hy * x.len() as f64);
    // Separable kernel: precompute per-axis weights.
    let wx: Vec<Vec<f64>> = gx.iter().map(|g| x.iter().map(|v| (-0.5 * ((g - v) / hx).powi(2)).exp()).collect()).collect();
    let wy: Vec<Vec<f64>> = gy.iter().map(|g| y.iter().map(|v| (-0.5 * ((g - v) / hy).powi(2)).exp()).collect()).collect();
    let mut out = Vec::with_capacity(gx.len() * gy.len());
    for row in &wy {
        for col in &wx {
            out.push(row.iter().zip(col).map(|(a, b)| a * b).sum::<f64>() * norm);
        }
    }
    Ok((out, [hx, hy]))
}

/// Trapezoid rule.
pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1])).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDensity {
    /// Column parameter index (horizontal axis).
    pub x: usize,
    /// Row parameter index (vertical axis), always greater than `x`.
    pub y: usize,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidths: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub names: Vec<String>,
    pub marginals: Vec<Marginal>,
    pub pairs: Vec<PairDensity>,
}

/// Marginal and pairwise KDEs over the prior intervals.
pub fn kde_grid(samples: &[Vec<f64>], prior: &PriorBox) -> Result<KdeGrid> {
    check_samples(samples, prior)?;
    let d = prior.dim();
    let cols: Vec<Vec<f64>> = (0..d).map(|k| column(samples, k)).collect();
    let mut marginals = Vec::with_capacity(d);
    for k in 0..d {
        let grid = linspace(prior.lower[k], prior.upper[k], GRID_1D);
        let (density, bandwidth) = kde_1d(&cols[k], &grid)?;
        marginals.push(Marginal { name: prior.names[k].clone(), grid, density, bandwidth });
    }
    let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
    for y in 1..d {
        for x in 0..y {
            let x_grid = linspace(prior.lower[x], prior.upper[x], GRID_2D);
            let y_grid = linspace(prior.lower[y], prior.upper[y], GRID_2D);
            let (density, bandwidths) = kde_2d(&cols[x], &cols[y], &x_grid, &y_grid)?;
            pairs.push(PairDensity { x, y, x_grid, y_grid, density, bandwidths });
        }
    }
    Ok(KdeGrid { names: prior.names.clone(), marginals, pairs })
}

/// Corner-plot geometry shared by the SVG writer and its tests.
pub mod layout {
    pub const PANEL: f64 = 120.0;
    pub const GAP: f64 = 10.0;
    pub const MARGIN: f64 = 50.0;

    pub fn panel_origin(row: usize, col: usize) -> (f64, f64) {
        (MARGIN + col as f64 * (PANEL + GAP), MARGIN + row as f64 * (PANEL + GAP))
    }

    /// Horizontal pixel of value `v` in column `col` spanning `[lo, hi]`.
    pub fn x_pixel(col: usize, v: f64, lo: f64, hi: f64) -> f64 {
        panel_origin(0, col).0 + (v - lo) / (hi - lo) * PANEL
    }

    /// Vertical pixel of value `v` in row `row`; larger values sit higher.
    pub fn y_pixel(row: usize, v: f64, lo: f64, hi: f64) -> f64 {
        panel_origin(row, 0).1 + PANEL - (v - lo) / (hi - lo) * PANEL
    }
}

fn svg(grid: &KdeGrid, truth: Option<&[f64]>, prior: &PriorBox) -> String {
    use layout::*;
    let d = grid.names.len();
    let size = 2.0 * MARGIN + d as f64 * PANEL + (d as f64 - 1.0) * GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, m) in grid.marginals.iter().enumerate() {
        let (x0, y0) = panel_origin(k, k);
        let peak = m.density.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let _ = writeln!(s, r#"<g id="diag-{}">"#, m.name);
        let _ = writeln!(s, r#"<rect x="{x0:.3}" y="{y0:.3}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#);
        let pts: Vec<String> = m
            .grid
            .iter()
            .zip(&m.density)
            .map(|(g, v)| {
                let px = x_pixel(k, *g, prior.lower[k], prior.upper[k]);
                let py = y0 + PANEL - 0.9 * PANEL * v / peak;
                format!("{px:.3},{py:.3}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        if let Some(t) = truth {
            let px = x_pixel(k, t[k], prior.lower[k], prior.upper[k]);
            let _ = writeln!(
                s,
                r#"<line id="truth-{}" x1="{px:.3}" y1="{y0:.3}" x2="{px:.3}" y2="{:.3}" stroke="red" stroke-width="1.5"/>"#,
                m.name,
                y0 + PANEL
            );
        }
        let _ = writeln!(s, "</g>");
    }
    for p in &grid.pairs {
        let (x0, y0) = panel_origin(p.y, p.x);
        let peak = p.density.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let nx = p.x_grid.len();
        let ny = p.y_grid.len();
        let (cw, ch) = (PANEL / nx as f64, PANEL / ny as f64);
        let _ = writeln!(s, r#"<g id="pair-{}-{}">"#, grid.names[p.x], grid.names[p.y]);
        for i in 0..ny {
            for j in 0..nx {
                let v = p.density[i * nx + j] / peak;
                if v < 0.01 {
                    continue;
                }
                // Grid row i is the i-th y value counted from the bottom.
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="navy" fill-opacity="{v:.3}"/>"#,
                    x0 + j as f64 * cw,
                    y0 + PANEL - (i + 1) as f64 * ch,
                    cw,
                    ch
                );
            }
        }
        let _ = writeln!(s, r#"<rect x="{x0:.3}" y="{y0:.3}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#);
        if let Some(t) = truth {
            let cx = x_pixel(p.x, t[p.x], prior.lower[p.x], prior.upper[p.x]);
            let cy = y_pixel(p.y, t[p.y], prior.lower[p.y], prior.upper[p.y]);
            let _ = writeln!(s, r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="3" fill="red"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    for (k, name) in grid.names.iter().enumerate() {
        let (x0, _) = panel_origin(d - 1, k);
        let (_, y0) = panel_origin(k, 0);
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{name}</text>"#,
            x0 + PANEL / 2.0,
            size - MARGIN / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" transform="rotate(-90 {:.3} {:.3})">{name}</text>"#,
            MARGIN / 2.0,
            y0 + PANEL / 2.0,
            MARGIN / 2.0,
            y0 + PANEL / 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write `panels/marginal_<name>.csv`, `panels/pair_<x>_<y>.csv` and
/// `pairplot.svg` under `out`. Returns the written paths.
pub fn pairplot_export(samples: &[Vec<f64>], truth: Option<&[f64]>, prior: &PriorBox, out: &Path) -> Result<Vec<PathBuf>> {
    let grid = kde_grid(samples, prior)?;
    let panels = out.join("panels");
    fs::create_dir_all(&panels)?;
    let mut written = Vec::new();
    for m in &grid.marginals {
        let mut s = format!("{},density\n", m.name);
        for (g, v) in m.grid.iter().zip(&m.density) {
            let _ = writeln!(s, "{g},{v}");
        }
        let path = panels.join(format!("marginal_{}.csv", m.name));
        fs::write(&path, s)?;
        written.push(path);
    }
    for p in &grid.pairs {
        let (xn, yn) = (&grid.names[p.x], &grid.names[p.y]);
        let mut s = format!("{xn},{yn},density\n");
        let nx = p.x_grid.len();
        for (i, gy) in p.y_grid.iter().enumerate() {
            for (j, gx) in p.x_grid.iter().enumerate() {
                let _ = writeln!(s, "{gx},{gy},{}", p.density[i * nx + j]);
            }
        }
        let path = panels.join(format!("pair_{xn}_{yn}.csv"));
        fs::write(&path, s)?;
        written.push(path);
    }
    let path = out.join("pairplot.svg");
    fs::write(&path, svg(&grid, truth, prior))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::RngStream;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn two_sample_table() {
        let prior = PriorBox::new(vec!["a".into()], vec![0.0], vec![1.0]).unwrap();
        let t = posterior_table(&[vec![0.2], vec![0.6]], Some(&[0.5]), &prior).unwrap();
        assert_relative_eq!(t.rows[0].mean, 0.4, epsilon = 1e-15);
        assert_relative_eq!(t.rows[0].std, 0.4 / 2f64.sqrt(), epsilon = 1e-15);
        let same = posterior_table(&[vec![0.3], vec![0.3], vec![0.3]], None, &prior).unwrap();
        assert_eq!(same.rows[0].std, 0.0);
        assert_eq!(t.to_csv().lines().next().unwrap(), "parameter,real,mean,std,prior_lower,prior_upper");
    }

    #[test]
    fn symmetric_samples_have_exact_center() {
        let prior = PriorBox::new(vec!["a".into()], vec![0.0], vec![2.0]).unwrap();
        let s: Vec<Vec<f64>> = [0.25, 0.5, 1.0, 1.5, 1.75].iter().map(|v| vec![*v]).collect();
        assert_eq!(posterior_table(&s, None, &prior).unwrap().rows[0].mean, 1.0);
    }

    #[test]
    fn single_kernel_peak() {
        let h = 0.3;
        let v = kde_1d_with(&[1.0], &[1.0], h);
        assert_relative_eq!(v[0], 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn standard_normal_kde_at_zero() {
        let mut rng = RngStream::new(1, 0).rng();
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let (v, _) = kde_1d(&x, &[0.0]).unwrap();
        assert!((v[0] * (2.0 * std::f64::consts::PI).sqrt() - 1.0).abs() < 0.05);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = RngStream::new(2, 0).rng();
        let x: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (_, h) = kde_1d(&x, &[0.0]).unwrap();
        let lo = x.iter().cloned().fold(f64::MAX, f64::min) - 6.0 * h;
        let hi = x.iter().cloned().fold(f64::MIN, f64::max) + 6.0 * h;
        let grid = linspace(lo, hi, 2000);
        let (v, _) = kde_1d(&x, &grid).unwrap();
        assert!((trapezoid(&grid, &v) - 1.0).abs() < 0.01);
        assert!(v.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn zero_spread_is_an_error() {
        assert!(matches!(kde_1d(&[0.4, 0.4, 0.4], &[0.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn grid_counts_and_normalization() {
        let prior = PriorBox::vehicle_default();
        let mut rng = RngStream::new(3, 0).rng();
        let center: Vec<f64> = prior.lower.iter().zip(&prior.upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let widths = prior.widths();
        let samples: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..6).map(|k| center[k] + 0.05 * widths[k] * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let g = kde_grid(&samples, &prior).unwrap();
        assert_eq!(g.marginals.len(), 6);
        assert_eq!(g.pairs.len(), 15);
        for m in &g.marginals {
            assert_eq!(m.grid.len(), GRID_1D);
            assert!((trapezoid(&m.grid, &m.density) - 1.0).abs() < 0.02);
        }
        assert!(g.pairs.iter().all(|p| p.density.len() == GRID_2D * GRID_2D && p.y > p.x));
    }
}
