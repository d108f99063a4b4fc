//! Minimal SVG line and ellipse plots. Output depends only on the data, so a
//! fixed trace always produces the same bytes.

use std::fmt::Write;

use ljfuse_core::matrix::SpdMatrix;
use ljfuse_core::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series<'a> {
    pub label: String,
    pub xs: &'a [f64],
    pub ys: Vec<f64>,
    pub dashed: bool,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=4 {
        let xv = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let yv = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(xv), b + 16.0, tick(xv));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 4.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, labels: &[(String, &str, bool)]) {
    for (k, (label, color, dashed)) in labels.iter().enumerate() {
        let y = MARGIN + 12.0 + 14.0 * k as f64;
        let x = W - MARGIN - 90.0;
        let dash = if *dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}"{dash}/>"#, x + 18.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{label}</text>"#, x + 22.0, y + 4.0);
    }
}

/// Line plot of every series against its `xs`. `hlines` are drawn as thin
/// grey reference levels.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], hlines: &[f64]) -> String {
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.xs.iter()).filter(finite);
    let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let ys = series.iter().flat_map(|s| s.ys.iter()).chain(hlines).filter(finite);
    let (ylo, yhi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (y0, y1) = span(ylo, yhi);
    let f = Frame {
        x0: xlo,
        x1: if xhi > xlo { xhi } else { xlo + 1.0 },
        y0,
        y1,
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, xlabel, ylabel);
    for h in hlines {
        let y = f.py(*h);
        let _ = writeln!(out, r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#999" stroke-width="0.8"/>"##, W - MARGIN);
    }
    let mut labels = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (x, y) in s.xs.iter().zip(&s.ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*y));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"#, pts.trim_end());
        labels.push((s.label.clone(), color, s.dashed));
    }
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Boundary points of `{y : yᵀ P⁻¹ y ≤ 1}` for a 2×2 `P`, i.e. `L u` over the
/// unit circle with `P = L Lᵀ`.
pub fn ellipse_points(cov: &SpdMatrix, n: usize) -> Vec<[f64; 2]> {
    let chol = cov.cholesky();
    let l = chol.lower();
    (0..=n)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / n as f64;
            let (s, c) = th.sin_cos();
            [l[0] * c, l[2] * c + l[3] * s]
        })
        .collect()
}

pub struct EllipseLayer {
    pub label: String,
    pub cov: SpdMatrix,
    pub color: &'static str,
    pub width: f64,
}

/// Equal-aspect overlay of 2-D ellipses centred at the origin.
pub fn ellipse_plot(title: &str, layers: &[EllipseLayer]) -> Result<String> {
    let curves: Vec<Vec<[f64; 2]>> = layers.iter().map(|e| ellipse_points(&e.cov, 128)).collect();
    let r = curves
        .iter()
        .flatten()
        .map(|p| p[0].abs().max(p[1].abs()))
        .fold(0.0, f64::max)
        * 1.05;
    let side = H - 2.0 * MARGIN;
    let x_off = (W - side) / 2.0;
    let px = |x: f64| x_off + (x + r) / (2.0 * r) * side;
    let py = |y: f64| H - MARGIN - (y + r) / (2.0 * r) * side;
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r#"<rect x="{x_off}" y="{MARGIN}" width="{side}" height="{side}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = -r + 2.0 * r * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(v), H - MARGIN + 16.0, tick(v));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x_off - 4.0, py(v) + 4.0, tick(v));
    }
    let mut labels = Vec::new();
    for (layer, pts) in layers.iter().zip(&curves) {
        let mut d = String::new();
        for (k, p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, px(p[0]), py(p[1]));
        }
        let _ = writeln!(
            out,
            r#"<path d="{}Z" fill="none" stroke="{}" stroke-width="{}"/>"#,
            d,
            layer.color,
            layer.width
        );
        if !labels.iter().any(|(l, _, _): &(String, &str, bool)| *l == layer.label) {
            labels.push((layer.label.clone(), layer.color, false));
        }
    }
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic() {
        let xs = [0.0, 1.0, 2.0];
        let mk = || {
            line_plot(
                "t",
                "x",
                "y",
                &[Series {
                    label: "a".into(),
                    xs: &xs,
                    ys: vec![1.0, 0.5, f64::NAN],
                    dashed: false,
                }],
                &[0.95],
            )
        };
        let a = mk();
        assert_eq!(a, mk());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }

    #[test]
    fn ellipse_axes() {
        let p = SpdMatrix::from_diag(&[4.0, 1.0]).unwrap();
        let pts = ellipse_points(&p, 4);
        assert!((pts[0][0] - 2.0).abs() < 1e-12 && pts[0][1].abs() < 1e-12);
        assert!(pts[1][0].abs() < 1e-12 && (pts[1][1] - 1.0).abs() < 1e-12);
    }
}
