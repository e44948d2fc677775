//! Minimal SVG rendering: heatmaps, line plots and grouped bar charts.
//!
//! Output is plain SVG 1.1 with fixed-precision coordinates, so the same
//! data always renders to the same bytes.

use std::fmt::Write;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    out.push('\n');
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#, esc(s));
}

/// Sequential white→dark-red ramp for `v ∈ [0, 1]`.
fn ramp(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = 255.0 - 75.0 * v;
    let g = 255.0 - 235.0 * v;
    let b = 255.0 - 225.0 * v;
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn finite_range(vals: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        if !v.is_finite() {
            return Err(Error::Numeric("cannot plot non-finite values".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Empty("nothing to plot".into()));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    Ok((lo, hi))
}

/// Row-major `rows × cols` heatmap; row 0 is drawn at the top.
pub fn heatmap(title: &str, rows: usize, cols: usize, values: &[f64], row_label: &str, col_label: &str) -> Result<String> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!("{} values for a {rows}x{cols} heatmap", values.len())));
    }
    let (lo, hi) = finite_range(values.iter().copied())?;
    let (cw, ch) = ((W - 2.0 * MARGIN - 60.0) / cols as f64, (H - 2.0 * MARGIN) / rows as f64);
    let mut out = String::new();
    header(&mut out, title);
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"><title>{r},{c}: {v:.4}</title></rect>"#,
                MARGIN + c as f64 * cw,
                MARGIN + r as f64 * ch,
                ramp((v - lo) / (hi - lo))
            );
        }
        text(&mut out, MARGIN - 6.0, MARGIN + (r as f64 + 0.7) * ch, "end", &r.to_string());
    }
    for c in 0..cols {
        text(&mut out, MARGIN + (c as f64 + 0.5) * cw, H - MARGIN + 14.0, "middle", &c.to_string());
    }
    text(&mut out, (W - 60.0) / 2.0, H - 12.0, "middle", col_label);
    text(&mut out, 14.0, H / 2.0, "middle", row_label);
    let lx = W - MARGIN - 30.0;
    for i in 0..10 {
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            MARGIN + i as f64 * (H - 2.0 * MARGIN) / 10.0,
            (H - 2.0 * MARGIN) / 10.0,
            ramp(1.0 - i as f64 / 9.0)
        );
    }
    text(&mut out, lx + 18.0, MARGIN + 8.0, "start", &format!("{hi:.3}"));
    text(&mut out, lx + 18.0, H - MARGIN, "start", &format!("{lo:.3}"));
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

pub fn line_plot(title: &str, series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    let (x0, x1) = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)))?;
    let (y0, y1) = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)))?;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (x0, x1), (y0, y1), x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        legend(&mut out, i, color, &s.label);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<f64>,
    /// Optional `(low, high)` band drawn per group, e.g. an interquartile range.
    pub band: Option<(f64, f64)>,
}

pub fn bar_chart(title: &str, series_labels: &[&str], groups: &[BarGroup], y_label: &str) -> Result<String> {
    if groups.iter().any(|g| g.values.len() != series_labels.len()) {
        return Err(Error::DimensionMismatch("every bar group needs one value per series".into()));
    }
    let vals = groups
        .iter()
        .flat_map(|g| g.values.iter().copied().chain(g.band.into_iter().flat_map(|(a, b)| [a, b])))
        .chain([0.0]);
    let (y0, y1) = finite_range(vals)?;
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let gw = (W - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series_labels.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (0.0, groups.len() as f64), (y0, y1), "", y_label);
    for (gi, g) in groups.iter().enumerate() {
        let gx = MARGIN + gi as f64 * gw + gw * 0.1;
        if let Some((lo, hi)) = g.band {
            let _ = writeln!(
                out,
                r##"<rect class="band" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cccccc" fill-opacity="0.5"/>"##,
                gx - gw * 0.05,
                sy(hi),
                gw * 0.9,
                (sy(lo) - sy(hi)).max(0.5)
            );
        }
        for (si, &v) in g.values.iter().enumerate() {
            let (top, bottom) = (sy(v.max(0.0)), sy(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect class="bar" x="{:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                gx + si as f64 * bw,
                (bottom - top).max(0.5),
                COLORS[si % COLORS.len()],
                esc(series_labels[si])
            );
        }
        text(&mut out, gx + gw * 0.4, H - MARGIN + 14.0, "middle", &g.label);
    }
    for (si, l) in series_labels.iter().enumerate() {
        legend(&mut out, si, COLORS[si % COLORS.len()], l);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn axes(out: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64), x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<path d="M{m:.2},{t:.2} L{m:.2},{b:.2} L{r:.2},{b:.2}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = H - MARGIN - f * (H - 2.0 * MARGIN);
        text(out, MARGIN - 6.0, y + 4.0, "end", &format!("{:.3}", y0 + f * (y1 - y0)));
        if !x_label.is_empty() {
            let x = MARGIN + f * (W - 2.0 * MARGIN);
            text(out, x, H - MARGIN + 14.0, "middle", &format!("{:.3}", x0 + f * (x1 - x0)));
        }
    }
    text(out, W / 2.0, H - 12.0, "middle", x_label);
    text(out, 14.0, H / 2.0, "middle", y_label);
}

fn legend(out: &mut String, i: usize, color: &str, label: &str) {
    let y = MARGIN + 14.0 * i as f64;
    let _ = writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, W - MARGIN - 120.0, y - 9.0);
    text(out, W - MARGIN - 106.0, y, "start", label);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_cell_per_value() {
        let v: Vec<f64> = (0..144).map(|i| i as f64).collect();
        let svg = heatmap("S(0)", 12, 12, &v, "layer", "head").unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 144);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg, heatmap("S(0)", 12, 12, &v, "layer", "head").unwrap());
        assert!(heatmap("x", 2, 2, &[1.0; 3], "", "").is_err());
        assert!(heatmap("x", 1, 1, &[f64::NAN], "", "").is_err());
        // Constant input still renders.
        assert!(heatmap("x", 2, 2, &[1.0; 4], "", "").is_ok());
    }

    #[test]
    fn lines_and_bars() {
        let s = vec![
            Series { label: "a<b".into(), points: vec![(-1.0, 1.0), (0.0, 3.0), (1.0, 1.0)] },
            Series { label: "c".into(), points: vec![(-1.0, 1.0), (1.0, 2.0)] },
        ];
        let svg = line_plot("curves", &s, "t", "S").unwrap();
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert!(svg.contains("a&lt;b"));
        let groups = vec![
            BarGroup { label: "0".into(), values: vec![0.1, -0.05], band: Some((0.0, 0.02)) },
            BarGroup { label: "1".into(), values: vec![0.2, 0.0], band: None },
        ];
        let svg = bar_chart("sel", &["orientation", "location"], &groups, "selectivity").unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 4);
        assert_eq!(svg.matches(r#"class="band""#).count(), 1);
        assert!(bar_chart("x", &["a"], &groups, "").is_err());
    }
}
