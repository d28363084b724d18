//! Bare-bones polyline plots. Enough to eyeball a learning curve.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

/// Plots each series against its index. Non-finite values break the line.
pub fn line_plot(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let len = series.iter().map(|s| s.values.len()).max().unwrap_or(1).max(2);
    let sx = (WIDTH - 2.0 * MARGIN) / (len - 1) as f64;
    let sy = (HEIGHT - 2.0 * MARGIN) / (hi - lo);
    let px = |i: usize| MARGIN + i as f64 * sx;
    let py = |v: f64| HEIGHT - MARGIN - (v - lo) * sy;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, MARGIN - 4.0, MARGIN + 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, MARGIN - 4.0, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, 4.0, MARGIN - 12.0, escape(y_label));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, len - 1);

    for (idx, s) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, px(i), py(v));
            pen_down = true;
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.trim_end());
        let ly = MARGIN + 16.0 * idx as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
