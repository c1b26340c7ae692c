//! SVG renderings of layouts and transmission curves. Plots only show data
//! that is also written to CSV or JSON next to them.

use std::fmt::Write;

use dfc_core::circuit::Layout;
use dfc_core::metrics::Band;
use dfc_core::surrogate::SParams;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const FLOOR_DB: f64 = -60.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Open-loop resonators drawn side by side, one panel per layout. Each
/// loop is a square outline of side `l` and wall `w` with the opening
/// marked at `(gap_x, gap_y)`.
pub fn layout_svg(panels: &[(&str, &Layout)]) -> String {
    let (pw, ph) = (320.0, 320.0);
    let mut out = header(pw * panels.len().max(1) as f64, ph + 24.0);
    for (p, (label, layout)) in panels.iter().enumerate() {
        let ox = p as f64 * pw;
        let _ = writeln!(out, "<text x=\"{}\" y=\"16\" text-anchor=\"middle\">{}</text>", ox + pw / 2.0, escape(label));
        if layout.is_empty() {
            continue;
        }
        let half = |r: &dfc_core::Resonator| 0.5 * r.l + r.w;
        let x0 = layout.resonators.iter().map(|r| r.x - half(r)).fold(f64::INFINITY, f64::min);
        let x1 = layout.resonators.iter().map(|r| r.x + half(r)).fold(f64::NEG_INFINITY, f64::max);
        let y0 = layout.resonators.iter().map(|r| r.y - half(r)).fold(f64::INFINITY, f64::min);
        let y1 = layout.resonators.iter().map(|r| r.y + half(r)).fold(f64::NEG_INFINITY, f64::max);
        let span = (x1 - x0).max(y1 - y0).max(1e-9);
        let k = (pw - 40.0) / span;
        let cx = ox + pw / 2.0 - k * (x0 + x1) / 2.0;
        let cy = 24.0 + ph / 2.0 + k * (y0 + y1) / 2.0;
        let tx = |x: f64| cx + k * x;
        let ty = |y: f64| cy - k * y;
        for (i, r) in layout.resonators.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let _ = writeln!(
                out,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{:.3}\"/>",
                tx(r.x - r.l / 2.0),
                ty(r.y + r.l / 2.0),
                k * r.l,
                k * r.l,
                k * r.w
            );
            let g = k * r.gap_w;
            let _ = writeln!(
                out,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{g:.3}\" height=\"{g:.3}\" fill=\"white\"/>",
                tx(r.gap_x) - g / 2.0,
                ty(r.gap_y) - g / 2.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.3}\" y=\"{:.3}\" text-anchor=\"middle\" fill=\"{color}\">R{}</text>",
                tx(r.x),
                ty(r.y) + 4.0,
                i + 1
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// |s21| in dB against frequency, one polyline per series, with target
/// bands shaded and the -6 dB level dashed.
pub fn s21_svg(series: &[(&str, &SParams)], bands: &[Band]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (56.0, 16.0, 16.0, 40.0);
    let mut out = header(w, h);
    let Some((_, first)) = series.first() else {
        out.push_str("</svg>\n");
        return out;
    };
    let (f0, f1) = (first.grid.f_min, first.grid.f_max);
    let tx = |f: f64| left + (f - f0) / (f1 - f0) * (w - left - right);
    let ty = |db: f64| top + (-db.clamp(FLOOR_DB, 0.0) / -FLOOR_DB) * (h - top - bottom);

    for b in bands {
        let (a, z) = (tx(b.lo.max(f0)), tx(b.hi.min(f1)));
        let _ = writeln!(
            out,
            "<rect x=\"{a:.3}\" y=\"{top}\" width=\"{:.3}\" height=\"{}\" fill=\"#ffd54f\" fill-opacity=\"0.35\"/>",
            (z - a).max(0.0),
            h - top - bottom
        );
    }
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - left - right,
        h - top - bottom
    );
    let span = f1 - f0;
    let step = [10.0, 20.0, 25.0, 50.0, 100.0, 200.0].into_iter().find(|s| span / s <= 8.0).unwrap_or(span);
    let mut f = (f0 / step).ceil() * step;
    while f <= f1 + 1e-9 {
        let _ = writeln!(out, "<text x=\"{:.3}\" y=\"{}\" text-anchor=\"middle\">{f}</text>", tx(f), h - bottom + 16.0);
        f += step;
    }
    let mut db = 0.0;
    while db >= FLOOR_DB {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.3}\" text-anchor=\"end\">{db}</text>", left - 6.0, ty(db) + 4.0);
        db -= 10.0;
    }
    let _ = writeln!(out, "<text x=\"{:.3}\" y=\"{}\" text-anchor=\"middle\">GHz</text>", (left + w - right) / 2.0, h - 6.0);
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{y:.3}\" x2=\"{}\" y2=\"{y:.3}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
        w - right,
        y = ty(-6.0)
    );
    for (i, (label, s)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for (k, db) in s.s21_db.iter().enumerate() {
            let _ = write!(pts, "{:.3},{:.3} ", tx(s.grid.freq(k)), ty(*db));
        }
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", pts.trim_end());
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            w - right - 6.0,
            top + 16.0 + 14.0 * i as f64,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfc_core::circuit::{sample_random_layout, ParamBounds, TemplateSpec};
    use dfc_core::surrogate::{AnalyticOracle, Oracle};

    #[test]
    fn layout_has_one_loop_per_resonator() {
        let b = ParamBounds::default();
        let l = sample_random_layout(&TemplateSpec::chain(4), &b, 3).unwrap();
        let svg = layout_svg(&[("before", &l), ("after", &l)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("fill=\"none\" stroke=\"#").count(), 8);
    }

    #[test]
    fn s21_plot_shades_each_band() {
        let b = ParamBounds::default();
        let l = sample_random_layout(&TemplateSpec::chain(4), &b, 3).unwrap();
        let s = AnalyticOracle::default().evaluate(&l);
        let bands = [Band::new(240.0, 250.0), Band::new(300.0, 310.0)];
        let svg = s21_svg(&[("a<b", &s)], &bands);
        assert_eq!(svg.matches("fill-opacity").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
    }
}
