//! Minimal hand-written SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps data coordinates into the plot area; degenerate ranges are padded.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = range(&mut xs.clone());
        let (y0, y1) = range(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##, r - l, b - t);
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, WIDTH / 2.0, HEIGHT - 10.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
        for (v, anchor) in [(self.x0, "start"), (self.x1, "end")] {
            let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#, self.px(v), b + 14.0);
        }
        for v in [self.y0, self.y1] {
            let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{v:.3}</text>"#, l - 4.0, self.py(v) + 3.0);
        }
    }
}

fn open() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#) + "\n"
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// One polyline with markers per series, plus a legend.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter().copied());
    let frame = Frame::fit(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut out = open();
    frame.axes(&mut out, title, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let c = color(i);
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, pts.join(" "));
        }
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, frame.px(x), frame.py(y));
        }
        let ly = MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, WIDTH - MARGIN - 140.0, ly - 9.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" font-size="11">{}</text>"#, WIDTH - MARGIN - 126.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

/// Points colored by class; optional paths drawn underneath.
pub fn scatter(title: &str, points: &[(f64, f64, usize)], paths: &[Vec<(f64, f64)>]) -> String {
    let xs = points.iter().map(|p| p.0).chain(paths.iter().flatten().map(|p| p.0));
    let ys = points.iter().map(|p| p.1).chain(paths.iter().flatten().map(|p| p.1));
    let frame = Frame::fit(xs, ys);
    let mut out = open();
    frame.axes(&mut out, title, "x1", "x2");
    for path in paths {
        let pts: Vec<String> = path.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#888" stroke-width="1"/>"##, pts.join(" "));
    }
    for &(x, y, class) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            frame.px(x),
            frame.py(y),
            color(class)
        );
    }
    out.push_str("</svg>\n");
    out
}
