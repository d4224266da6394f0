//! Small SVG chart writer: line charts and histograms with labelled axes.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round step for roughly `n` ticks over `span`.
fn nice_step(span: f64, n: usize) -> f64 {
    if !(span > 0.0) {
        return 1.0;
    }
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.digits$}")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(mut x0: f64, mut x1: f64, mut y0: f64, mut y1: f64) -> Self {
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, xl: &str, yl: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        let (bx, by) = (LEFT, H - BOTTOM);
        let _ = writeln!(
            out,
            r#"<path d="M{bx} {TOP} V{by} H{}" stroke="black" fill="none"/>"#,
            W - RIGHT
        );
        let xs = nice_step(self.x1 - self.x0, 6);
        let mut t = (self.x0 / xs).ceil() * xs;
        while t <= self.x1 + 1e-9 * xs {
            let p = self.px(t);
            let _ = writeln!(
                out,
                r#"<line x1="{p:.1}" y1="{by}" x2="{p:.1}" y2="{}" stroke="black"/><text x="{p:.1}" y="{}" text-anchor="middle">{}</text>"#,
                by + 5.0,
                by + 18.0,
                fmt_tick(t, xs)
            );
            t += xs;
        }
        let ys = nice_step(self.y1 - self.y0, 5);
        let mut t = (self.y0 / ys).ceil() * ys;
        while t <= self.y1 + 1e-9 * ys {
            let p = self.py(t);
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{p:.1}" x2="{}" y2="{p:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                bx,
                W - RIGHT,
                bx - 6.0,
                p + 4.0,
                fmt_tick(t, ys)
            );
            t += ys;
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 12.0,
            esc(xl)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            esc(yl)
        );
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Named polylines sharing one set of axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let (x0, x1) = if x0.is_finite() { (x0, x1) } else { (0.0, 1.0) };
    let (y0, y1) = if y0.is_finite() { (y0, y1) } else { (0.0, 1.0) };
    let pad = (y1 - y0) * 0.05;
    let f = Frame::new(x0, x1, y0 - pad, y1 + pad);
    let mut out = String::new();
    f.axes(&mut out, title, x_label, y_label);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, (x, y)) in pts.iter().filter(|p| p.1.is_finite()).enumerate() {
            let _ = write!(d, "{}{:.1} {:.1} ", if k == 0 { "M" } else { "L" }, f.px(*x), f.py(*y));
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            d.trim_end()
        );
        let ly = TOP + 6.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{2}" y="{3}">{4}</text>"#,
            W - RIGHT - 170.0,
            W - RIGHT - 150.0,
            W - RIGHT - 145.0,
            ly + 4.0,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bar histogram of `values` over `[lo, hi]` with `bins` equal bins, plus
/// free-text notes under the title.
pub fn histogram_chart(
    title: &str,
    x_label: &str,
    values: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
    notes: &[String],
) -> String {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame::new(lo, hi, 0.0, top * 1.1);
    let mut out = String::new();
    f.axes(&mut out, title, x_label, "count");
    for (i, &c) in counts.iter().enumerate() {
        let (xa, xb) = (f.px(lo + i as f64 * width), f.px(lo + (i + 1) as f64 * width));
        let (ya, yb) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            out,
            r##"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4" stroke="white" stroke-width="0.5"/>"##,
            (xb - xa).max(0.0),
            (yb - ya).max(0.0)
        );
    }
    for (i, n) in notes.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            LEFT + 10.0,
            TOP + 14.0 + 15.0 * i as f64,
            esc(n)
        );
    }
    out.push_str("</svg>\n");
    out
}
