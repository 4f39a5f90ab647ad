//! Minimal SVG charts: box plots and line plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Frame {
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { y0: 0.0, y1: 1.0 };
        }
        if lo >= 0.0 && hi <= 1.0 {
            return Self { y0: 0.0, y1: 1.0 };
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        Self {
            y0: lo - pad,
            y1: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.y0) / (self.y1 - self.y0))
    }
}

fn header(s: &mut String, title: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for i in 0..=5 {
        let v = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 5.0;
        let y = frame.y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
}

/// One box per group: quartiles, median, whiskers at 1.5 IQR, outlier dots.
pub fn boxplot_svg(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let frame = Frame::new(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = String::new();
    header(&mut s, title, y_label, &frame);
    let n = groups.len().max(1) as f64;
    let slot = (W - LEFT - RIGHT) / n;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="box" data-label="{}">"#, escape(name));
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if !v.is_empty() {
            v.sort_by(f64::total_cmp);
            let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            let iqr = q3 - q1;
            let lo = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
            let hi = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
            let bw = (slot * 0.4).min(60.0);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                frame.y(lo),
                frame.y(hi)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{color}" fill-opacity="0.5" stroke="black"/>"#,
                cx - bw / 2.0,
                frame.y(q3),
                (frame.y(q1) - frame.y(q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
                cx - bw / 2.0,
                cx + bw / 2.0,
                frame.y(med),
                frame.y(med)
            );
            for &x in v.iter().filter(|&&x| x < lo || x > hi) {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{cx:.1}" cy="{:.1}" r="2.5" fill="none" stroke="black"/>"#,
                    frame.y(x)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text></g>"#,
            H - BOTTOM + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Polylines over a shared linear x axis, with a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::new(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in series.iter().flat_map(|s| &s.points) {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 = if x0.is_finite() { x0 - 1.0 } else { 0.0 };
        x1 = x0 + 2.0;
    }
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * (x - x0) / (x1 - x0);
    let mut s = String::new();
    header(&mut s, title, y_label, &frame);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(x),
            H - BOTTOM + 16.0,
            if (x1 - x0) >= 4.0 { format!("{x:.0}") } else { format!("{x:.2}") }
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), frame.y(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<g class="series" data-label="{}"><polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            escape(&ser.name),
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text></g>"#,
            W - RIGHT - 140.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
