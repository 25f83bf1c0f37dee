//! Static SVG charts. Output depends only on the data: fixed canvas, fixed
//! font and sizes, coordinates rounded to two decimals.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 64.0;
const FONT: &str = "font-family=\"DejaVu Sans Mono, monospace\" font-size=\"11\"";
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, t: f64) -> String {
        let v = self.lo + t * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    }
}

fn usable(p: &(f64, f64), log_y: bool) -> bool {
    p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    out: String,
    x: Axis,
    y: Axis,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, x: Axis, y: Axis) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" {FONT}>{}</text>",
            WIDTH / 2.0,
            escape(title)
        );
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(
            out,
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let px = LEFT + t * pw;
            let py = TOP + (1.0 - t) * ph;
            let _ = writeln!(
                out,
                "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>{}</text>",
                TOP + ph + 16.0,
                x.label(t)
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" {FONT}>{}</text>",
                LEFT - 4.0,
                py + 4.0,
                y.label(t)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>{}</text>",
            LEFT + pw / 2.0,
            TOP + ph + 34.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\" {FONT}>{}</text>",
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(y_label)
        );
        Canvas { out, x, y }
    }

    fn px(&self, p: (f64, f64)) -> (f64, f64) {
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        (LEFT + self.x.frac(p.0) * pw, TOP + (1.0 - self.y.frac(p.1)) * ph)
    }

    fn legend(&mut self, i: usize, name: &str) {
        let y = TOP + 12.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT + 10.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            self.out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{c}\"/>",
            y - 9.0
        );
        let _ = writeln!(
            self.out,
            "<text x=\"{:.2}\" y=\"{y:.2}\" {FONT}>{}</text>",
            x + 14.0,
            escape(name)
        );
    }

    fn caption(&mut self, text: &str) {
        let _ = writeln!(
            self.out,
            "<text x=\"{LEFT}\" y=\"{:.2}\" {FONT}>{}</text>",
            HEIGHT - 8.0,
            escape(text)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// One polyline per series; non-finite points (and nonpositive ones on a log
/// axis) break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter().filter(|p| usable(p, log_y)));
    let x = Axis::fit(pts().map(|p| p.0), false);
    let y = Axis::fit(pts().map(|p| p.1), log_y);
    let mut c = Canvas::new(title, x_label, y_label, x, y);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        for p in &s.points {
            if usable(p, log_y) {
                let (a, b) = c.px(*p);
                segment.push(format!("{a:.2},{b:.2}"));
            } else if !segment.is_empty() {
                segments.push(std::mem::take(&mut segment));
            }
        }
        if !segment.is_empty() {
            segments.push(segment);
        }
        for seg in segments {
            let _ = writeln!(
                c.out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                seg.join(" ")
            );
        }
        c.legend(i, &s.name);
    }
    c.finish()
}

/// Points per series with a free-text caption under the plot.
pub fn scatter_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], caption: &str, log: bool) -> String {
    let pts = || {
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| usable(p, log) && (!log || p.0 > 0.0)))
    };
    let x = Axis::fit(pts().map(|p| p.0), log);
    let y = Axis::fit(pts().map(|p| p.1), log);
    let mut c = Canvas::new(title, x_label, y_label, x, y);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for p in s.points.iter().filter(|p| usable(p, log) && (!log || p.0 > 0.0)) {
            let (a, b) = c.px(*p);
            let _ = writeln!(c.out, "<circle cx=\"{a:.2}\" cy=\"{b:.2}\" r=\"2\" fill=\"{color}\"/>");
        }
        c.legend(i, &s.name);
    }
    c.caption(caption);
    c.finish()
}

/// Sample Pearson correlation over finite pairs; `None` when undefined.
pub fn pearson(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<_> = points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        sxy += (p.0 - mx) * (p.1 - my);
        sxx += (p.0 - mx) * (p.0 - mx);
        syy += (p.1 - my) * (p.1 - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
