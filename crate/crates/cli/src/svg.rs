//! Minimal SVG charts. They are previews; CSV and JSON carry the data.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = write!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = write!(
            body,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        Canvas { body }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = write!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let dash = if dash { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = write!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"{dash}/>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = write!(
            self.body,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}"/>"#
        );
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        self.line(LEFT, H - BOTTOM, W - RIGHT, H - BOTTOM, "black", false);
        self.line(LEFT, TOP, LEFT, H - BOTTOM, "black", false);
        self.text((LEFT + W - RIGHT) / 2.0, H - 15.0, "middle", x_label);
        let _ = write!(
            self.body,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            escape(y_label)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Scale { lo, hi, a, b }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn ticks(c: &mut Canvas, xs: &Scale, ys: &Scale) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xs.lo + f * (xs.hi - xs.lo);
        let yv = ys.lo + f * (ys.hi - ys.lo);
        let (x, y) = (xs.map(xv), ys.map(yv));
        c.line(x, H - BOTTOM, x, H - BOTTOM + 5.0, "black", false);
        c.text(x, H - BOTTOM + 18.0, "middle", &format!("{xv:.3}"));
        c.line(LEFT - 5.0, y, LEFT, y, "black", false);
        c.text(LEFT - 8.0, y + 4.0, "end", &format!("{yv:.3}"));
    }
}

/// A named polyline.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with optional dashed reference levels.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], levels: &[(&str, f64)]) -> String {
    let mut c = Canvas::new(title);
    c.axes(x_label, y_label);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(levels.iter().map(|l| l.1))
        .collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if xs.is_empty() { (0.0, 1.0) } else { (min(&xs), max(&xs)) };
    let y_hi = if ys.is_empty() { 1.0 } else { max(&ys) * 1.1 };
    let xs = Scale::new(x_lo, x_hi, LEFT, W - RIGHT);
    let ys = Scale::new(0.0, y_hi.max(1e-12), H - BOTTOM, TOP);
    ticks(&mut c, &xs, &ys);
    for (i, (name, y)) in levels.iter().enumerate() {
        let py = ys.map(*y);
        c.line(LEFT, py, W - RIGHT, py, "#777", true);
        c.text(W - RIGHT - 4.0, py - 4.0 - 12.0 * (i % 2) as f64, "end", name);
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", xs.map(x), ys.map(y)))
            .collect();
        let _ = write!(
            c.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        c.rect(LEFT + 10.0, TOP + 6.0 + 16.0 * i as f64, 12.0, 3.0, color);
        c.text(LEFT + 28.0, TOP + 11.0 + 16.0 * i as f64, "start", s.name);
    }
    c.finish()
}

/// Vertical bars with their values printed on top.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut c = Canvas::new(title);
    c.axes("", y_label);
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(1e-12) * 1.15;
    let ys = Scale::new(0.0, hi, H - BOTTOM, TOP);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * (i as f64 + 0.2);
        let top = ys.map(*v);
        c.rect(x, top, slot * 0.6, H - BOTTOM - top, PALETTE[i % PALETTE.len()]);
        c.text(x + slot * 0.3, top - 6.0, "middle", &format!("{v:.2}"));
        c.text(x + slot * 0.3, H - BOTTOM + 18.0, "middle", label);
    }
    c.finish()
}

/// Grid of values in [0, 1], darker for larger entries.
pub fn heatmap(title: &str, rows: &[String], columns: &[String], values: &[Vec<f64>]) -> String {
    let mut c = Canvas::new(title);
    let (nr, nc) = (rows.len().max(1) as f64, columns.len().max(1) as f64);
    let cell = ((W - LEFT - RIGHT) / nc).min((H - TOP - BOTTOM) / nr);
    for (i, row) in values.iter().enumerate() {
        let y = TOP + cell * i as f64;
        c.text(LEFT - 8.0, y + cell / 2.0 + 4.0, "end", &rows[i]);
        for (j, &v) in row.iter().enumerate() {
            let x = LEFT + cell * j as f64;
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            c.rect(x, y, cell - 1.0, cell - 1.0, &format!("rgb({shade},{shade},255)"));
            c.text(x + cell / 2.0, y + cell / 2.0 + 4.0, "middle", &format!("{v:.3}"));
        }
    }
    for (j, col) in columns.iter().enumerate() {
        c.text(LEFT + cell * (j as f64 + 0.5), TOP + cell * nr + 16.0, "middle", col);
    }
    c.finish()
}

/// Gaussian pulse trains, one panel per timing configuration.
pub fn pulse_trains(title: &str, panels: &[(String, Vec<(String, f64)>)], pulse_width_ns: f64) -> String {
    let mut c = Canvas::new(title);
    c.axes("time (ns)", "");
    let times: Vec<f64> = panels.iter().flat_map(|p| p.1.iter().map(|t| t.1)).collect();
    let t_hi = times.iter().copied().fold(0.0, f64::max);
    let pad = 4.0 * pulse_width_ns.max(0.05) + 0.1 * t_hi.max(1.0);
    let xs = Scale::new(-pad, t_hi + pad, LEFT, W - RIGHT);
    let panel_h = (H - TOP - BOTTOM) / panels.len().max(1) as f64;
    for (k, (name, pulses)) in panels.iter().enumerate() {
        let base = TOP + panel_h * (k as f64 + 1.0) - 8.0;
        c.text(LEFT + 8.0, TOP + panel_h * k as f64 + 16.0, "start", name);
        c.line(LEFT, base, W - RIGHT, base, "#bbb", false);
        for (i, (label, t)) in pulses.iter().enumerate() {
            let sigma = pulse_width_ns / 2.355;
            let pts: Vec<String> = (0..=80)
                .map(|s| {
                    let tt = t - 4.0 * sigma + 8.0 * sigma * s as f64 / 80.0;
                    let amp = (-(tt - t).powi(2) / (2.0 * sigma * sigma)).exp();
                    format!("{:.1},{:.1}", xs.map(tt), base - amp * (panel_h - 30.0))
                })
                .collect();
            let color = PALETTE[i % PALETTE.len()];
            let _ = write!(
                c.body,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            c.text(xs.map(*t), base - (panel_h - 30.0) - 4.0, "middle", &format!("{label} @ {t:.2} ns"));
        }
    }
    for i in 0..=4 {
        let v = xs.lo + i as f64 / 4.0 * (xs.hi - xs.lo);
        c.text(xs.map(v), H - BOTTOM + 18.0, "middle", &format!("{v:.1}"));
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg_documents() {
        let docs = [
            line_chart(
                "q",
                "t",
                "y",
                &[Series { name: "Z", points: vec![(0.0, 0.1), (1.0, 0.2)] }],
                &[("limit", 0.11)],
            ),
            bar_chart("r", "kbit/s", &[("2D".into(), 1.0), ("4D".into(), 2.0)]),
            heatmap("m", &["a".into()], &["b".into()], &[vec![0.5]]),
            pulse_trains("p", &[("fiber".into(), vec![("|6|".into(), 0.0), ("|7|".into(), 15.0)])], 0.15),
        ];
        for d in docs {
            assert!(d.starts_with("<svg") && d.trim_end().ends_with("</svg>"));
            assert!(!d.contains("NaN"));
        }
    }

    #[test]
    fn labels_are_escaped() {
        assert!(bar_chart("a<b", "", &[]).contains("a&lt;b"));
    }
}
