//! Minimal hand-written SVG plots. Output is a pure function of the input.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, a, b }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

/// Five evenly spaced tick values.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

pub struct LinePlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    /// Vertical reference lines `(x, label)`.
    pub vlines: Vec<(f64, String)>,
    /// Horizontal reference lines `(y, label)`.
    pub hlines: Vec<(f64, String)>,
    pub y_range: Option<(f64, f64)>,
    pub note: Option<String>,
}

impl LinePlot<'_> {
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.vlines.iter().map(|v| v.0));
        let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (ylo, yhi) = self.y_range.unwrap_or_else(|| {
            let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(self.hlines.iter().map(|h| h.0));
            let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
            (lo.min(0.0), hi)
        });
        let (xlo, xhi) = if xlo.is_finite() { (xlo, xhi) } else { (0.0, 1.0) };
        let (ylo, yhi) = if ylo.is_finite() && yhi.is_finite() { (ylo, yhi) } else { (0.0, 1.0) };
        let sx = Scale::new(xlo, xhi, LEFT, W - RIGHT);
        let sy = Scale::new(ylo, yhi, H - BOTTOM, TOP);

        let mut s = header(self.title);
        axes(&mut s, sx, sy, self.x_label, self.y_label);
        for (x, label) in &self.vlines {
            let px = sx.map(*x);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.2}" font-size="11" fill="#d62728">{}</text>"##,
                TOP,
                H - BOTTOM,
                px + 3.0,
                TOP + 12.0,
                esc(label)
            );
        }
        for (y, label) in &self.hlines {
            let py = sy.map(*y);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#d62728" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.2}" font-size="11" fill="#d62728">{}</text>"##,
                W - RIGHT,
                LEFT + 4.0,
                py - 4.0,
                esc(label)
            );
        }
        for (i, ser) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx.map(x), sy.map(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, pts.join(" "));
            for &(x, y) in ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx.map(x), sy.map(y));
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                W - RIGHT + 12.0,
                ly - 9.0,
                W - RIGHT + 26.0,
                ly,
                esc(ser.name)
            );
        }
        if let Some(note) = &self.note {
            let _ = writeln!(s, r##"<text x="{LEFT:.2}" y="{:.2}" font-size="11" fill="#555">{}</text>"##, H - 6.0, esc(note));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="22" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, esc(title));
    s
}

fn axes(s: &mut String, sx: Scale, sy: Scale, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (sx.a, sx.b, sy.a, sy.b);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for t in ticks(sx.lo, sx.hi) {
        let px = sx.map(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 17.0,
            fmt_tick(t)
        );
    }
    for t in ticks(sy.lo, sy.hi) {
        let py = sy.map(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 7.0,
            py + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

/// Rows are drawn bottom-up; cell shade is linear in value from 0 to the
/// row-wise maximum over the whole grid.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, x_centers: &[f64], rows: &[(String, Vec<f64>)], note: Option<&str>) -> String {
    let mut s = header(title);
    let vmax = rows.iter().flat_map(|r| r.1.iter().copied()).fold(0.0f64, f64::max);
    let nx = x_centers.len().max(1);
    let ny = rows.len().max(1);
    let cw = (W - LEFT - RIGHT) / nx as f64;
    let ch = (H - TOP - BOTTOM) / ny as f64;
    for (ri, (label, vals)) in rows.iter().enumerate() {
        let y = H - BOTTOM - ch * (ri + 1) as f64;
        for (ci, v) in vals.iter().enumerate() {
            let t = if vmax > 0.0 { v / vmax } else { 0.0 };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{ch:.2}" fill="#ff{shade:02x}{shade:02x}"/>"##,
                LEFT + cw * ci as f64,
                cw + 0.05
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + ch / 2.0 + 4.0,
            esc(label)
        );
    }
    if let (Some(first), Some(last)) = (x_centers.first(), x_centers.last()) {
        for t in ticks(*first, *last) {
            let px = LEFT + (t - first) / (last - first).max(1e-12) * (cw * (nx - 1) as f64) + cw / 2.0;
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 15.0,
                fmt_tick(t)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 20.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    if let Some(note) = note {
        let _ = writeln!(s, r##"<text x="{LEFT:.2}" y="{:.2}" font-size="11" fill="#555">{}</text>"##, H - 4.0, esc(note));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic_and_escaped() {
        let pts = [(20.0, 0.1), (40.0, 0.5), (60.0, 0.3)];
        let p = LinePlot {
            title: "a < b",
            x_label: "x",
            y_label: "y",
            series: vec![Series { name: "s&t", points: &pts }],
            vlines: vec![(40.0, "opt".into())],
            hlines: vec![],
            y_range: Some((0.0, 1.0)),
            note: None,
        };
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b") && a.contains("s&amp;t"));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn heatmap_has_one_cell_per_value() {
        let rows = vec![("0".to_string(), vec![0.0, 1.0]), ("1".to_string(), vec![0.5, 0.5])];
        let s = heatmap("t", "x", "y", &[10.0, 30.0], &rows, None);
        assert_eq!(s.matches("<rect x=").count(), 4);
        assert!(s.contains("#ffffff") && s.contains("#ff0000"));
    }
}
