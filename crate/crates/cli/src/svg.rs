//! Minimal standalone SVG line charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: (f64, f64, f64, f64) = (50.0, 20.0, 40.0, 60.0); // top, right, bottom, left
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Category labels at x = 0, 1, ...
    pub x_ticks: Option<Vec<String>>,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn render(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = match &self.x_ticks {
            Some(t) => (-0.5, t.len().max(1) as f64 - 0.5),
            None => range(pts().map(|p| p.0)),
        };
        let (y0, y1) = range(pts().map(|p| p.1));
        let pw = W - M.1 - M.3;
        let ph = H - M.0 - M.2;
        let sx = |x: f64| M.3 + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| M.0 + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#,
            M.3, M.0
        );
        for k in 0..=4 {
            let y = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, M.3 - 5.0, sy(y) + 4.0, y);
            let _ = writeln!(s, r##"<line x1="{}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, M.3, W - M.1, sy(y), sy(y));
        }
        match &self.x_ticks {
            Some(ticks) => {
                for (i, t) in ticks.iter().enumerate() {
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(i as f64), H - M.2 + 16.0, esc(t));
                }
            }
            None => {
                for k in 0..=4 {
                    let x = x0 + (x1 - x0) * k as f64 / 4.0;
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#, sx(x), H - M.2 + 16.0, x);
                }
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, M.3 + pw / 2.0, H - 5.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            M.0 + ph / 2.0,
            M.0 + ph / 2.0,
            esc(&self.y_label)
        );
        for (k, ser) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = ser
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            if ser.points.len() <= 32 {
                for p in path {
                    let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
                }
            }
            let ly = M.0 + 14.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#, W - M.1 - 8.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }
}
