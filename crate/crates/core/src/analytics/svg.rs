//! Minimal standalone SVG line charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub series: Vec<(&'a str, Vec<(f64, f64)>)>,
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart<'_> {
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.max(1.0).log10() } else { x };
        let pts = self
            .series
            .iter()
            .flat_map(|(_, p)| p.iter().map(|&(x, y)| (tx(x), y)));
        let (mut x0, mut x1, mut y0, mut y1) =
            (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y1) = (0.0, 1.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| PAD + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 10.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(self.y_label)
        );
        let fmt_x = |v: f64| {
            if self.log_x {
                format!("1e{v:.0}")
            } else {
                format!("{v:.3}")
            }
        };
        let _ = writeln!(
            s,
            r#"<text x="{PAD}" y="{}" text-anchor="start">{}</text>"#,
            H - PAD + 16.0,
            fmt_x(x0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            W - PAD,
            H - PAD + 16.0,
            fmt_x(x1)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#,
            PAD - 4.0,
            H - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
            PAD - 4.0,
            PAD + 4.0
        );
        for (k, (name, points)) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let d: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if !d.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    d.join(" ")
                );
            }
            let ly = PAD + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
                W - PAD,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
