//! Long-format CSV and minimal SVG line plots.

use std::fmt::Write;

/// One named curve with optional quantile band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

impl Series {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { name: name.into(), x, y, band: None }
    }

    pub fn with_band(mut self, q25: Vec<f64>, q75: Vec<f64>) -> Self {
        self.band = Some((q25, q75));
        self
    }

    /// `1, 2, ..., y.len()` on the x axis.
    pub fn indexed(name: impl Into<String>, y: Vec<f64>) -> Self {
        let x = (1..=y.len()).map(|i| i as f64).collect();
        Self::new(name, x, y)
    }
}

/// `x,series,y,q25,q75`; without a band both quantiles equal `y`.
pub fn long_csv(series: &[Series]) -> String {
    let mut s = String::from("x,series,y,q25,q75\n");
    for c in series {
        for i in 0..c.y.len() {
            let (lo, hi) = match &c.band {
                Some((lo, hi)) => (lo[i], hi[i]),
                None => (c.y[i], c.y[i]),
            };
            let _ = writeln!(s, "{},{},{},{},{}", c.x[i], c.name, c.y[i], lo, hi);
        }
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, pad) = (640.0, 420.0, 56.0);
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter()).filter(finite);
    let ys = series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(a, b)| a.iter().chain(b.iter()));
        s.y.iter().chain(band)
    });
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys.filter(finite));
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", pad, h - pad + 16.0),
        (x1, "end", w - pad, h - pad + 16.0),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    for (v, y) in [(y0, h - pad), (y1, pad)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, pad - 4.0, tick(v));
    }
    for (k, c) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some((lo, hi)) = &c.band {
            let mut pts: Vec<String> = c.x.iter().zip(hi).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            pts.extend(c.x.iter().zip(lo).rev().map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = c
            .x
            .iter()
            .zip(&c.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = pad + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            w - pad,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
