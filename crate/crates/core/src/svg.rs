//! Minimal deterministic SVG plotting helpers.

use std::fmt::Write as _;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
pub const CLOSE: &str = "</svg>\n";

/// Padded `(min, max)` of finite values; `(0, 1)` when there are none.
pub fn range(v: &[f64]) -> (f64, f64) {
    let fin: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if fin.is_empty() {
        return (0.0, 1.0);
    }
    let lo = fin.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data coordinates onto the plotting area.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub xr: (f64, f64),
    pub yr: (f64, f64),
    pub width: f64,
}

impl Frame {
    pub fn new(xr: (f64, f64), yr: (f64, f64)) -> Self {
        Frame { xr, yr, width: WIDTH }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    pub fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.xr.0) / (self.xr.1 - self.xr.0) * (self.width - LEFT - RIGHT)
    }

    pub fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.yr.0) / (self.yr.1 - self.yr.0) * (HEIGHT - TOP - BOTTOM)
    }

    pub fn top(&self) -> f64 {
        TOP
    }

    pub fn bottom(&self) -> f64 {
        HEIGHT - BOTTOM
    }

    /// Document header, title, axes and five y ticks. Numeric x ticks are
    /// drawn unless `x_label` is empty.
    pub fn open(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = HEIGHT
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            self.width / 2.0,
            escape(title)
        );
        let (x0, x1, y0, y1) = (LEFT, self.width - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            s,
            r#"<path d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" fill="none" stroke="black"/>"#
        );
        for i in 0..5 {
            let v = self.yr.0 + (self.yr.1 - self.yr.0) * i as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                y + 4.0,
                tick(v)
            );
        }
        if !x_label.is_empty() {
            for i in 0..5 {
                let v = self.xr.0 + (self.xr.1 - self.xr.0) * i as f64 / 4.0;
                let x = self.x(v);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    y1 + 5.0,
                    y1 + 18.0,
                    tick(v)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                (x0 + x1) / 2.0,
                HEIGHT - 12.0,
                escape(x_label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        s
    }

    pub fn hline(&self, v: f64, color: &str) -> String {
        if v < self.yr.0 || v > self.yr.1 {
            return String::new();
        }
        format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-dasharray=\"2,3\"/>\n",
            LEFT,
            self.width - RIGHT,
            y = self.y(v)
        )
    }

    /// Small text in the top-right corner.
    pub fn note(&self, text: &str) -> String {
        format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\" fill=\"#555555\">{}</text>\n",
            self.width - RIGHT,
            TOP - 4.0,
            escape(text)
        )
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_pads_and_handles_degenerate_input() {
        assert_eq!(range(&[]), (0.0, 1.0));
        assert_eq!(range(&[2.0, 2.0]), (1.0, 3.0));
        let (lo, hi) = range(&[0.0, 10.0, f64::NAN]);
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 10.5).abs() < 1e-12);
    }

    #[test]
    fn mapping_is_affine_and_y_points_down() {
        let f = Frame::new((0.0, 1.0), (0.0, 1.0));
        assert_eq!(f.x(0.0), LEFT);
        assert_eq!(f.x(1.0), WIDTH - RIGHT);
        assert!(f.y(1.0) < f.y(0.0));
        assert_eq!(f.y(0.0), f.bottom());
        assert_eq!(f.y(1.0), f.top());
    }

    #[test]
    fn text_is_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
        assert_eq!(tick(-0.0001), "0");
        assert_eq!(tick(1.5), "1.5");
    }
}
