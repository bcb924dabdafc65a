//! Minimal static SVG line plots for evaluation output.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

/// Shaded region between `lower` and `upper`, sharing x values.
#[derive(Clone, Debug)]
pub struct Band {
    pub name: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    /// Same scale on both axes, for x/y trajectory overlays.
    pub equal_aspect: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    pub fn line(mut self, name: &str, points: Vec<[f64; 2]>) -> Self {
        self.series.push(Series { name: name.into(), points });
        self
    }

    pub fn band(mut self, name: &str, x: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.bands.push(Band {
            name: name.into(),
            x,
            lower,
            upper,
        });
        self
    }

    fn bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        let mut take = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                b[0] = b[0].min(x);
                b[1] = b[1].max(x);
                b[2] = b[2].min(y);
                b[3] = b[3].max(y);
            }
        };
        for s in &self.series {
            for p in &s.points {
                take(p[0], p[1]);
            }
        }
        for band in &self.bands {
            for (k, &x) in band.x.iter().enumerate() {
                take(x, band.lower[k]);
                take(x, band.upper[k]);
            }
        }
        if !b[0].is_finite() {
            return [0.0, 1.0, 0.0, 1.0];
        }
        for i in [0, 2] {
            if b[i + 1] - b[i] < 1e-9 {
                b[i] -= 0.5;
                b[i + 1] += 0.5;
            }
        }
        if self.equal_aspect {
            let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
            let scale = ((b[1] - b[0]) / pw).max((b[3] - b[2]) / ph);
            let (cx, cy) = ((b[0] + b[1]) / 2.0, (b[2] + b[3]) / 2.0);
            b = [cx - scale * pw / 2.0, cx + scale * pw / 2.0, cy - scale * ph / 2.0, cy + scale * ph / 2.0];
        }
        b
    }

    pub fn to_svg(&self) -> String {
        let b = self.bounds();
        let sx = |x: f64| MARGIN + (x - b[0]) / (b[1] - b[0]) * (W - 2.0 * MARGIN);
        let sy = |y: f64| H - MARGIN - (y - b[2]) / (b[3] - b[2]) * (H - 2.0 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (lo, hi, v) in [(b[0], b[1], true), (b[2], b[3], false)] {
            for k in 0..=4 {
                let val = lo + (hi - lo) * k as f64 / 4.0;
                let text = format!("{val:.3}");
                if v {
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{text}</text>"#, sx(val), H - MARGIN + 14.0);
                } else {
                    let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{text}</text>"#, MARGIN - 4.0, sy(val) + 3.0);
                }
            }
        }
        for (i, band) in self.bands.iter().enumerate() {
            let mut d = String::new();
            for (k, &x) in band.x.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(x), sy(band.upper[k]));
            }
            for (k, &x) in band.x.iter().enumerate().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(x), sy(band.lower[k]));
            }
            let color = PALETTE[(i + 2) % PALETTE.len()];
            let _ = writeln!(s, r#"<path d="{d}Z" fill="{color}" fill-opacity="0.2" stroke="none"><title>{}</title></path>"#, esc(&band.name));
        }
        for (i, series) in self.series.iter().enumerate() {
            let mut d = String::new();
            for (k, p) in series.points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(p[0]), sy(p[1]));
            }
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            let y = MARGIN + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" font-size="11" fill="{color}">{}</text>"#,
                MARGIN + 8.0,
                esc(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Subsamples a sequence to at most `max` points, keeping the last.
pub fn thin<T: Copy>(v: &[T], max: usize) -> Vec<T> {
    if v.len() <= max || max < 2 {
        return v.to_vec();
    }
    let step = v.len().div_ceil(max - 1);
    let mut out: Vec<T> = v.iter().step_by(step).copied().collect();
    if (v.len() - 1) % step != 0 {
        out.push(v[v.len() - 1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_escaped() {
        let svg = Plot::new("a<b", "t", "x")
            .line("gt & dm", vec![[0.0, 0.0], [1.0, 2.0]])
            .band("2s", vec![0.0, 1.0], vec![-1.0, -1.0], vec![1.0, 1.0])
            .to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b") && svg.contains("gt &amp; dm"));
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let v: Vec<usize> = (0..1001).collect();
        let t = thin(&v, 100);
        assert!(t.len() <= 101);
        assert_eq!((t[0], *t.last().unwrap()), (0, 1000));
    }
}
