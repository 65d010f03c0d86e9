//! Minimal static SVG line and bar charts.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("chart has no data")]
    Empty,
    #[error("non-finite value in series '{0}'")]
    NonFinite(String),
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points }
    }

    /// Points `(i, y_i)`.
    pub fn indexed(name: impl Into<String>, ys: &[f64]) -> Self {
        Series::new(name, ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect())
    }
}

/// Closed data range `[lo, hi]`, widened when degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Option<Range> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return None;
        }
        if lo == hi {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
            return Some(Range { lo: lo - pad, hi: hi + pad });
        }
        Some(Range { lo, hi })
    }

    fn map(&self, v: f64, a: f64, b: f64) -> f64 {
        a + (v - self.lo) / (self.hi - self.lo) * (b - a)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>
"#,
        (LEFT + W - RIGHT) / 2.0,
        esc(title),
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        esc(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(y_label),
        W - LEFT - RIGHT,
        H - TOP - BOTTOM,
    );
}

fn y_ticks(out: &mut String, y: &Range) {
    for k in 0..=4 {
        let v = y.lo + (y.hi - y.lo) * k as f64 / 4.0;
        let py = y.map(v, H - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            py + 4.0,
            tick_label(v)
        );
    }
}

/// Line chart; the axes span the data's min and max exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LineChart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LineChart { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new() }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn ranges(&self) -> Result<(Range, Range), ChartError> {
        for s in &self.series {
            if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(ChartError::NonFinite(s.name.clone()));
            }
        }
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let x = Range::of(pts().map(|p| p.0)).ok_or(ChartError::Empty)?;
        let y = Range::of(pts().map(|p| p.1)).ok_or(ChartError::Empty)?;
        Ok((x, y))
    }

    pub fn render(&self) -> Result<String, ChartError> {
        let (x, y) = self.ranges()?;
        let mut out = String::new();
        frame(&mut out, &self.title, &self.x_label, &self.y_label);
        y_ticks(&mut out, &y);
        for k in 0..=4 {
            let v = x.lo + (x.hi - x.lo) * k as f64 / 4.0;
            let px = x.map(v, LEFT, W - RIGHT);
            let _ = writeln!(
                out,
                r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                H - BOTTOM,
                H - BOTTOM + 4.0,
                H - BOTTOM + 18.0,
                tick_label(v)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(px, py)| format!("{:.2},{:.2}", x.map(px, LEFT, W - RIGHT), y.map(py, H - BOTTOM, TOP)))
                .collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            let ly = TOP + 16.0 + 18.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0,
                W - RIGHT + 35.0,
                ly + 4.0,
                esc(&s.name)
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

/// Vertical bar chart with the value axis starting at zero when all values
/// are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub bars: Vec<(String, f64)>,
}

impl BarChart {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>, bars: Vec<(String, f64)>) -> Self {
        BarChart { title: title.into(), y_label: y_label.into(), bars }
    }

    pub fn range(&self) -> Result<Range, ChartError> {
        if let Some((name, _)) = self.bars.iter().find(|b| !b.1.is_finite()) {
            return Err(ChartError::NonFinite(name.clone()));
        }
        Range::of(self.bars.iter().map(|b| b.1).chain(std::iter::once(0.0)))
            .filter(|_| !self.bars.is_empty())
            .ok_or(ChartError::Empty)
    }

    pub fn render(&self) -> Result<String, ChartError> {
        let y = self.range()?;
        let mut out = String::new();
        frame(&mut out, &self.title, "", &self.y_label);
        y_ticks(&mut out, &y);
        let slot = (W - LEFT - RIGHT) / self.bars.len() as f64;
        let zero = y.map(0.0, H - BOTTOM, TOP);
        for (i, (name, v)) in self.bars.iter().enumerate() {
            let top = y.map(*v, H - BOTTOM, TOP);
            let x0 = LEFT + slot * (i as f64 + 0.15);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/><text x="{:.2}" y="{}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                top.min(zero),
                slot * 0.7,
                (zero - top).abs(),
                PALETTE[i % PALETTE.len()],
                x0 + slot * 0.35,
                H - BOTTOM + 18.0,
                esc(name),
                x0 + slot * 0.35,
                top.min(zero) - 4.0,
                tick_label(*v)
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_error() {
        assert_eq!(LineChart::new("t", "x", "y").render(), Err(ChartError::Empty));
        let c = LineChart::new("t", "x", "y").with(Series::new("a", vec![]));
        assert_eq!(c.render(), Err(ChartError::Empty));
        assert_eq!(BarChart::new("t", "y", vec![]).render(), Err(ChartError::Empty));
    }

    #[test]
    fn axis_covers_data() {
        let c = LineChart::new("t", "x", "y")
            .with(Series::new("a", vec![(0.0, -2.0), (5.0, 3.5)]))
            .with(Series::indexed("b", &[1.0, 7.25, 0.5]));
        let (x, y) = c.ranges().unwrap();
        assert_eq!((x.lo, x.hi, y.lo, y.hi), (0.0, 5.0, -2.0, 7.25));
        let svg = c.render().unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn render_is_idempotent() {
        let c = BarChart::new("q", "ssim", vec![("low".into(), 0.9), ("high".into(), 1.0)]);
        assert_eq!(c.render().unwrap(), c.render().unwrap());
        assert_eq!(c.range().unwrap().lo, 0.0);
    }

    #[test]
    fn escapes_and_rejects_nan() {
        let c = LineChart::new("a<b", "x", "y").with(Series::indexed("s&t", &[1.0, 2.0]));
        let svg = c.render().unwrap();
        assert!(svg.contains("a&lt;b") && svg.contains("s&amp;t"));
        let bad = LineChart::new("t", "x", "y").with(Series::indexed("n", &[f64::NAN]));
        assert_eq!(bad.render(), Err(ChartError::NonFinite("n".into())));
    }
}
