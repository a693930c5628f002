//! Minimal SVG line and bar charts. Output depends only on the input data,
//! with every coordinate printed at fixed precision.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 78.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 62.0;

pub const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

#[derive(Debug, Clone)]
pub struct Axis {
    pub label: String,
    pub min: f64,
    pub max: f64,
}

impl Axis {
    /// Axis spanning the data, widened to whole tick steps.
    pub fn fit(label: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { 0.1 * lo.abs() } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        let step = tick_step(lo, hi);
        Self {
            label: label.into(),
            min: (lo / step).floor() * step,
            max: (hi / step).ceil() * step,
        }
    }

    pub fn from_zero(label: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        Self::fit(label, values.into_iter().chain([0.0]))
    }

    fn ticks(&self) -> Vec<f64> {
        let step = tick_step(self.min, self.max);
        let first = (self.min / step).ceil() as i64;
        let last = (self.max / step + 1e-9).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

fn tick_step(lo: f64, hi: f64) -> f64 {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let nice = if m <= 1.0 {
        1.0
    } else if m <= 2.0 {
        2.0
    } else if m <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub right_axis: bool,
    pub dashed: bool,
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self {
            name: name.into(),
            points,
            color,
            right_axis: false,
            dashed: false,
            markers: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    pub y2: Option<Axis>,
    pub series: Vec<Series>,
}

struct Frame {
    out: String,
}

impl Frame {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="26" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        Self { out }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn px(v: f64, a: &Axis) -> f64 {
    LEFT + (v - a.min) / (a.max - a.min) * (W - LEFT - RIGHT)
}

fn py(v: f64, a: &Axis) -> f64 {
    H - BOTTOM - (v - a.min) / (a.max - a.min) * (H - TOP - BOTTOM)
}

fn y_axis(f: &mut Frame, a: &Axis, right: bool) {
    let x = if right { W - RIGHT } else { LEFT };
    let _ = writeln!(
        f.out,
        r#"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
        H - BOTTOM
    );
    for t in a.ticks() {
        let y = py(t, a);
        let (x2, tx, anchor) = if right {
            (x + 5.0, x + 8.0, "start")
        } else {
            (x - 5.0, x - 8.0, "end")
        };
        let _ = writeln!(
            f.out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
            y + 4.0,
            fmt_tick(t)
        );
        if !right {
            let _ = writeln!(
                f.out,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
                W - RIGHT
            );
        }
    }
    let (lx, rot) = if right { (W - 18.0, 90) } else { (18.0, -90) };
    let ly = (TOP + H - BOTTOM) / 2.0;
    let _ = writeln!(
        f.out,
        r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" transform="rotate({rot} {lx:.2} {ly:.2})">{}</text>"#,
        esc(&a.label)
    );
}

impl LineChart {
    pub fn render(&self) -> String {
        let mut f = Frame::new(&self.title);
        y_axis(&mut f, &self.y, false);
        if let Some(a) = &self.y2 {
            y_axis(&mut f, a, true);
        }
        let base = H - BOTTOM;
        let _ = writeln!(
            f.out,
            r#"<line x1="{LEFT:.2}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="black"/>"#,
            W - RIGHT
        );
        for t in self.x.ticks() {
            let x = px(t, &self.x);
            let _ = writeln!(
                f.out,
                r#"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                base + 5.0,
                base + 19.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            f.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 18.0,
            esc(&self.x.label)
        );

        for (n, s) in self.series.iter().enumerate() {
            let axis = match (&self.y2, s.right_axis) {
                (Some(a), true) => a,
                _ => &self.y,
            };
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| (px(x, &self.x), py(y, axis)))
                .collect();
            if s.markers {
                for (x, y) in &pts {
                    let _ = writeln!(
                        f.out,
                        r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}"/>"#,
                        s.color
                    );
                }
            } else if !pts.is_empty() {
                let mut d = String::new();
                for (i, (x, y)) in pts.iter().enumerate() {
                    let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
                }
                let dash = if s.dashed {
                    r#" stroke-dasharray="6 4""#
                } else {
                    ""
                };
                let _ = writeln!(
                    f.out,
                    r#"<polyline points="{d}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                    s.color
                );
            }
            let ly = TOP + 8.0 + 16.0 * n as f64;
            let lx = LEFT + 12.0;
            let _ = writeln!(
                f.out,
                r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                ly - 2.0,
                s.color,
                lx + 20.0,
                ly + 4.0,
                esc(&s.name)
            );
        }
        f.finish()
    }
}

#[derive(Debug, Clone)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub bars: Vec<(String, f64)>,
    /// Fixed vertical range; fitted to the bars when `None`.
    pub y_range: Option<(f64, f64)>,
    pub value_format: fn(f64) -> String,
}

impl BarChart {
    pub fn render(&self) -> String {
        let mut f = Frame::new(&self.title);
        let y = match self.y_range {
            Some((min, max)) => Axis {
                label: self.y_label.clone(),
                min,
                max,
            },
            None => Axis::from_zero(self.y_label.clone(), self.bars.iter().map(|b| b.1)),
        };
        y_axis(&mut f, &y, false);
        let base = H - BOTTOM;
        let _ = writeln!(
            f.out,
            r#"<line x1="{LEFT:.2}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="black"/>"#,
            W - RIGHT
        );
        let n = self.bars.len().max(1) as f64;
        let slot = (W - LEFT - RIGHT) / n;
        for (i, (label, v)) in self.bars.iter().enumerate() {
            let cx = LEFT + slot * (i as f64 + 0.5);
            let top = py(v.clamp(y.min, y.max), &y);
            let zero = py(0.0f64.clamp(y.min, y.max), &y);
            let (y0, h) = if top < zero {
                (top, zero - top)
            } else {
                (zero, top - zero)
            };
            let bw = 0.55 * slot;
            let _ = writeln!(
                f.out,
                r#"<rect x="{:.2}" y="{y0:.2}" width="{bw:.2}" height="{h:.2}" fill="{}"/>"#,
                cx - bw / 2.0,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                f.out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 - 6.0,
                esc(&(self.value_format)(*v))
            );
            let _ = writeln!(
                f.out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                base + 19.0,
                esc(label)
            );
        }
        f.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        let a = Axis::fit("v", [0.013, 0.041]);
        assert!(a.min <= 0.013 && a.max >= 0.041);
        let t = a.ticks();
        assert!(t.len() >= 3 && t.len() <= 12, "{t:?}");
        assert_eq!(fmt_tick(0.005 * 3.0), "0.015");
    }

    #[test]
    fn flat_data_still_has_a_range() {
        let a = Axis::fit("v", [5.0, 5.0]);
        assert!(a.max > a.min);
    }

    #[test]
    fn render_is_deterministic() {
        let chart = LineChart {
            title: "a < b".into(),
            x: Axis::fit("t", [0.0, 1.0]),
            y: Axis::fit("y", [0.0, 2.0]),
            y2: None,
            series: vec![Series::line("s", vec![(0.0, 0.0), (1.0, 2.0)], PALETTE[0])],
        };
        let a = chart.render();
        assert_eq!(a, chart.render());
        assert!(a.contains("a &lt; b"));
        assert!(a.starts_with("<svg"));
    }
}
