//! Minimal self-contained SVG charts: faceted panels with axes, lines,
//! bands, points, bars and reference lines.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub enum Mark {
    Line { points: Vec<(f64, f64)>, color: &'static str },
    /// Filled region between `lower` and `upper` over shared x values.
    Band { x: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, color: &'static str },
    Points { points: Vec<(f64, f64)>, color: &'static str },
    /// Vertical interval with a point at `mid`.
    Interval { x: f64, lower: f64, mid: f64, upper: f64, color: &'static str },
    Rect { x0: f64, x1: f64, y0: f64, y1: f64, color: &'static str },
    HLine { y: f64, color: &'static str },
    VLine { x: f64, color: &'static str },
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub marks: Vec<Mark>,
    /// Categorical x tick labels at positions 0, 1, ...
    pub x_categories: Option<Vec<String>>,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub panels: Vec<Panel>,
    pub columns: usize,
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 44.0;
const TITLE_H: f64 = 32.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn extent(marks: &[Mark]) -> ((f64, f64), (f64, f64)) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut see = |x: Option<f64>, y: Option<f64>| {
        if let Some(x) = x.filter(|v| v.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        if let Some(y) = y.filter(|v| v.is_finite()) {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    };
    for m in marks {
        match m {
            Mark::Line { points, .. } | Mark::Points { points, .. } => {
                for &(x, y) in points {
                    see(Some(x), Some(y));
                }
            }
            Mark::Band { x, lower, upper, .. } => {
                for i in 0..x.len() {
                    see(Some(x[i]), Some(lower[i]));
                    see(None, Some(upper[i]));
                }
            }
            Mark::Interval { x, lower, upper, .. } => {
                see(Some(*x), Some(*lower));
                see(None, Some(*upper));
            }
            Mark::Rect { x0, x1, y0, y1, .. } => {
                see(Some(*x0), Some(*y0));
                see(Some(*x1), Some(*y1));
            }
            Mark::HLine { y, .. } => see(None, Some(*y)),
            Mark::VLine { x, .. } => see(Some(*x), None),
        }
    }
    let fix = |a: f64, b: f64| {
        if !a.is_finite() {
            (0.0, 1.0)
        } else if a == b {
            (a - 0.5, b + 0.5)
        } else {
            (a, b)
        }
    };
    (fix(x0, x1), fix(y0, y1))
}

/// Roughly five round tick values covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    }
}

fn render_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let ((dx0, dx1), (dy0, dy1)) = extent(&p.marks);
    let (x0, x1) = p.x_range.unwrap_or(match &p.x_categories {
        Some(c) => (-0.5, c.len() as f64 - 0.5),
        None => (dx0, dx1),
    });
    let (y0, y1) = p.y_range.unwrap_or((dy0, dy1));
    let pad_y = (y1 - y0) * 0.04;
    let (y0, y1) = if p.y_range.is_some() { (y0, y1) } else { (y0 - pad_y, y1 + pad_y) };
    let left = ox + MARGIN_L;
    let top = oy + MARGIN_T;
    let w = PANEL_W - MARGIN_L - MARGIN_R;
    let h = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| top + h - (y - y0) / (y1 - y0) * h;

    let _ = writeln!(out, r#"<g class="panel">"#);
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#ffffff" stroke="#888888"/>"##,
        f(left),
        f(top),
        f(w),
        f(h)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        f(left + w / 2.0),
        f(oy + 18.0),
        esc(&p.title)
    );
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#eeeeee"/><text x="{}" y="{}" text-anchor="end" font-size="9">{}</text>"##,
            f(left),
            f(y),
            f(left + w),
            f(y),
            f(left - 4.0),
            f(y + 3.0),
            tick_label(t)
        );
    }
    match &p.x_categories {
        Some(cats) => {
            for (i, c) in cats.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{}</text>"#,
                    f(sx(i as f64)),
                    f(top + h + 12.0),
                    esc(c)
                );
            }
        }
        None => {
            for t in ticks(x0, x1) {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{}</text>"#,
                    f(sx(t)),
                    f(top + h + 12.0),
                    tick_label(t)
                );
            }
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
        f(left + w / 2.0),
        f(top + h + 30.0),
        esc(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="10" transform="rotate(-90 {} {})">{}</text>"#,
        f(ox + 14.0),
        f(top + h / 2.0),
        f(ox + 14.0),
        f(top + h / 2.0),
        esc(&p.y_label)
    );
    for m in &p.marks {
        match m {
            Mark::Band { x, lower, upper, color } => {
                let mut d = String::new();
                for i in 0..x.len() {
                    let _ = write!(d, "{}{},{} ", if i == 0 { "M" } else { "L" }, f(sx(x[i])), f(sy(upper[i])));
                }
                for i in (0..x.len()).rev() {
                    let _ = write!(d, "L{},{} ", f(sx(x[i])), f(sy(lower[i])));
                }
                let _ = writeln!(out, r#"<path class="band" d="{}Z" fill="{color}" fill-opacity="0.25" stroke="none"/>"#, d);
            }
            Mark::Line { points, color } => {
                let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{},{}", f(sx(x)), f(sy(y)))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline class="line" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
            }
            Mark::Points { points, color } => {
                for &(x, y) in points {
                    let _ = writeln!(out, r#"<circle class="point" cx="{}" cy="{}" r="2.5" fill="{color}"/>"#, f(sx(x)), f(sy(y)));
                }
            }
            Mark::Interval { x, lower, mid, upper, color } => {
                let _ = writeln!(
                    out,
                    r#"<line class="interval" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="1.5"/><circle class="point" cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                    f(sx(*x)),
                    f(sy(*lower)),
                    f(sx(*x)),
                    f(sy(*upper)),
                    f(sx(*x)),
                    f(sy(*mid))
                );
            }
            Mark::Rect { x0, x1, y0, y1, color } => {
                let (a, b) = (sx(*x0), sx(*x1));
                let (c, d) = (sy(*y1), sy(*y0));
                let _ = writeln!(
                    out,
                    r##"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.6" stroke="#333333" stroke-width="0.5"/>"##,
                    f(a.min(b)),
                    f(c.min(d)),
                    f((b - a).abs()),
                    f((d - c).abs())
                );
            }
            Mark::HLine { y, color } => {
                let _ = writeln!(
                    out,
                    r#"<line class="ref" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                    f(left),
                    f(sy(*y)),
                    f(left + w),
                    f(sy(*y))
                );
            }
            Mark::VLine { x, color } => {
                let _ = writeln!(
                    out,
                    r#"<line class="ref" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
                    f(sx(*x)),
                    f(top),
                    f(sx(*x)),
                    f(top + h)
                );
            }
        }
    }
    let _ = writeln!(out, "</g>");
}

/// Renders the chart; `metadata` is embedded verbatim (escaped) in a
/// `<metadata>` element.
pub fn render(chart: &Chart, metadata: &str) -> String {
    let cols = chart.columns.max(1).min(chart.panels.len().max(1));
    let rows = chart.panels.len().div_ceil(cols).max(1);
    let width = cols as f64 * PANEL_W;
    let height = TITLE_H + rows as f64 * PANEL_H;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        f(width),
        f(height),
        f(width),
        f(height)
    );
    let _ = writeln!(out, "<metadata>{}</metadata>", esc(metadata));
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fafafa"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        f(width / 2.0),
        esc(&chart.title)
    );
    for (i, p) in chart.panels.iter().enumerate() {
        let ox = (i % cols) as f64 * PANEL_W;
        let oy = TITLE_H + (i / cols) as f64 * PANEL_H;
        render_panel(&mut out, p, ox, oy);
    }
    out.push_str("</svg>\n");
    out
}

/// The SVG without its `<metadata>` element, for comparing geometry.
pub fn strip_metadata(svg: &str) -> String {
    svg.lines().filter(|l| !l.starts_with("<metadata>")).collect::<Vec<_>>().join("\n")
}
