//! Minimal SVG line charts: one line per task with an interquartile band,
//! drawn thicker over the steps where that task was being trained.

use std::fmt::Write;

use crate::AggregateRow;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub task: String,
    /// (step, median, q25, q75, active)
    pub points: Vec<(u64, f64, f64, f64, bool)>,
}

/// Groups aggregate rows of one model into per-task series, in order of
/// first appearance.
pub fn series<'a>(rows: impl Iterator<Item = &'a AggregateRow>) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows {
        let p = (r.global_step, r.median, r.q25, r.q75, r.task_trained == r.eval_task);
        match out.iter_mut().find(|s| s.task == r.eval_task) {
            Some(s) => s.points.push(p),
            None => out.push(Series {
                task: r.eval_task.clone(),
                points: vec![p],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by_key(|p| p.0);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN_L + (v - self.x0) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }
    fn y(&self, v: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - MARGIN_B - (v - self.y0) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn polyline(pts: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

/// Renders the series as a standalone SVG document. Empty input gives a
/// valid document with axes and a note.
pub fn render(series: &[Series], title: &str) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p.0 as f64);
        x1 = x1.max(p.0 as f64);
        y0 = y0.min(p.2).min(p.1);
        y1 = y1.max(p.3).max(p.1);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = (y1 - y0) * 0.05;
    let f = Frame {
        x0,
        x1,
        y0: y0 - pad,
        y1: y1 + pad,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        escape(title)
    );
    let (bx, by) = (f.x(f.x0), f.y(f.y0));
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN_L},{MARGIN_T} L{bx:.2},{by:.2} L{:.2},{by:.2}" fill="none" stroke="black"/>"#,
        WIDTH - MARGIN_R
    );
    for i in 0..=4 {
        let xv = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let yv = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            f.x(xv),
            by + 18.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            MARGIN_L - 6.0,
            f.y(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment steps</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 10.0
    );
    if series.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="gray">no data</text>"#,
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT / 2.0
        );
    }

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // Carry-forward steps: each value holds until the next point.
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut mid = Vec::new();
        for (j, p) in s.points.iter().enumerate() {
            let x = f.x(p.0 as f64);
            if j > 0 {
                let prev = s.points[j - 1];
                upper.push((x, f.y(prev.3)));
                lower.push((x, f.y(prev.2)));
                mid.push((x, f.y(prev.1)));
            }
            upper.push((x, f.y(p.3)));
            lower.push((x, f.y(p.2)));
            mid.push((x, f.y(p.1)));
        }
        let mut band = upper.clone();
        band.extend(lower.iter().rev());
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            polyline(&band)
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            polyline(&mid)
        );
        // Thick overlay on intervals that start at a point recorded while
        // this task was active.
        for (j, p) in s.points.iter().enumerate() {
            if !p.4 || j + 1 == s.points.len() {
                continue;
            }
            let next = s.points[j + 1];
            let seg = [(f.x(p.0 as f64), f.y(p.1)), (f.x(next.0 as f64), f.y(p.1))];
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="4"/>"#,
                polyline(&seg)
            );
        }
        let ly = MARGIN_T + 18.0 * i as f64 + 8.0;
        let lx = WIDTH - MARGIN_R + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.task)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
