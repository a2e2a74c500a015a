//! Minimal SVG rendering of flight logs and line charts. Output depends only
//! on the input text, so plotting the same file twice gives the same bytes.

use std::fmt::Write as _;

use octoflight::env::TICK_LOG_HEADER;
use octoflight::ppo::CURVE_HEADER;
use octoflight::runner::FLIGHT_LOG_HEADER_SUFFIX;
use octoflight::{Error, Result, Trajectory};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogKind {
    Flight,
    Curve,
}

pub fn detect(text: &str) -> Result<LogKind> {
    let header = text.lines().next().map(str::trim).unwrap_or("");
    if header.is_empty() {
        return Err(Error::InvalidInput("empty log: nothing to plot".into()));
    }
    if header == format!("{TICK_LOG_HEADER}{FLIGHT_LOG_HEADER_SUFFIX}") {
        Ok(LogKind::Flight)
    } else if header == CURVE_HEADER {
        Ok(LogKind::Curve)
    } else {
        Err(Error::Parse { line: 1, msg: "unrecognised header (expected a flight log or learning curve)".into() })
    }
}

fn rows(text: &str, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {columns} fields, found {}", fields.len()) });
        }
        let row = fields
            .iter()
            .map(|f| f.trim().parse::<f64>().ok())
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Parse { line: i + 1, msg: "non-numeric field".into() })?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("empty log: nothing to plot".into()));
    }
    Ok(out)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, equal: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 - x0 < 1e-9 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        if y1 - y0 < 1e-9 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        if equal {
            let sx = (x1 - x0) / (WIDTH - 2.0 * MARGIN);
            let sy = (y1 - y0) / (HEIGHT - 2.0 * MARGIN);
            let s = sx.max(sy);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let (hw, hh) = (0.5 * s * (WIDTH - 2.0 * MARGIN), 0.5 * s * (HEIGHT - 2.0 * MARGIN));
            return Frame { x0: cx - hw, x1: cx + hw, y0: cy - hh, y1: cy + hh };
        }
        Frame { x0, x1, y0, y1 }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let (px, py) = self.map(*x, *y);
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, px, py);
        }
        d
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>", WIDTH / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, b) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, "<path class=\"axis\" d=\"M{l} {MARGIN} L{l} {b} L{} {b}\" stroke=\"black\" fill=\"none\"/>", WIDTH - MARGIN);
    let text = |s: &mut String, x: f64, y: f64, anchor: &str, t: &str| {
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>", escape(t));
    };
    text(s, l, b + 16.0, "start", &format!("{:.3}", f.x0));
    text(s, WIDTH - MARGIN, b + 16.0, "end", &format!("{:.3}", f.x1));
    text(s, l - 4.0, b, "end", &format!("{:.3}", f.y0));
    text(s, l - 4.0, MARGIN + 4.0, "end", &format!("{:.3}", f.y1));
    text(s, WIDTH / 2.0, HEIGHT - 12.0, "middle", x_label);
    text(s, 14.0, HEIGHT / 2.0, "middle", y_label);
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Top-down view (east right, north up) of a flight log. One `reference`
/// path per segment chord and one `flight` path per flown segment. Without a
/// trajectory, each segment's waypoint is estimated as its mean reference.
pub fn flight_svg(text: &str, title: &str, trajectory: Option<&Trajectory>) -> Result<String> {
    let cols = TICK_LOG_HEADER.split(',').count() + 1;
    let data = rows(text, cols)?;
    let seg_col = cols - 1;
    let mut segments: Vec<(usize, Vec<&Vec<f64>>)> = Vec::new();
    for r in &data {
        let k = r[seg_col] as usize;
        match segments.last_mut() {
            Some((idx, v)) if *idx == k => v.push(r),
            _ => segments.push((k, vec![r])),
        }
    }
    // (north, east) pairs
    let chords: Vec<[(f64, f64); 2]> = match trajectory {
        Some(t) => t.points.windows(2).map(|w| [(w[0].0[0], w[0].0[1]), (w[1].0[0], w[1].0[1])]).collect(),
        None => {
            let mut start = (data[0][1], data[0][2]);
            segments
                .iter()
                .map(|(_, rs)| {
                    let n = rs.len() as f64;
                    let wp = (rs.iter().map(|r| r[13]).sum::<f64>() / n, rs.iter().map(|r| r[14]).sum::<f64>() / n);
                    let c = [start, wp];
                    start = wp;
                    c
                })
                .collect()
        }
    };
    let all = data.iter().map(|r| (r[2], r[1])).chain(chords.iter().flat_map(|c| c.iter().map(|(n, e)| (*e, *n))));
    let f = Frame::fit(all, true);
    let mut s = open(title);
    axes(&mut s, &f, "east (m)", "north (m)");
    for (i, c) in chords.iter().enumerate() {
        let d = f.path(&[(c[0].1, c[0].0), (c[1].1, c[1].0)]);
        let _ = writeln!(s, "<path class=\"reference\" data-segment=\"{i}\" d=\"{d}\" stroke=\"#888888\" stroke-dasharray=\"6 4\" fill=\"none\"/>");
    }
    for (k, rs) in &segments {
        let pts: Vec<(f64, f64)> = rs.iter().map(|r| (r[2], r[1])).collect();
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, "<path class=\"flight\" data-segment=\"{k}\" d=\"{}\" stroke=\"{colour}\" stroke-width=\"1.5\" fill=\"none\"/>", f.path(&pts));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Plain multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidInput("empty plot: no data points".into()));
    }
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()), false);
    let mut s = open(title);
    axes(&mut s, &f, x_label, y_label);
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<path class=\"series\" d=\"{}\" stroke=\"{colour}\" stroke-width=\"1.5\" fill=\"none\"/>", f.path(&ser.points));
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{colour}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Mean episode reward against update index.
pub fn curve_svg(text: &str, title: &str) -> Result<String> {
    let data = rows(text, CURVE_HEADER.split(',').count())?;
    let pts = data.iter().filter(|r| r[2].is_finite()).map(|r| (r[0], r[2])).collect();
    line_chart(title, "update", "mean episode reward", &[Series { name: "reward".into(), points: pts }])
}

pub fn render(text: &str, title: &str, trajectory: Option<&Trajectory>) -> Result<String> {
    match detect(text)? {
        LogKind::Flight => flight_svg(text, title, trajectory),
        LogKind::Curve => curve_svg(text, title),
    }
}
