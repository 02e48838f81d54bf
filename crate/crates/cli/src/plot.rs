//! Forecast-versus-actual line charts as standalone SVG.

use std::fmt::Write as _;

use spade::data::SeriesRecord;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// One forecast trace: `(period, value)` points sorted by period.
pub struct Trace {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(usize, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Actual demand as a black line, each trace as a coloured line, and every
/// labelled peak period as a shaded band one period wide.
pub fn render(record: &SeriesRecord, traces: &[Trace], title: &str) -> String {
    let t_len = record.len().max(2);
    let max_y = record
        .demand
        .iter()
        .copied()
        .chain(traces.iter().flat_map(|t| t.points.iter().map(|p| p.1)))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;
    let min_y = record
        .demand
        .iter()
        .copied()
        .chain(traces.iter().flat_map(|t| t.points.iter().map(|p| p.1)))
        .fold(0.0f64, f64::min);
    let span = (max_y - min_y).max(1e-9);
    let x_step = (WIDTH - 2.0 * MARGIN) / (t_len - 1) as f64;
    let x = |t: f64| MARGIN + t * x_step;
    let y = |v: f64| HEIGHT - MARGIN - (v - min_y) / span * (HEIGHT - 2.0 * MARGIN);
    let path = |pts: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut d = String::new();
        for (i, (px, py)) in pts.enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, x(px), y(py));
        }
        d
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    for (t, _) in record.peaks.iter().enumerate().filter(|(_, &p)| p) {
        let _ = writeln!(
            svg,
            r#"<rect class="peak" data-period="{t}" x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="orange" fill-opacity="0.25"/>"#,
            x(t as f64 - 0.5),
            x_step,
            HEIGHT - 2.0 * MARGIN
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="gray"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{:.2}" stroke="gray"/>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{:.1}</text>"#,
        MARGIN - 4.0,
        MARGIN + 4.0,
        max_y
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{:.1}</text>"#,
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        min_y
    );
    let actual = path(&mut record.demand.iter().enumerate().map(|(t, &v)| (t as f64, v)));
    let _ = writeln!(
        svg,
        r#"<path class="actual" d="{actual}" fill="none" stroke="black" stroke-width="1.5"/>"#
    );
    for tr in traces {
        if tr.points.is_empty() {
            continue;
        }
        let d = path(&mut tr.points.iter().map(|&(t, v)| (t as f64, v)));
        let _ = writeln!(
            svg,
            r#"<path class="forecast" data-label="{}" d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            escape(&tr.label),
            tr.color
        );
    }
    let mut legend_y = MARGIN - 30.0;
    for (label, color) in
        std::iter::once(("actual".to_string(), "black")).chain(traces.iter().map(|t| (t.label.clone(), t.color)))
    {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{legend_y:.2}" font-size="12" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            escape(&label)
        );
        legend_y += 14.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.2}" font-size="13">{}</text>"#,
        MARGIN - 30.0,
        escape(title)
    );
    svg.push_str("</svg>\n");
    svg
}
