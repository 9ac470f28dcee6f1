//! Loss curves from the combined CSV as a self-contained two-panel SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::report::COMBINED_HEADER;
use crate::CliError;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const GAP: f64 = 90.0;
const TICKS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Class, title and the loss it plots.
type Panel = (&'static str, &'static str, fn(&Point) -> f64);

/// Schedules in order of first appearance, each with its points.
pub type Series = Vec<(String, Vec<Point>)>;

pub fn parse_combined(text: &str) -> Result<Series, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let err = |line: u64, msg: String| CliError::Usage(format!("line {line}: {msg}"));

    let header = match records.next() {
        Some(r) => r.map_err(|e| err(1, e.to_string()))?,
        None => return Err(err(1, "empty file; expected a header".into())),
    };
    if header.iter().collect::<Vec<_>>() != COMBINED_HEADER {
        return Err(err(1, format!("header must be {}", COMBINED_HEADER.join(","))));
    }

    let mut series: Series = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != COMBINED_HEADER.len() {
            return Err(err(line, format!("expected {} fields, found {}", COMBINED_HEADER.len(), rec.len())));
        }
        let label = rec[0].trim();
        if label.is_empty() {
            return Err(err(line, "empty schedule label".into()));
        }
        let iter: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("iter {:?} is not a non-negative integer", &rec[1])))?;
        let num = |i: usize| -> Result<f64, CliError> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("{} {:?} is not a number", COMBINED_HEADER[i], &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("{} is not finite", COMBINED_HEADER[i])))
            }
        };
        let point = Point {
            iter,
            train_loss: num(2)?,
            val_loss: num(3)?,
        };
        num(4)?;
        match series.iter_mut().find(|(l, _)| l == label) {
            Some((_, pts)) => pts.push(point),
            None => series.push((label.to_string(), vec![point])),
        }
    }
    if series.is_empty() {
        return Err(err(2, "no data rows".into()));
    }
    Ok(series)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &Series) -> String {
    let width = LEFT + 2.0 * PANEL_W + GAP + 30.0;
    let height = TOP + PANEL_H + 60.0;
    let (x_lo, x_hi) = {
        let it = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.iter as f64));
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        }
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    let panels: [Panel; 2] = [
        ("train", "Training loss", |p| p.train_loss),
        ("val", "Validation loss", |p| p.val_loss),
    ];
    for (pi, (class, title, get)) in panels.iter().enumerate() {
        let x0 = LEFT + pi as f64 * (PANEL_W + GAP);
        let y0 = TOP;
        let (y_lo, y_hi) = range(series.iter().flat_map(|(_, p)| p.iter().map(get)));
        let sx = |v: f64| x0 + (v - x_lo) / (x_hi - x_lo) * PANEL_W;
        let sy = |v: f64| y0 + PANEL_H - (v - y_lo) / (y_hi - y_lo) * PANEL_H;

        writeln!(s, r#"<g class="panel {class}">"#).unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{title}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 20.0
        )
        .unwrap();
        writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#333"/>"##
        )
        .unwrap();
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let xv = x_lo + f * (x_hi - x_lo);
            let yv = y_lo + f * (y_hi - y_lo);
            let (px, py) = (sx(xv), sy(yv));
            writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"##,
                y0 + PANEL_H,
                y0 + PANEL_H + 5.0,
                y0 + PANEL_H + 18.0,
                xv
            )
            .unwrap();
            writeln!(
                s,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                yv
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 38.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">loss</text>"#,
            x0 - 48.0,
            y0 + PANEL_H / 2.0,
            x0 - 48.0,
            y0 + PANEL_H / 2.0
        )
        .unwrap();

        for (si, (label, pts)) in series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.iter as f64), sy(get(p)))).collect();
            writeln!(
                s,
                r#"<polyline class="series {class}" data-schedule="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                esc(label),
                coords.join(" ")
            )
            .unwrap();
        }

        writeln!(s, r#"<g class="legend">"#).unwrap();
        for (si, (label, _)) in series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let ly = y0 + 15.0 + 16.0 * si as f64;
            let lx = x0 + PANEL_W - 120.0;
            writeln!(
                s,
                r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                esc(label)
            )
            .unwrap();
        }
        writeln!(s, "</g>\n</g>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn plot_file(input: &Path, output: &Path) -> Result<Series, CliError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let series = parse_combined(&text)?;
    std::fs::write(output, render_svg(&series)).map_err(|e| CliError::Runtime(format!("{}: {e}", output.display())))?;
    Ok(series)
}
