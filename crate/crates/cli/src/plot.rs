//! Line charts of metrics.csv as standalone SVG, plus a long-form plots.csv.

use std::fmt::Write as _;
use std::path::Path;

use collapse_lab::metrics::{format_sig6, METRICS_HEADER, PER_CLASS_HEADER};
use collapse_lab::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// The seven metrics.csv columns plus the per-class accuracy spread.
pub const PLOTTED: [&str; 8] = [
    "fid",
    "precision",
    "recall",
    "density",
    "coverage",
    "accuracy",
    "cross_entropy",
    "per_class_spread",
];

pub struct Series {
    pub generations: Vec<u32>,
    /// One column per entry of `PLOTTED`.
    pub values: Vec<Vec<Option<f64>>>,
}

fn malformed(msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("malformed CSV: {msg}"))
}

fn parse_opt(field: &str, line: u64) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| malformed(format!("line {line}: `{field}` is not a number")))
}

fn open_csv(path: &Path, header: &str) -> Result<csv::Reader<std::fs::File>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let got = reader
        .headers()
        .map_err(malformed)?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if got != header {
        return Err(malformed(format!(
            "{} has header `{got}`, expected `{header}`",
            path.display()
        )));
    }
    Ok(reader)
}

pub fn read_series(metrics: &Path) -> Result<Series> {
    let mut reader = open_csv(metrics, METRICS_HEADER)?;
    let mut generations = Vec::new();
    let mut values = vec![Vec::new(); PLOTTED.len()];
    for rec in reader.records() {
        let rec = rec.map_err(malformed)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 8 {
            return Err(malformed(format!("line {line}: expected 8 fields")));
        }
        let g = rec[0]
            .parse::<u32>()
            .map_err(|_| malformed(format!("line {line}: bad generation `{}`", &rec[0])))?;
        generations.push(g);
        for (col, field) in rec.iter().skip(1).enumerate() {
            values[col].push(parse_opt(field, line)?);
        }
    }
    if generations.is_empty() {
        return Err(malformed(format!("{} has no rows", metrics.display())));
    }

    let spread = per_class_spread(metrics, &generations)?;
    values[7] = spread;
    Ok(Series {
        generations,
        values,
    })
}

/// `max - min` of per-class accuracy for each generation, from the
/// per_class.csv next to `metrics`.
fn per_class_spread(metrics: &Path, generations: &[u32]) -> Result<Vec<Option<f64>>> {
    let path = metrics.with_file_name("per_class.csv");
    let mut lo = vec![f64::INFINITY; generations.len()];
    let mut hi = vec![f64::NEG_INFINITY; generations.len()];
    if path.exists() {
        let mut reader = open_csv(&path, PER_CLASS_HEADER)?;
        for rec in reader.records() {
            let rec = rec.map_err(malformed)?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 3 {
                return Err(malformed(format!(
                    "per_class line {line}: expected 3 fields"
                )));
            }
            let g: u32 = rec[0]
                .parse()
                .map_err(|_| malformed(format!("per_class line {line}: bad generation")))?;
            let Some(a) = parse_opt(&rec[2], line)? else {
                continue;
            };
            if let Some(i) = generations.iter().position(|&x| x == g) {
                lo[i] = lo[i].min(a);
                hi[i] = hi[i].max(a);
            }
        }
    }
    Ok(lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| (l <= h).then_some(h - l))
        .collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// A single-series line chart with generation on the x axis.
pub fn line_chart(title: &str, generations: &[u32], values: &[Option<f64>]) -> String {
    let points: Vec<(f64, f64)> = generations
        .iter()
        .zip(values)
        .filter_map(|(&g, v)| v.map(|v| (g as f64, v)))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">generation</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    if points.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">no data</text>"#,
            (x0 + x1) / 2.0,
            (y0 + y1) / 2.0
        );
        svg.push_str("</svg>\n");
        return svg;
    }

    let gmin = *generations.iter().min().expect("non-empty") as f64;
    let gmax = *generations.iter().max().expect("non-empty") as f64;
    let (mut vmin, mut vmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| {
            (a.min(v), b.max(v))
        });
    if vmax - vmin < 1e-12 {
        let pad = (vmin.abs() * 0.05).max(0.5);
        vmin -= pad;
        vmax += pad;
    }
    let sx = |g: f64| {
        if gmax > gmin {
            x0 + (g - gmin) / (gmax - gmin) * (x1 - x0)
        } else {
            (x0 + x1) / 2.0
        }
    };
    let sy = |v: f64| y0 - (v - vmin) / (vmax - vmin) * (y0 - y1);

    for (label, v) in [(vmin, vmin), (vmax, vmax)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 - 6.0,
            sy(v) + 4.0,
            format_sig6(label)
        );
    }
    for g in [gmin, gmax] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            sx(g),
            y0 + 16.0,
            g
        );
    }
    let coords: Vec<String> = points
        .iter()
        .map(|&(g, v)| format!("{:.2},{:.2}", sx(g), sy(v)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        coords.join(" ")
    );
    for &(g, v) in &points {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            sx(g),
            sy(v)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn tidy_csv(series: &Series) -> String {
    let mut out = String::from("metric,generation,value\n");
    for (name, col) in PLOTTED.iter().zip(&series.values) {
        for (g, v) in series.generations.iter().zip(col) {
            let v = v.map(format_sig6).unwrap_or_default();
            let _ = writeln!(out, "{name},{g},{v}");
        }
    }
    out
}

pub fn cmd_plot(metrics: &Path, out_dir: &Path) -> Result<()> {
    let series = read_series(metrics)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let write = |name: String, body: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::Io { path: p, source: e })
    };
    for (name, col) in PLOTTED.iter().zip(&series.values) {
        write(
            format!("{name}.svg"),
            line_chart(name, &series.generations, col),
        )?;
    }
    write("plots.csv".into(), tidy_csv(&series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_has_one_point_per_value() {
        let svg = line_chart(
            "fid",
            &[0, 1, 2, 3],
            &[Some(1.0), Some(2.0), None, Some(0.5)],
        );
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>");
        assert_eq!(pts.split(' ').count(), 3);
        assert!(!line_chart("x", &[0], &[None]).contains("<polyline"));
    }

    #[test]
    fn flat_series_still_renders() {
        let svg = line_chart("recall", &[0, 1], &[Some(1.0), Some(1.0)]);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));
    }
}
