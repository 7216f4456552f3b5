//! Deterministic SVG rendering of the experiment CSVs.
//!
//! Fixed canvas, fixed tick algorithm, fixed palette, fixed float formatting:
//! the same CSV always renders to the same bytes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 45.0;

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Landscape,
    Contamination,
    Regret,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<PlotKind> {
        Some(match s {
            "landscape" => PlotKind::Landscape,
            "contamination" => PlotKind::Contamination,
            "regret" => PlotKind::Regret,
            _ => return None,
        })
    }
}

// One named series of (x, y) points, plotted as polyline or dots.
struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    scatter: bool,
}

fn parse_csv(body: &str, expected_header: &str) -> Result<Vec<Vec<String>>, String> {
    let mut lines = body.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header.trim() != expected_header {
        return Err(format!("CSV header `{}` does not match kind (expected `{expected_header}`)", header.trim()));
    }
    let rows: Vec<Vec<String>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
        .collect();
    if rows.is_empty() {
        return Err("CSV has no data rows".into());
    }
    Ok(rows)
}

fn field(row: &[String], idx: usize) -> Result<f64, String> {
    row.get(idx)
        .ok_or_else(|| format!("short row: {row:?}"))?
        .parse()
        .map_err(|_| format!("non-numeric field `{}`", row[idx]))
}

// Group rows into series keyed by one column, reading (x, y) from two others.
fn grouped_series(
    rows: &[Vec<String>],
    key_col: usize,
    x_col: usize,
    y_col: usize,
    scatter: bool,
) -> Result<Vec<Series>, String> {
    let mut series: Vec<Series> = Vec::new();
    for row in rows {
        let key = row.get(key_col).cloned().ok_or_else(|| format!("short row: {row:?}"))?;
        let point = (field(row, x_col)?, field(row, y_col)?);
        match series.iter_mut().find(|s| s.name == key) {
            Some(s) => s.points.push(point),
            None => series.push(Series { name: key, points: vec![point], scatter }),
        }
    }
    Ok(series)
}

/// Render one of the three known CSV schemas to an SVG document.
pub fn render(kind: PlotKind, csv_body: &str) -> Result<String, String> {
    let series = match kind {
        PlotKind::Landscape => {
            let rows = parse_csv(csv_body, "design,estimate,stderr,metric,seed")?;
            grouped_series(&rows, 3, 0, 1, false)?
        }
        PlotKind::Contamination => {
            let rows = parse_csv(csv_body, "n,replicate,metric,estimate,n_contam")?;
            grouped_series(&rows, 2, 4, 3, true)?
        }
        PlotKind::Regret => {
            let rows = parse_csv(csv_body, "metric,k,mean_regret,max_regret")?;
            grouped_series(&rows, 0, 1, 2, false)?
        }
    };
    Ok(svg_document(&series))
}

// 1-2-5 tick ladder covering [lo, hi] with about five intervals.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let range = (hi - lo).max(1e-12);
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| range / s <= 5.5)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_num(v: f64) -> String {
    // shortest round-trip formatting is deterministic in Rust
    format!("{v}")
}

fn svg_document(series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_lo, mut x_hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y_lo, mut y_hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if x_hi - x_lo < 1e-12 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    // axes
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        MARGIN_L,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        MARGIN_L,
        MARGIN_T,
        MARGIN_L,
        HEIGHT - MARGIN_B
    );
    for t in ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            HEIGHT - MARGIN_B + 18.0,
            fmt_num(t)
        );
    }
    for t in ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\"/>",
            MARGIN_L - 5.0,
            MARGIN_L
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.scatter {
            for &(x, y) in &s.points {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                    px(x),
                    py(y)
                );
            }
        } else {
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path: Vec<String> =
                pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                path.join(" ")
            );
        }
        // legend entry
        let ly = MARGIN_T + 14.0 * i as f64 + 10.0;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            WIDTH - MARGIN_R - 110.0,
            ly - 9.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
            WIDTH - MARGIN_R - 96.0,
            ly,
            s.name
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_ladder_is_sane() {
        let t = ticks(0.0, 1.0);
        assert_eq!(t, vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert!(ticks(-3.0, 17.0).len() >= 3);
    }

    #[test]
    fn rejects_schema_mismatch_and_empty_body() {
        assert!(render(PlotKind::Regret, "metric,k\n").is_err());
        assert!(render(PlotKind::Regret, "metric,k,mean_regret,max_regret\n").is_err());
    }

    #[test]
    fn renders_deterministically() {
        let csv = "metric,k,mean_regret,max_regret\nw1,2,0.01,0.02\nw1,4,0.05,0.1\nkl,2,0.2,0.3\nkl,4,0.4,0.5\n";
        let a = render(PlotKind::Regret, csv).unwrap();
        let b = render(PlotKind::Regret, csv).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.contains("polyline"));
    }
}
