//! Training curves: the canonical metrics CSV and an SVG rendering of it.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "iteration,epoch,train_loss,train_acc,val_loss,val_acc,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when the manifest has no validation split.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            self.train_loss,
            self.train_acc,
            opt(self.val_loss),
            opt(self.val_acc),
            self.wall_ms
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::config(format!("metrics row {line:?}"));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(MetricsRow {
            iteration: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            train_loss: num(f[2])?,
            train_acc: num(f[3])?,
            val_loss: opt(f[4])?,
            val_acc: opt(f[5])?,
            wall_ms: f[6].parse().map_err(|_| bad())?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(MetricsRow::parse).collect()
}

/// Writes the header if the file is new, then appends rows.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Drops rows past `iteration`, used when resuming from a checkpoint.
pub fn truncate_metrics(path: &Path, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<MetricsRow> = read_metrics(path)?
        .into_iter()
        .filter(|r| r.iteration <= iteration)
        .collect();
    std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    append_metrics(path, &kept)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;

/// Line chart of the four curves against iteration in a fixed 800x500
/// viewBox. Losses and accuracies share one axis from 0 to
/// `max(1, largest loss)`.
pub fn render_svg(rows: &[MetricsRow]) -> String {
    let max_iter = rows.iter().map(|r| r.iteration).max().unwrap_or(1).max(1) as f64;
    let y_max = rows
        .iter()
        .flat_map(|r| [Some(r.train_loss), r.val_loss])
        .flatten()
        .filter(|v| v.is_finite())
        .fold(1.0, f64::max);
    let px = |it: u64| MARGIN + (WIDTH - 2.0 * MARGIN) * it as f64 / max_iter;
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v / y_max).clamp(0.0, 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">iteration (max {})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        max_iter
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
        x0 - 5.0,
        y0 + 4.0,
        y_max
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">0</text>"#, x0 - 5.0, y1 + 4.0);

    type Pick = fn(&MetricsRow) -> Option<f64>;
    let series: [(&str, &str, Pick); 4] = [
        ("train loss", "#d62728", |r| Some(r.train_loss)),
        ("val loss", "#ff9896", |r| r.val_loss),
        ("train accuracy", "#1f77b4", |r| Some(r.train_acc)),
        ("val accuracy", "#aec7e8", |r| r.val_acc),
    ];
    for (i, (label, color, pick)) in series.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .filter_map(|r| pick(r).filter(|v| v.is_finite()).map(|v| format!("{:.2},{:.2}", px(r.iteration), py(v))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}" font-size="12">{label}</text>"#,
            x1 - 150.0,
            x1 - 130.0,
            x1 - 125.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
