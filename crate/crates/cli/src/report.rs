//! Markdown summary and SVG bar charts rendered from the CSV artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::pipeline::{NA_FILE, TABLE1_FILE, TABLE2_FILE, TOP_PATHS_FILE};
use crate::provenance::ArtifactDir;

pub const REPORT_FILE: &str = "report.md";

/// Header and records of a CSV file, or `None` when it does not exist.
type Table = (Vec<String>, Vec<Vec<String>>);
type Bars = Vec<(String, f64, bool)>;

fn read_table(path: &Path) -> Result<Option<Table>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Some((header, rows)))
}

fn number(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') || cell.contains('e') => format!("{v:.3}"),
        _ => cell.to_string(),
    }
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let cells: Vec<String> = r.iter().map(|c| number(c)).collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart of signed values, one bar per label.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64, bool)]) -> String {
    let width = 900.0;
    let label_w = 520.0;
    let bar_h = 18.0;
    let top = 40.0;
    let height = top + bars.len() as f64 * (bar_h + 4.0) + 20.0;
    let max = bars.iter().fold(0.0f64, |m, b| m.max(b.1.abs())).max(1e-300);
    let half = (width - label_w - 20.0) / 2.0;
    let axis = label_w + half;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{axis}" y1="{}" x2="{axis}" y2="{}" stroke="#444"/>"##,
        top - 4.0,
        height - 16.0
    );
    for (k, (label, value, highlight)) in bars.iter().enumerate() {
        let y = top + k as f64 * (bar_h + 4.0);
        let w = value.abs() / max * half;
        let x = if *value >= 0.0 { axis } else { axis - w };
        let fill = match (highlight, *value >= 0.0) {
            (true, _) => "#d62728",
            (false, true) => "#1f77b4",
            (false, false) => "#ff7f0e",
        };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            y + bar_h - 5.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{bar_h}" fill="{fill}"><title>{value:e}</title></rect>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.md` and one chart per (task, condition, focus) found in
/// `top_paths.csv`. Missing inputs are skipped.
pub fn render(dir: &ArtifactDir) -> Result<String> {
    let mut md = String::from("# Influence path report\n\n");
    let _ = writeln!(
        md,
        "Config hash `{}`, {} {}.\n",
        dir.provenance().config_hash,
        dir.provenance().tool,
        dir.provenance().version
    );
    if let Some((h, rows)) = read_table(&dir.path(NA_FILE))? {
        md.push_str("## Number agreement accuracy\n\n");
        md.push_str(&markdown_table(&h, &rows));
        md.push('\n');
    }
    if let Some((h, rows)) = read_table(&dir.path(TABLE1_FILE))? {
        md.push_str("## Path metrics\n\n");
        md.push_str(&markdown_table(&h, &rows));
        md.push('\n');
    }
    if let Some((h, rows)) = read_table(&dir.path(TABLE2_FILE))? {
        md.push_str("## Compression accuracy\n\n");
        md.push_str(&markdown_table(&h, &rows));
        md.push('\n');
    }
    if let Some((h, rows)) = read_table(&dir.path(TOP_PATHS_FILE))? {
        let col = |name: &str| {
            h.iter()
                .position(|c| c == name)
                .with_context(|| format!("{TOP_PATHS_FILE} lacks {name}"))
        };
        let (task, cond, focus) = (col("Task")?, col("C")?, col("Focus")?);
        let (path, value, primary) = (col("Path")?, col("MeanAttribution")?, col("Primary")?);
        let mut groups: BTreeMap<(String, String, String), Bars> = BTreeMap::new();
        let mut order = Vec::new();
        for r in &rows {
            let key = (r[task].clone(), r[cond].clone(), r[focus].clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push((
                r[path].clone(),
                r[value].parse().unwrap_or(0.0),
                r[primary] == "true",
            ));
        }
        md.push_str("## Top paths by mean attribution\n\nThe primary path is drawn in red.\n\n");
        for key in order {
            let name = format!("charts/{}_{}_{}.svg", key.0, key.1, key.2);
            let title = format!("{} {} from {}", key.0, key.1, key.2);
            dir.write(&name, bar_chart_svg(&title, &groups[&key]).as_bytes())?;
            let _ = writeln!(md, "![{title}]({name})\n");
        }
    }
    dir.write(REPORT_FILE, md.as_bytes())?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_escapes_labels_and_scales_bars() {
        let svg = bar_chart_svg("t", &[("a<b".into(), 2.0, true), ("c".into(), -1.0, false)]);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("#d62728"));
        assert!(svg.contains("#ff7f0e"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }

    #[test]
    fn tables_render_with_rounded_numbers() {
        let md = markdown_table(&["A".into(), "B".into()], &[vec!["x".into(), "0.123456".into()]]);
        assert!(md.contains("| x | 0.123 |"));
    }
}
