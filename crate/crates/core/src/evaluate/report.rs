use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalError, EvalReport};

/// Formats `v` with `sig` significant digits, without exponent notation.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // a value like 9.999996 may round up to one more integer digit
    let s = if s.trim_start_matches('-').split('.').next().map_or(0, str::len) as i64 > magnitude.max(0) + 1 && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `<position>_<source>`, with `all` when windows mix positions.
pub fn report_key(report: &EvalReport) -> String {
    let pos = report.position.map_or_else(|| "all".to_string(), |p| p.to_string());
    format!("{pos}_{}", report.source.as_str())
}

/// Row-normalized confusion matrix, true classes down, predictions across.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\predicted");
    for name in &report.class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.pooled.confusion) {
        out.push_str(name);
        for v in row {
            out.push(',');
            out.push_str(&fmt_sig(*v, 6));
        }
        out.push('\n');
    }
    out
}

/// Confusion heatmap as a standalone SVG document.
pub fn confusion_svg(report: &EvalReport, title: &str) -> String {
    let n = report.class_names.len();
    let (cell, left, top) = (36.0, 110.0, 110.0);
    let width = left + cell * n as f64 + 20.0;
    let height = top + cell * n as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="16" font-size="13">{}</text>"#, escape(title));
    for (i, name) in report.class_names.iter().enumerate() {
        let y = top + cell * i as f64 + cell / 2.0 + 3.0;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, left - 4.0, escape(name));
        let x = left + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 4.0,
            top - 4.0,
            escape(name)
        );
    }
    for (i, row) in report.pooled.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let (x, y) = (left + cell * j as f64, top + cell * i as f64);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#ccc"/>"##
            );
            if v > 0.0 {
                let color = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{color}">{}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.0,
                    format!("{v:.2}")
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: &Path, contents: &str) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

/// Writes `report.json` (all reports keyed by name) plus a confusion CSV and
/// SVG per report. Returns the files written.
pub fn write_report_bundle(dir: &Path, reports: &[(String, EvalReport)]) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    let map: BTreeMap<&str, &EvalReport> = reports.iter().map(|(k, r)| (k.as_str(), r)).collect();
    let json = serde_json::to_string_pretty(&map).expect("reports serialize");
    let mut written = vec![dir.join("report.json")];
    write(&written[0], &(json + "\n"))?;
    for (key, report) in reports {
        let csv = dir.join(format!("confusion_{key}.csv"));
        write(&csv, &confusion_csv(report))?;
        let svg = dir.join(format!("confusion_{key}.svg"));
        write(&svg, &confusion_svg(report, key))?;
        written.extend([csv, svg]);
    }
    Ok(written)
}
