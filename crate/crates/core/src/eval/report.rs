//! Report renderings. The line-delimited form holds one JSON-encoded
//! [`EvalReport`] per line and round-trips exactly; the text form is an
//! aligned table sorted by level, method, mode, way and shot.

use super::metrics::EvalReport;
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 9] = ["level", "method", "mode", "way", "shot", "episodes", "mean", "ci95", "seed"];

pub fn render_jsonl(reports: &[EvalReport]) -> String {
    reports.iter().map(|r| serde_json::to_string(r).expect("reports serialize") + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: "<reports>".into(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Aligned, human-readable table. An empty list renders the header only.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &EvalReport| {
            let c = &r.condition;
            (c.level.clone(), c.method.clone(), c.mode.clone(), c.way, c.shot)
        };
        key(a).cmp(&key(b))
    });
    let mut rows: Vec<Vec<String>> = vec![COLUMNS.iter().map(|c| c.to_string()).collect()];
    for r in sorted {
        let c = &r.condition;
        rows.push(vec![
            c.level.clone(),
            c.method.clone(),
            c.mode.clone(),
            c.way.to_string(),
            c.shot.to_string(),
            r.episodes.to_string(),
            format!("{:.4}", r.mean),
            format!("{:.4}", r.ci95),
            r.seed.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..COLUMNS.len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    rows.iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            cells.join("  ").trim_end().to_string() + "\n"
        })
        .collect()
}
