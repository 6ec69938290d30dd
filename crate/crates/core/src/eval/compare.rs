use std::cmp::Ordering;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::EvaluationReport;
use crate::detection::CellClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub run_label: String,
    pub map50: f64,
    pub ap50_positive: Option<f64>,
    pub ap50_negative: Option<f64>,
    pub precision_positive: f64,
    pub recall_positive: f64,
    pub precision_negative: f64,
    pub recall_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Ranks runs by mAP50, then by positive-class AP, then by label.
pub fn compare_runs(reports: &[EvaluationReport]) -> ComparisonTable {
    let mut sorted: Vec<&EvaluationReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        b.map50
            .total_cmp(&a.map50)
            .then_with(|| {
                let (pa, pb) = (a.ap(CellClass::Ki67Positive), b.ap(CellClass::Ki67Positive));
                match (pa, pb) {
                    (Some(x), Some(y)) => y.total_cmp(&x),
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => Ordering::Equal,
                }
            })
            .then_with(|| a.run_label.cmp(&b.run_label))
    });

    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let pr = |cls| {
                r.class(cls)
                    .map(|c| (c.precision, c.recall))
                    .unwrap_or((0.0, 0.0))
            };
            let (pp, rp) = pr(CellClass::Ki67Positive);
            let (pn, rn) = pr(CellClass::Ki67Negative);
            ComparisonRow {
                rank: i + 1,
                run_label: r.run_label.clone(),
                map50: r.map50,
                ap50_positive: r.ap(CellClass::Ki67Positive),
                ap50_negative: r.ap(CellClass::Ki67Negative),
                precision_positive: pp,
                recall_positive: rp,
                precision_negative: pn,
                recall_negative: rn,
            }
        })
        .collect();
    ComparisonTable { rows }
}

impl ComparisonTable {
    pub fn best(&self) -> Option<&ComparisonRow> {
        self.rows.first()
    }

    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let header = [
            "rank", "run", "mAP50", "AP50(+)", "AP50(-)", "P(+)", "R(+)", "P(-)", "R(-)",
        ];
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.rank.to_string(),
                    r.run_label.clone(),
                    format!("{:.4}", r.map50),
                    fmt_opt(r.ap50_positive),
                    fmt_opt(r.ap50_negative),
                    format!("{:.4}", r.precision_positive),
                    format!("{:.4}", r.recall_positive),
                    format!("{:.4}", r.precision_negative),
                    format!("{:.4}", r.recall_negative),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 1 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&cells);
        }
        out
    }
}
