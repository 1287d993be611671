//! Metrics, domain gaps and table rendering. Scores are ratios internally
//! and percentages (two decimals) in rendered output.

mod gap;
mod metrics;

pub use gap::{
    audit_published_gaps, domain_gap, domain_gap_auto, DomainGapRow, GapAudit, GapCheck, PublishedGap, ScoreScale,
    PUBLISHED_GAPS,
};
pub use metrics::{accuracy, macro_f1, metrics, MetricPair};

use std::fmt::Write as _;

use crate::algorithms::AlgorithmId;
use crate::selection::RiskType;
use crate::sweep::BenchmarkTable;

/// Rendered report files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedReport {
    /// Dataset × risk rows, one column per method.
    pub summary_md: String,
    pub summary_csv: String,
    /// Per-scenario mean ± std, one block per dataset.
    pub detail_md: String,
    /// Long format: one line per (dataset, method, risk, scenario).
    pub detail_csv: String,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

fn pct_pm(v: Option<(f64, f64)>) -> String {
    v.map_or_else(|| "-".into(), |(m, s)| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

/// Deterministic tables over any set of aggregates. Methods appear in
/// registry order, datasets alphabetically, risks as SRC, DEV, FST, TGT.
pub fn render_report(tables: &[BenchmarkTable]) -> RenderedReport {
    let mut algs: Vec<AlgorithmId> = tables.iter().map(|t| t.algorithm).collect();
    algs.sort();
    algs.dedup();
    let mut datasets: Vec<&str> = tables.iter().map(|t| t.dataset.as_str()).collect();
    datasets.sort();
    datasets.dedup();

    let mut header = vec!["Dataset".to_string(), "Risk".to_string()];
    header.extend(algs.iter().map(|a| a.display_name().to_string()));
    header.push("Avg/Risk".into());
    let mut summary_md = String::from("# Target macro-F1 of selected models (%)\n\n");
    summary_md.push_str(&md_row(&header));
    summary_md.push_str(&md_rule(header.len()));
    let mut summary_csv = header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",") + "\n";

    let mut detail_md = String::from("# Per-scenario target macro-F1 (%), mean ± std over seeds\n");
    let mut detail_csv = String::from("dataset,algorithm,risk,scenario,f1_mean,f1_std\n");

    for ds in &datasets {
        let mine: Vec<&BenchmarkTable> = tables.iter().filter(|t| t.dataset == *ds).collect();
        for risk in RiskType::ALL {
            if !mine.iter().any(|t| t.rows.iter().any(|r| r.risk == risk)) {
                continue;
            }
            let vals: Vec<Option<f64>> = algs
                .iter()
                .map(|a| {
                    let t = mine.iter().find(|t| t.algorithm == *a)?;
                    t.rows.iter().find(|r| r.risk == risk)?.average
                })
                .collect();
            let present: Vec<f64> = vals.iter().flatten().copied().collect();
            let avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            let mut cells = vec![ds.to_string(), risk.to_string()];
            cells.extend(vals.iter().map(|v| pct(*v)));
            cells.push(pct(avg));
            summary_md.push_str(&md_row(&cells));
            summary_csv.push_str(&(cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",") + "\n"));
        }

        let mut sorted = mine.clone();
        sorted.sort_by_key(|t| t.algorithm);
        for t in sorted {
            let _ = write!(
                detail_md,
                "\n## {} / {} ({})\n\n",
                t.dataset,
                t.algorithm.display_name(),
                t.backbone
            );
            let mut h = vec!["Algorithm".to_string(), "Risk".to_string()];
            h.extend(t.scenarios.iter().cloned());
            h.push("Average".into());
            detail_md.push_str(&md_row(&h));
            detail_md.push_str(&md_rule(h.len()));
            for row in &t.rows {
                let mut cells = vec![t.algorithm.display_name().to_string(), row.risk.to_string()];
                cells.extend(row.per_scenario.iter().map(|p| pct_pm(*p)));
                cells.push(pct(row.average));
                detail_md.push_str(&md_row(&cells));
                for (sc, p) in t.scenarios.iter().zip(&row.per_scenario) {
                    let (m, s) = p.map_or(("".into(), "".into()), |(m, s)| {
                        (format!("{:.4}", 100.0 * m), format!("{:.4}", 100.0 * s))
                    });
                    let _ = writeln!(
                        detail_csv,
                        "{},{},{},{},{m},{s}",
                        csv_field(&t.dataset),
                        t.algorithm,
                        row.risk,
                        csv_field(sc)
                    );
                }
            }
        }
    }
    RenderedReport {
        summary_md,
        summary_csv,
        detail_md,
        detail_csv,
    }
}

/// Measured gaps plus the recomputed published figures, with every
/// printed gap that disagrees with its bounds called out.
pub fn render_gaps(measured: &[DomainGapRow]) -> String {
    let mut out = String::from("# Domain gap (target-only minus source-only, %)\n\n");
    out.push_str(&md_row(&[
        "Dataset".into(),
        "Target-only".into(),
        "Source-only".into(),
        "Gap".into(),
    ]));
    out.push_str(&md_rule(4));
    for r in measured {
        let f = |v: f64| match r.scale {
            ScoreScale::Ratio => format!("{:.2}", 100.0 * v),
            ScoreScale::Percent => format!("{v:.2}"),
        };
        out.push_str(&md_row(&[r.dataset.clone(), f(r.target_only), f(r.source_only), f(r.gap)]));
    }
    out.push_str("\n## Published bounds, recomputed\n\n");
    out.push_str(&md_row(&[
        "Dataset".into(),
        "Target-only".into(),
        "Source-only".into(),
        "Printed gap".into(),
        "Recomputed gap".into(),
        "Check".into(),
    ]));
    out.push_str(&md_rule(6));
    let audits = audit_published_gaps();
    let mut notes = Vec::new();
    for (p, a) in PUBLISHED_GAPS.iter().zip(&audits) {
        let check = match a.check {
            GapCheck::Exact => "ok".to_string(),
            GapCheck::Rounding => {
                notes.push(format!(
                    "{}: printed {:.2}, bounds give {:.2} (rounding).",
                    a.dataset, a.printed_gap, a.recomputed_gap
                ));
                format!("rounding [^{}]", notes.len())
            }
            GapCheck::Inconsistent => {
                notes.push(format!(
                    "{}: printed gap {:.2} does not equal {:.2} - {:.2} = {:.2}.",
                    a.dataset, a.printed_gap, p.target_only, p.source_only, a.recomputed_gap
                ));
                format!("INCONSISTENT [^{}]", notes.len())
            }
        };
        out.push_str(&md_row(&[
            a.dataset.clone(),
            format!("{:.2}", p.target_only),
            format!("{:.2}", p.source_only),
            format!("{:.2}", a.printed_gap),
            format!("{:.2}", a.recomputed_gap),
            check,
        ]));
    }
    if !notes.is_empty() {
        out.push('\n');
        for (i, n) in notes.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: {n}", i + 1);
        }
    }
    out
}

#[cfg(test)]
mod tests;
