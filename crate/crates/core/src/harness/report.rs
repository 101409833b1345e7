//! Report emission: one markdown file plus CSVs with stable headers, all
//! recomputed from the log so they are deterministic given the records.

use std::fmt::Write as _;
use std::path::Path;

use crate::metrics::{Gap, RunReport, ScalingCurve};

/// Formats percent tenths with one decimal ("66.0").
pub fn fmt_tenths(tenths: i64) -> String {
    format!("{}.{}", tenths / 10, (tenths % 10).abs())
}

fn cell(value: Option<i64>) -> String {
    value.map(fmt_tenths).unwrap_or_else(|| "-".to_string())
}

pub fn render_markdown(report: &RunReport, gaps: &[Gap], corrupt_lines: usize) -> String {
    let mut out = String::new();
    out.push_str("# Run report\n\n");
    if corrupt_lines > 0 {
        let _ = writeln!(out, "> warning: {corrupt_lines} corrupt log line(s) were skipped\n");
    }
    if !gaps.is_empty() {
        let _ = writeln!(out, "> warning: {} missing cell(s); metrics cover the rest\n", gaps.len());
    }

    out.push_str("## Accuracy (%)\n\n");
    out.push_str("| Method |");
    for b in &report.benchmarks {
        let _ = write!(out, " {} |", b.benchmark);
    }
    out.push_str("\n|---|");
    for _ in &report.benchmarks {
        out.push_str("---|");
    }
    out.push('\n');
    let k = report.benchmarks.first().map_or(4, |b| b.k);
    let rows: [(&str, fn(&crate::metrics::BenchmarkReport) -> Option<i64>); 5] = [
        ("pass@1", |b| b.pass1_tenths),
        ("maj@k", |b| b.majority_tenths),
        ("BoN@k", |b| b.bon_tenths),
        ("selfRef@k", |b| b.self_refine_tenths),
        ("oracle pass@k", |b| b.oracle_tenths),
    ];
    for (label, get) in rows {
        let label = label.replace('k', &k.to_string());
        let _ = write!(out, "| {label} |");
        for b in &report.benchmarks {
            let _ = write!(out, " {} |", cell(get(b)));
        }
        out.push('\n');
    }
    out.push('\n');

    for b in &report.benchmarks {
        if b.buckets.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            "## Conditional accuracy by number of correct candidates: {}\n",
            b.benchmark
        );
        out.push_str("| n_correct | correct | wrong | ratio (%) | total |\n");
        out.push_str("|---|---|---|---|---|\n");
        for bucket in &b.buckets {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                bucket.n_correct,
                bucket.correct,
                bucket.wrong,
                fmt_tenths(bucket.ratio_tenths),
                bucket.total
            );
        }
        out.push('\n');
    }

    let has_tokens = report.benchmarks.iter().any(|b| b.token_stats.is_some());
    if has_tokens {
        out.push_str("## Token composition\n\n");
        out.push_str("| Benchmark | mean total | mean thinking | mean summary | summary share (%) | counted | skipped |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for b in &report.benchmarks {
            if let Some(t) = &b.token_stats {
                let _ = writeln!(
                    out,
                    "| {} | {:.1} | {:.1} | {:.1} | {} | {} | {} |",
                    b.benchmark,
                    t.mean_total,
                    t.mean_thinking,
                    t.mean_summary,
                    fmt_tenths(t.summary_share_tenths),
                    t.counted,
                    t.skipped_missing_split
                );
            }
        }
        out.push('\n');
    }
    out
}

/// `summary.csv`: benchmark,metric,k,percent
pub fn render_summary_csv(report: &RunReport) -> String {
    let mut out = String::from("benchmark,metric,k,percent\n");
    for b in &report.benchmarks {
        let mut push = |metric: &str, value: Option<i64>| {
            if let Some(t) = value {
                let _ = writeln!(out, "{},{},{},{}", b.benchmark, metric, b.k, fmt_tenths(t));
            }
        };
        push("pass1", b.pass1_tenths);
        push("majority", b.majority_tenths);
        push("bon", b.bon_tenths);
        push("self_refine", b.self_refine_tenths);
        push("oracle", b.oracle_tenths);
    }
    out
}

/// `buckets.csv`: benchmark,n_correct,correct,wrong,total,ratio_percent
pub fn render_buckets_csv(report: &RunReport) -> String {
    let mut out = String::from("benchmark,n_correct,correct,wrong,total,ratio_percent\n");
    for b in &report.benchmarks {
        for bucket in &b.buckets {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                b.benchmark,
                bucket.n_correct,
                bucket.correct,
                bucket.wrong,
                bucket.total,
                fmt_tenths(bucket.ratio_tenths)
            );
        }
    }
    out
}

/// `curve.csv`: strategy,k,accuracy_percent
pub fn render_curve_csv(curve: &ScalingCurve) -> String {
    let mut out = String::from("strategy,k,accuracy_percent\n");
    for (strategy, points) in &curve.points {
        for (k, tenths) in points {
            let _ = writeln!(out, "{},{},{}", strategy_slug(*strategy), k, fmt_tenths(*tenths));
        }
    }
    out
}

fn strategy_slug(s: crate::strategies::StrategyKind) -> &'static str {
    use crate::strategies::StrategyKind::*;
    match s {
        Pass1 => "pass1",
        PasskOracle => "passk_oracle",
        Majority => "majority",
        BonScalar => "bon_scalar",
        BonKnockout => "bon_knockout",
        SelfRefine => "self_refine",
        Hierarchical => "hierarchical",
    }
}

/// Writes report.md, summary.csv and buckets.csv into `dir`.
pub fn write_reports(
    dir: &Path,
    report: &RunReport,
    gaps: &[Gap],
    corrupt_lines: usize,
) -> std::io::Result<()> {
    std::fs::write(dir.join("report.md"), render_markdown(report, gaps, corrupt_lines))?;
    std::fs::write(dir.join("summary.csv"), render_summary_csv(report))?;
    std::fs::write(dir.join("buckets.csv"), render_buckets_csv(report))?;
    Ok(())
}
