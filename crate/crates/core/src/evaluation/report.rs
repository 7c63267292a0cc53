use serde::Serialize;

use crate::evaluation::{AblationTable, ImportanceReport, MeanStd, MetricReport, ModelComparison, SeedSummary};

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Columns padded to their widest cell; the first column is left-aligned,
/// the rest right-aligned.
pub fn aligned_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = " ".repeat(w - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

const METRIC_HEADERS: [&str; 8] = ["Model", "MSE", "MAE", "R²", "±0.1 (%)", "CRPS", "Cov95 (%)", "N"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn metric_row(name: &str, r: &MetricReport) -> Vec<String> {
    vec![
        name.into(),
        format!("{:.4}", r.mse),
        format!("{:.4}", r.mae),
        opt(r.r2),
        format!("{:.2}", r.clinical_accuracy),
        format!("{:.4}", r.crps),
        format!("{:.2}", r.coverage95),
        r.n_samples.to_string(),
    ]
}

pub fn comparison_text(model_name: &str, cmp: &ModelComparison) -> String {
    aligned_table(
        &METRIC_HEADERS,
        &[metric_row(model_name, &cmp.model), metric_row("Constant mean", &cmp.baseline)],
    )
}

fn pm(v: &MeanStd, digits: usize) -> String {
    match v.std {
        Some(s) => format!("{:.*} ± {:.*}", digits, v.mean, digits, s),
        None => format!("{:.*}", digits, v.mean),
    }
}

pub fn seed_summary_text(model_name: &str, summary: &SeedSummary) -> String {
    let row = |name: &str, s: &crate::evaluation::SummaryRow| {
        vec![
            name.to_string(),
            pm(&s.mse, 4),
            pm(&s.mae, 4),
            s.r2.as_ref().map_or_else(|| "n/a".into(), |r| pm(r, 4)),
            pm(&s.clinical_accuracy, 2),
            pm(&s.crps, 4),
            pm(&s.coverage95, 2),
        ]
    };
    let seeds: Vec<String> = summary.seeds.iter().map(u64::to_string).collect();
    let mut out = format!("Seeds: {}\n\n", seeds.join(", "));
    out.push_str(&aligned_table(
        &METRIC_HEADERS[..7],
        &[row(model_name, &summary.model), row("Constant mean", &summary.baseline)],
    ));
    out.push('\n');
    let per_seed: Vec<Vec<String>> = summary
        .per_seed
        .iter()
        .map(|r| {
            let mut cells = metric_row(&r.seed.to_string(), &r.model);
            cells.pop();
            cells
        })
        .collect();
    let mut headers = METRIC_HEADERS[..7].to_vec();
    headers[0] = "Seed";
    out.push_str(&aligned_table(&headers, &per_seed));
    out
}

pub fn ablation_text(table: &AblationTable) -> String {
    let mut rows = vec![vec!["(none)".to_string(), format!("{:.4}", table.baseline.mse), "".into()]];
    rows.extend(
        table
            .rows
            .iter()
            .map(|r| vec![r.group.name().to_string(), format!("{:.4}", r.report.mse), format!("{:+.4}", r.delta_mse)]),
    );
    format!("Seed: {}\n\n{}", table.seed, aligned_table(&["Removed group", "MSE", "ΔMSE"], &rows))
}

pub fn importance_text(reports: &[ImportanceReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.group.name().to_string(),
                format!("{:.4}", r.mse),
                format!("{:.4}", r.permuted_mse),
                format!("{:+.4}", r.delta_mse),
            ]
        })
        .collect();
    aligned_table(&["Permuted group", "MSE", "Permuted MSE", "ΔMSE"], &rows)
}
