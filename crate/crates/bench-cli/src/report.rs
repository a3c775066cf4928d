//! `report`: mean and standard error per (method, dataset).

use std::fmt::Write as _;

use crossnet::dataio::RunResult;

use crate::error::CliError;

pub const METRICS: [&str; 5] = [
    "pehe_in",
    "pehe_out",
    "policy_risk_in",
    "policy_risk_out",
    "ate_err",
];

fn metric(r: &RunResult, name: &str) -> Option<f64> {
    match name {
        "pehe_in" => r.pehe_in,
        "pehe_out" => r.pehe_out,
        "policy_risk_in" => r.policy_risk_in,
        "policy_risk_out" => r.policy_risk_out,
        "ate_err" => r.ate_err,
        _ => None,
    }
}

/// Mean and standard error (sample sd over √n); `se` is absent for n = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub se: Option<f64>,
    pub n: usize,
}

pub fn mean_se(values: &[f64]) -> Option<Stat> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Some(Stat { mean, se, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    /// Rows with at least one metric.
    pub runs: usize,
    pub failed: usize,
    pub fingerprints: Vec<String>,
    /// One entry per name in [`METRICS`].
    pub stats: Vec<Option<Stat>>,
}

impl SummaryRow {
    pub fn stat(&self, name: &str) -> Option<Stat> {
        METRICS
            .iter()
            .position(|m| *m == name)
            .and_then(|i| self.stats[i])
    }
}

/// Group rows by (method, dataset) in order of first appearance. Groups
/// mixing config fingerprints are refused unless `force` is set.
pub fn summarize(rows: &[RunResult], force: bool) -> Result<Vec<SummaryRow>, CliError> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.dataset.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::with_capacity(keys.len());
    for (method, dataset) in keys {
        let group: Vec<&RunResult> = rows
            .iter()
            .filter(|r| r.method == method && r.dataset == dataset)
            .collect();
        let mut fingerprints: Vec<String> = Vec::new();
        for r in &group {
            if !fingerprints.contains(&r.config_hash) {
                fingerprints.push(r.config_hash.clone());
            }
        }
        if fingerprints.len() > 1 && !force {
            return Err(CliError::config(format!(
                "{method} on {dataset} mixes config fingerprints {}; rerun with --force to aggregate anyway",
                fingerprints.join(", ")
            )));
        }
        let ok: Vec<&&RunResult> = group.iter().filter(|r| r.has_metric()).collect();
        let stats = METRICS
            .iter()
            .map(|m| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| metric(r, m)).collect();
                mean_se(&vals)
            })
            .collect();
        out.push(SummaryRow {
            method,
            dataset,
            runs: ok.len(),
            failed: group.len() - ok.len(),
            fingerprints,
            stats,
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUMMARY_HEADER: &str = "method,dataset,runs,failed,config_hash,pehe_in_mean,pehe_in_se,pehe_out_mean,pehe_out_se,policy_risk_in_mean,policy_risk_in_se,policy_risk_out_mean,policy_risk_out_se,ate_err_mean,ate_err_se";

pub fn render_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for row in summary {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            row.method,
            row.dataset,
            row.runs,
            row.failed,
            row.fingerprints.join(";")
        );
        for st in &row.stats {
            let _ = write!(
                s,
                ",{},{}",
                fmt_opt(st.map(|x| x.mean)),
                fmt_opt(st.and_then(|x| x.se))
            );
        }
        s.push('\n');
    }
    s
}

/// Aligned text table showing only metrics present somewhere.
pub fn render_table(summary: &[SummaryRow]) -> String {
    let shown: Vec<usize> = (0..METRICS.len())
        .filter(|&i| summary.iter().any(|r| r.stats[i].is_some()))
        .collect();
    let mut header = vec![
        "method".to_string(),
        "dataset".into(),
        "runs".into(),
        "failed".into(),
    ];
    header.extend(shown.iter().map(|&i| METRICS[i].to_string()));
    let mut table = vec![header];
    for r in summary {
        let mut line = vec![
            r.method.clone(),
            r.dataset.clone(),
            r.runs.to_string(),
            r.failed.to_string(),
        ];
        for &i in &shown {
            line.push(match r.stats[i] {
                Some(Stat {
                    mean, se: Some(se), ..
                }) => format!("{mean:.4} ± {se:.4}"),
                Some(Stat { mean, se: None, .. }) => format!("{mean:.4}"),
                None => "-".into(),
            });
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| {
            table
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    for line in &table {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}", w = *w))
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, pehe: Option<f64>, hash: &str) -> RunResult {
        RunResult {
            method: method.into(),
            dataset: "d".into(),
            rep: 1,
            seed: 0,
            pehe_in: None,
            pehe_out: pehe,
            policy_risk_in: None,
            policy_risk_out: None,
            ate_err: None,
            wall_seconds: 0.5,
            config_hash: hash.into(),
        }
    }

    #[test]
    fn single_row_has_no_standard_error() {
        let s = summarize(&[row("A", Some(1.7), "h")], false).unwrap();
        assert_eq!(
            s[0].stat("pehe_out"),
            Some(Stat {
                mean: 1.7,
                se: None,
                n: 1
            })
        );
    }

    #[test]
    fn two_rows_mean_two_se_one() {
        let s = summarize(&[row("A", Some(1.0), "h"), row("A", Some(3.0), "h")], false).unwrap();
        let st = s[0].stat("pehe_out").unwrap();
        assert_eq!(st.mean, 2.0);
        assert!((st.se.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn failures_are_counted_not_averaged() {
        let s = summarize(&[row("A", Some(1.0), "h"), row("A", None, "h")], false).unwrap();
        assert_eq!((s[0].runs, s[0].failed), (1, 1));
        assert_eq!(s[0].stat("pehe_out").unwrap().mean, 1.0);
    }

    #[test]
    fn mixed_fingerprints_need_force() {
        let rows = [
            row("A", Some(1.0), "h1"),
            row("A", Some(2.0), "h2"),
            row("B", Some(2.0), "h3"),
        ];
        assert_eq!(summarize(&rows, false).unwrap_err().exit_code(), 2);
        let s = summarize(&rows, true).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].fingerprints.len(), 2);
    }

    #[test]
    fn renderings_list_every_group() {
        let s = summarize(&[row("A", Some(1.0), "h"), row("B", Some(3.0), "g")], false).unwrap();
        let csv = render_csv(&s);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("A,d,1,0,h,,,1,"));
        let table = render_table(&s);
        assert!(table.lines().next().unwrap().contains("pehe_out"));
        assert!(!table.contains("policy_risk"));
    }
}
