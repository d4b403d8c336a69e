//! Aggregation over seeds and rendering as CSV, JSON or a text table.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub method: String,
    pub sweep: String,
    pub seed: u64,
    pub status: String,
    pub final_accuracy: Option<f64>,
    pub error: String,
}

/// Accuracy over seeds for one (method, sweep point), in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub sweep: String,
    pub n: usize,
    pub mean: f64,
    /// Twice the sample standard deviation; `None` for a single seed.
    pub two_sigma: Option<f64>,
}

impl SummaryRow {
    pub fn mean_text(&self) -> String {
        format!("{:.2}", self.mean)
    }

    pub fn two_sigma_text(&self) -> String {
        self.two_sigma.map(|s| format!("{s:.2}")).unwrap_or_default()
    }

    /// `mean ± 2σ`, or the bare mean for a single seed.
    pub fn display(&self) -> String {
        match self.two_sigma {
            Some(_) => format!("{} ± {}", self.mean_text(), self.two_sigma_text()),
            None => self.mean_text(),
        }
    }
}

/// Mean and `2·s` (sample std, `n − 1`) of `values`, in the same units.
pub fn mean_two_sigma(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(2.0 * var.sqrt()))
}

/// Groups successful runs by (method, sweep) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<((String, String), Vec<f64>)> = Vec::new();
    for r in records {
        let Some(acc) = r.final_accuracy.filter(|_| r.status == "ok") else {
            continue;
        };
        let key = (r.method.clone(), r.sweep.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(100.0 * acc),
            None => groups.push((key, vec![100.0 * acc])),
        }
    }
    groups
        .into_iter()
        .map(|((method, sweep), accs)| {
            let (mean, two_sigma) = mean_two_sigma(&accs);
            SummaryRow {
                method,
                sweep,
                n: accs.len(),
                mean,
                two_sigma,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "text" | "table" => Ok(Format::Text),
            other => Err(CliError::Argument(format!(
                "unknown report format `{other}` (expected csv, json or text)"
            ))),
        }
    }
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["method", "sweep", "n", "mean", "two_sigma"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.sweep.clone(),
            r.n.to_string(),
            r.mean_text(),
            r.two_sigma_text(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    sweep: &'a str,
    n: usize,
    mean: f64,
    two_sigma: Option<f64>,
}

fn round2(v: f64) -> f64 {
    // Parse the 2-decimal text so JSON and CSV carry the same numbers.
    format!("{v:.2}").parse().expect("formatted float parses")
}

pub fn render(rows: &[SummaryRow], format: Format) -> Result<String> {
    if rows.is_empty() {
        return Err(CliError::Argument("summary is empty".into()));
    }
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, rows)?;
            String::from_utf8(buf).expect("csv output is utf-8")
        }
        Format::Json => {
            let json: Vec<JsonRow> = rows
                .iter()
                .map(|r| JsonRow {
                    method: &r.method,
                    sweep: &r.sweep,
                    n: r.n,
                    mean: round2(r.mean),
                    two_sigma: r.two_sigma.map(round2),
                })
                .collect();
            serde_json::to_string_pretty(&json)? + "\n"
        }
        Format::Text => {
            let mw = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
            let sw = rows.iter().map(|r| r.sweep.len()).max().unwrap_or(0).max(5);
            let mut s = format!("{:<mw$}  {:<sw$}  {:>3}  accuracy (%)\n", "method", "sweep", "n");
            for r in rows {
                s += &format!("{:<mw$}  {:<sw$}  {:>3}  {}\n", r.method, r.sweep, r.n, r.display());
            }
            s
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, seed: u64, acc: Option<f64>) -> RunRecord {
        RunRecord {
            cell: format!("{method}.seed{seed}"),
            method: method.into(),
            sweep: "-".into(),
            seed,
            status: if acc.is_some() { "ok" } else { "failed" }.into(),
            final_accuracy: acc,
            error: String::new(),
        }
    }

    #[test]
    fn identical_accuracies_have_zero_spread() {
        let rows = summarize(&[rec("a", 0, Some(0.9)), rec("a", 1, Some(0.9)), rec("a", 2, Some(0.9))]);
        assert_eq!(rows[0].display(), "90.00 ± 0.00");
    }

    #[test]
    fn two_sigma_uses_sample_std() {
        let rows = summarize(&[rec("a", 0, Some(0.8)), rec("a", 1, Some(1.0))]);
        assert_eq!(rows[0].mean_text(), "90.00");
        assert_eq!(rows[0].two_sigma_text(), "28.28");
    }

    #[test]
    fn single_seed_leaves_sigma_empty() {
        let rows = summarize(&[rec("a", 0, Some(0.75)), rec("b", 0, None)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].two_sigma, None);
        let csv = render(&rows, Format::Csv).unwrap();
        assert_eq!(csv, "method,sweep,n,mean,two_sigma\na,-,1,75.00,\n");
        assert!(render(&rows, Format::Json).unwrap().contains("\"two_sigma\": null"));
    }

    #[test]
    fn json_and_csv_agree() {
        let rows = summarize(&[
            rec("fixmatch", 0, Some(0.8123)),
            rec("fixmatch", 1, Some(0.9311)),
            rec("layermatch", 0, Some(0.95)),
            rec("layermatch", 1, Some(0.97)),
        ]);
        let json: serde_json::Value = serde_json::from_str(&render(&rows, Format::Json).unwrap()).unwrap();
        let csv = render(&rows, Format::Csv).unwrap();
        for (i, line) in csv.lines().skip(1).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(json[i]["method"], f[0]);
            assert_eq!(json[i]["mean"].as_f64().unwrap(), f[3].parse::<f64>().unwrap());
            assert_eq!(json[i]["two_sigma"].as_f64().unwrap(), f[4].parse::<f64>().unwrap());
        }
        let text = render(&rows, Format::Text).unwrap();
        assert!(text.contains("96.00 ± 2.83"));
    }

    #[test]
    fn unknown_format_and_empty_summary() {
        assert!("xml".parse::<Format>().is_err());
        assert!(render(&[], Format::Csv).is_err());
    }
}
