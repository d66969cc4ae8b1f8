use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::EvaluationRun;
use super::stats::{ensemble_stats, mean_deduction, std_deduction};
use crate::error::{Error, Result};
use crate::rouge::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub variant: Variant,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub spec_mean: f64,
    pub spec_std: f64,
    /// `None` when the baseline mean is 0.
    pub mean_deduction_pct: Option<f64>,
    /// `None` when the baseline std is 0.
    pub std_deduction_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Free-form case label, e.g. the soft token setting.
    pub case: String,
    pub rows: Vec<VarianceRow>,
}

pub fn compare_runs(baseline: &EvaluationRun, spec: &EvaluationRun, case: &str) -> Result<VarianceReport> {
    if baseline.ensemble_digest != spec.ensemble_digest || baseline.prompts != spec.prompts {
        return Err(Error::contract("runs were evaluated on different prompt ensembles"));
    }
    if baseline.corpus_digest != spec.corpus_digest {
        return Err(Error::contract("runs were evaluated on different corpora"));
    }
    let mut rows = Vec::with_capacity(3);
    for (k, variant) in Variant::ALL.into_iter().enumerate() {
        let b: Vec<f64> = baseline.per_prompt_scores.iter().map(|s| s[k]).collect();
        let s: Vec<f64> = spec.per_prompt_scores.iter().map(|s| s[k]).collect();
        let (b, s) = (ensemble_stats(&b)?, ensemble_stats(&s)?);
        rows.push(VarianceRow {
            variant,
            baseline_mean: b.mean,
            baseline_std: b.std,
            spec_mean: s.mean,
            spec_std: s.std,
            mean_deduction_pct: mean_deduction(b.mean, s.mean).ok(),
            std_deduction_pct: std_deduction(b.std, s.std).ok(),
        });
    }
    Ok(VarianceReport {
        case: case.to_string(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(Error::contract(format!("unknown report format {other:?}"))),
        }
    }
}

pub const COLUMNS: [&str; 8] = [
    "case",
    "variant",
    "baseline_mean",
    "baseline_std",
    "spec_mean",
    "spec_std",
    "mean_deduction_pct",
    "std_deduction_pct",
];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

fn cells(case: &str, r: &VarianceRow) -> [String; 8] {
    [
        case.to_string(),
        r.variant.label().to_string(),
        format!("{:.4}", r.baseline_mean),
        format!("{:.4}", r.baseline_std),
        format!("{:.4}", r.spec_mean),
        format!("{:.4}", r.spec_std),
        pct(r.mean_deduction_pct),
        pct(r.std_deduction_pct),
    ]
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn emit_report(reports: &[VarianceReport], format: ReportFormat) -> Vec<u8> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for rep in reports {
                for row in &rep.rows {
                    let line: Vec<String> = cells(&rep.case, row).iter().map(|c| csv_field(c)).collect();
                    out.push_str(&line.join(","));
                    out.push('\n');
                }
            }
        }
        ReportFormat::Markdown => {
            out.push_str(&format!("| {} |\n", COLUMNS.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
            for rep in reports {
                for row in &rep.rows {
                    let c = cells(&rep.case.replace('|', "\\|"), row);
                    out.push_str(&format!("| {} |\n", c.join(" | ")));
                }
            }
        }
    }
    out.into_bytes()
}

/// One parsed CSV data row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub case: String,
    pub variant: String,
    pub values: [f64; 4],
    pub mean_deduction_pct: Option<f64>,
    pub std_deduction_pct: Option<f64>,
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Reads back what [`emit_report`] writes in CSV form.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::contract("empty CSV report"))?;
    if header != COLUMNS.join(",") {
        return Err(Error::contract(format!("unexpected CSV header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::contract(format!("bad number {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>> { if s == "n/a" { Ok(None) } else { num(s).map(Some) } };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f = split_csv_line(l);
            if f.len() != COLUMNS.len() {
                return Err(Error::contract(format!("CSV row has {} fields: {l:?}", f.len())));
            }
            Ok(CsvRow {
                case: f[0].clone(),
                variant: f[1].clone(),
                values: [num(&f[2])?, num(&f[3])?, num(&f[4])?, num(&f[5])?],
                mean_deduction_pct: opt(&f[6])?,
                std_deduction_pct: opt(&f[7])?,
            })
        })
        .collect()
}
