//! Browser bindings for three small operations of `softcal`.
//!
//! Each operation has a plain Rust entry point returning JSON (tested natively)
//! and a `#[wasm_bindgen]` wrapper that turns errors into JS exceptions.

use serde::Serialize;
use serde_json::json;
use softcal::calib::Distance;
use softcal::diff::Tape;
use softcal::harness::{ensemble_stats, mean_deduction, std_deduction, EnsembleStats};
use softcal::rouge::{metric_tokens, rouge_suite, RougeScore};
use wasm_bindgen::prelude::*;

fn prf(s: &RougeScore) -> serde_json::Value {
    json!({ "precision": s.precision, "recall": s.recall, "f1": s.f1 })
}

/// ROUGE-1/2/L of `candidate` against `reference`.
pub fn rouge_json(reference: &str, candidate: &str) -> String {
    let s = rouge_suite(reference, candidate);
    json!({
        "reference_tokens": metric_tokens(reference),
        "candidate_tokens": metric_tokens(candidate),
        "rouge1": prf(&s.r1),
        "rouge2": prf(&s.r2),
        "rougeL": prf(&s.rl),
    })
    .to_string()
}

/// Numbers separated by commas, whitespace or newlines.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

#[derive(Serialize)]
struct Variance {
    baseline: EnsembleStats,
    spec: EnsembleStats,
    mean_deduction_pct: Option<f64>,
    std_deduction_pct: Option<f64>,
}

/// Mean and sample std of two per-prompt score lists, plus both deductions.
/// A deduction is `null` when its baseline denominator is zero.
pub fn variance_json(baseline: &str, spec: &str) -> Result<String, String> {
    let b = parse_numbers(baseline)?;
    let s = parse_numbers(spec)?;
    if b.len() != s.len() {
        return Err(format!("arms differ in length: {} vs {}", b.len(), s.len()));
    }
    let bs = ensemble_stats(&b).map_err(|e| e.to_string())?;
    let ss = ensemble_stats(&s).map_err(|e| e.to_string())?;
    let out = Variance {
        mean_deduction_pct: mean_deduction(bs.mean, ss.mean).ok(),
        std_deduction_pct: std_deduction(bs.std, ss.std).ok(),
        baseline: bs,
        spec: ss,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn distance_with_grad(d: Distance, p: &[f64], q: &[f64]) -> softcal::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let pv = tape.constant(vec![p.len()], p.to_vec())?;
    let qv = tape.input(vec![q.len()], q.to_vec(), true)?;
    let loss = d.apply(&mut tape, pv, qv)?;
    tape.backward(loss)?;
    Ok((tape.scalar(loss), tape.grad(qv).map(<[f64]>::to_vec).unwrap_or_default()))
}

/// Both calibration distances between two embeddings, with the gradient of
/// each with respect to `q`.
pub fn distance_json(p: &str, q: &str) -> Result<String, String> {
    let p = parse_numbers(p)?;
    let q = parse_numbers(q)?;
    if p.is_empty() || p.len() != q.len() {
        return Err(format!("need two non-empty vectors of equal length, got {} and {}", p.len(), q.len()));
    }
    let mut out = serde_json::Map::new();
    for d in [Distance::Mse, Distance::CrossEntropy] {
        let (value, grad) = distance_with_grad(d, &p, &q).map_err(|e| e.to_string())?;
        out.insert(d.name().to_string(), json!({ "value": value, "grad_q": grad }));
    }
    Ok(serde_json::Value::Object(out).to_string())
}

#[wasm_bindgen]
pub fn score_rouge(reference: &str, candidate: &str) -> String {
    rouge_json(reference, candidate)
}

#[wasm_bindgen]
pub fn ensemble_variance(baseline: &str, spec: &str) -> Result<String, JsValue> {
    variance_json(baseline, spec).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn embedding_distance(p: &str, q: &str) -> Result<String, JsValue> {
    distance_json(p, q).map_err(|e| JsValue::from_str(&e))
}
