//! Pearson correlation, score clipping and per-language-pair reporting.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{ArticleRecord, SCORE_MAX, SCORE_MIN};

/// Why a Pearson coefficient could not be computed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PearsonError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples, got {n}")]
    TooShort { n: usize },
    #[error("{side} series has zero variance")]
    ZeroVariance { side: &'static str },
}

/// Sample Pearson correlation coefficient, computed with the two-pass
/// (mean-subtracted) formula.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, PearsonError> {
    if xs.len() != ys.len() {
        return Err(PearsonError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(PearsonError::TooShort { n: xs.len() });
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(PearsonError::ZeroVariance { side: "first" });
    }
    if var_y == 0.0 {
        return Err(PearsonError::ZeroVariance { side: "second" });
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Clamps a single score into `[lo, hi]`.
pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    x.min(hi).max(lo)
}

/// Elementwise clamp into `[lo, hi]`; the annotation range is the default.
pub fn clip_scores(preds: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    assert!(lo < hi, "clip bounds must satisfy lo < hi");
    preds.iter().map(|&x| clip(x, lo, hi)).collect()
}

/// [`clip_scores`] with the `[1, 4]` annotation bounds.
pub fn clip_to_score_range(preds: &[f64]) -> Vec<f64> {
    clip_scores(preds, SCORE_MIN, SCORE_MAX)
}

/// Pearson statistics for one language-pair group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub count: usize,
    /// `None` when the group has fewer than 2 samples or zero variance.
    pub pearson: Option<f64>,
}

/// One scored prediction row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub pair_id: String,
    pub predicted_overall: f64,
    pub gold_overall: f64,
}

/// Evaluation summary across all records plus a per-language-pair split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall_pearson: Option<f64>,
    pub per_pair: BTreeMap<String, GroupStats>,
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions do not cover the records: missing {missing:?}, extra {extra:?}")]
    CoverageMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
}

/// Groups records by canonical language-pair tag and computes Pearson per
/// group and overall. `predictions` must cover exactly the given records.
pub fn per_pair_report(
    records: &[ArticleRecord],
    predictions: &[(String, f64)],
) -> Result<EvalReport, EvalError> {
    let record_ids: BTreeSet<&str> = records.iter().map(|r| r.pair_id.as_str()).collect();
    let prediction_map: BTreeMap<&str, f64> = predictions
        .iter()
        .map(|(id, v)| (id.as_str(), *v))
        .collect();

    let missing: Vec<String> = record_ids
        .iter()
        .filter(|id| !prediction_map.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    let extra: Vec<String> = prediction_map
        .keys()
        .filter(|id| !record_ids.contains(**id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::CoverageMismatch { missing, extra });
    }

    let mut rows = Vec::with_capacity(records.len());
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for record in records {
        let predicted = prediction_map[record.pair_id.as_str()];
        let gold = record.scores.overall;
        rows.push(PredictionRow {
            pair_id: record.pair_id.clone(),
            predicted_overall: predicted,
            gold_overall: gold,
        });
        let entry = groups.entry(record.lang_pair_tag()).or_default();
        entry.0.push(predicted);
        entry.1.push(gold);
    }

    let per_pair = groups
        .into_iter()
        .map(|(tag, (preds, golds))| {
            let stats = GroupStats {
                count: preds.len(),
                pearson: pearson(&preds, &golds).ok(),
            };
            (tag, stats)
        })
        .collect();

    let all_preds: Vec<f64> = rows.iter().map(|r| r.predicted_overall).collect();
    let all_golds: Vec<f64> = rows.iter().map(|r| r.gold_overall).collect();
    Ok(EvalReport {
        overall_pearson: pearson(&all_preds, &all_golds).ok(),
        per_pair,
        predictions: rows,
    })
}

/// Formats a coefficient the way results tables print them: multiplied by
/// 100 with two decimals; undefined values print as `NA`.
pub fn format_pearson(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "NA".to_string(),
    }
}

impl EvalReport {
    /// `group,count,pearson` rows (values x100, 2 decimals) with a final
    /// `overall` row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("group,count,pearson\n");
        for (tag, stats) in &self.per_pair {
            out.push_str(&format!(
                "{tag},{},{}\n",
                stats.count,
                format_pearson(stats.pearson)
            ));
        }
        out.push_str(&format!(
            "overall,{},{}\n",
            self.predictions.len(),
            format_pearson(self.overall_pearson)
        ));
        out
    }

    /// JSON summary with the same x100 presentation; undefined groups are
    /// `null`.
    pub fn to_json_summary(&self) -> serde_json::Value {
        let scale = |v: Option<f64>| -> serde_json::Value {
            match v {
                Some(v) => serde_json::json!((v * 100.0 * 100.0).round() / 100.0),
                None => serde_json::Value::Null,
            }
        };
        let per_pair: serde_json::Map<String, serde_json::Value> = self
            .per_pair
            .iter()
            .map(|(tag, stats)| {
                (
                    tag.clone(),
                    serde_json::json!({
                        "count": stats.count,
                        "pearson": scale(stats.pearson),
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "overall_pearson": scale(self.overall_pearson),
            "count": self.predictions.len(),
            "per_pair": per_pair,
        })
    }
}

/// Writes the submission-shaped predictions file (`pair_id,Overall`).
pub fn predictions_to_csv_string(predictions: &[(String, f64)]) -> String {
    let mut out = String::from("pair_id,Overall\n");
    for (pair_id, value) in predictions {
        out.push_str(&format!("{pair_id},{value}\n"));
    }
    out
}
