//! Python bindings for the news-similarity engine: text cleaning, the
//! hashing tokenizer with head-tail truncation, the loss algebra, Pearson
//! evaluation, k-fold splitting and the cross-encoder model.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use nsim_core::augment::build_default_plan;
use nsim_core::corpus::{self, Lang, Provenance, ScoreVector};
use nsim_core::eval;
use nsim_core::model::{ModelConfig, ModelParameters, PREDICTION_DIMS};
use nsim_core::tokenize::{self, Tokenizer, TruncationPolicy};
use nsim_core::train::{self, LossConfig};

fn value_err(message: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(message.to_string())
}

fn parse_policy(name: &str) -> PyResult<TruncationPolicy> {
    TruncationPolicy::preset(name).ok_or_else(|| {
        value_err(format!(
            "unknown truncation preset {name:?}; expected one of {}",
            TruncationPolicy::preset_names().join(", ")
        ))
    })
}

fn to_prediction(values: Vec<f64>, what: &str) -> PyResult<[f64; PREDICTION_DIMS]> {
    values.try_into().map_err(|v: Vec<f64>| {
        value_err(format!(
            "{what} needs {PREDICTION_DIMS} values, got {}",
            v.len()
        ))
    })
}

/// Remove URLs and file paths, collapse whitespace, trim.
#[pyfunction]
fn clean_text(raw: &str) -> String {
    corpus::clean_text(raw)
}

/// Join a title and body with a newline; an empty side yields the other.
#[pyfunction]
fn compose_document(title: &str, body: &str) -> String {
    corpus::compose_document(title, body)
}

/// Hash a text into token ids (reserved ids 0..=3, content from 4).
#[pyfunction]
#[pyo3(signature = (text, vocab_size = 32_768))]
fn tokenize(text: &str, vocab_size: u32) -> Vec<u32> {
    Tokenizer::new(vocab_size).tokenize(text).ids
}

/// Keep the first `head_len` and last `tail_len` token ids.
#[pyfunction]
fn head_tail_truncate(ids: Vec<u32>, head_len: usize, tail_len: usize) -> Vec<u32> {
    let seq = tokenize::TokenSequence { ids };
    tokenize::head_tail_truncate(&seq, TruncationPolicy::new(head_len, tail_len)).ids
}

/// Encode an article pair as `[CLS] doc1 [SEP] doc2 [SEP]` under a named
/// truncation preset.
#[pyfunction]
#[pyo3(signature = (doc1, doc2, policy = "h200t56", vocab_size = 32_768))]
fn encode_pair(doc1: &str, doc2: &str, policy: &str, vocab_size: u32) -> PyResult<Vec<u32>> {
    let policy = parse_policy(policy)?;
    let tokenizer = Tokenizer::new(vocab_size);
    Ok(tokenize::encode_pair(&tokenizer, doc1, doc2, policy).ids)
}

/// Weighted squared error: weight `w` on Overall (index 4), `(1 - w) / 6`
/// on each other dimension. Returns `(loss, per_dimension_squared_errors)`.
#[pyfunction]
fn multi_label_loss(pred: Vec<f64>, label: Vec<f64>, w: f64) -> PyResult<(f64, Vec<f64>)> {
    let pred = to_prediction(pred, "pred")?;
    let label = to_prediction(label, "label")?;
    let (loss, squared) = train::multi_label_loss(&pred, &label, w);
    Ok((loss, squared.to_vec()))
}

/// Consistency loss over `F` forward passes. Returns a dict with keys
/// `l_r`, `l_b`, `total` and `per_dimension_l_b`.
#[pyfunction]
fn rdrop_loss(
    py: Python<'_>,
    preds: Vec<Vec<f64>>,
    label: Vec<f64>,
    w: f64,
    alpha: f64,
) -> PyResult<Py<PyAny>> {
    let forwards = preds.len();
    let preds = preds
        .into_iter()
        .map(|p| to_prediction(p, "pred"))
        .collect::<PyResult<Vec<_>>>()?;
    let label = to_prediction(label, "label")?;
    let cfg = LossConfig {
        overall_weight: w,
        rdrop_alpha: alpha,
        forwards,
    };
    let breakdown = train::rdrop_loss(&preds, &label, &cfg).map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("l_r", breakdown.l_r)?;
    dict.set_item("l_b", breakdown.l_b)?;
    dict.set_item("total", breakdown.total)?;
    dict.set_item("per_dimension_l_b", breakdown.per_dimension_l_b.to_vec())?;
    Ok(dict.into())
}

/// Sample Pearson correlation coefficient (two-pass formula).
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    eval::pearson(&xs, &ys).map_err(value_err)
}

/// Clamp each value into `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (values, lo = 1.0, hi = 4.0))]
fn clip_scores(values: Vec<f64>, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    if lo >= hi {
        return Err(value_err("clip bounds must satisfy lo < hi"));
    }
    Ok(eval::clip_scores(&values, lo, hi))
}

/// The built-in translate-train arrangement as JSON-lines.
#[pyfunction]
fn default_plan_jsonl() -> String {
    build_default_plan().to_jsonl()
}

/// Deterministic k-fold assignment over original pair ids.
#[pyfunction]
fn split_kfold(pair_ids: Vec<String>, k: usize, seed: u64) -> PyResult<BTreeMap<String, usize>> {
    let records: Vec<corpus::ArticleRecord> = pair_ids
        .iter()
        .map(|pair_id| corpus::ArticleRecord {
            pair_id: pair_id.clone(),
            lang1: Lang::En,
            lang2: Lang::En,
            title1: String::new(),
            text1: String::new(),
            title2: String::new(),
            text2: String::new(),
            scores: ScoreVector::from_array([1.0; 7]),
            provenance: Provenance::Original,
        })
        .collect();
    let folds = corpus::split_kfold(&records, k, seed).map_err(value_err)?;
    Ok(folds.fold_of)
}

/// The trainable cross-encoder, seeded and deterministic.
#[pyclass]
struct Model {
    params: ModelParameters,
    tokenizer: Tokenizer,
}

#[pymethods]
impl Model {
    /// Build a freshly initialized model. `config_json` overrides the
    /// default configuration; see `config_json()` for the schema.
    #[new]
    #[pyo3(signature = (seed = 0, config_json = None))]
    fn new(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let config: ModelConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => ModelConfig::default(),
        };
        let params = nsim_core::model::init_model(&config, seed).map_err(value_err)?;
        let tokenizer = Tokenizer::new(config.vocab_size as u32);
        Ok(Self { params, tokenizer })
    }

    /// Eval-mode prediction for a pair of documents: seven scores with
    /// Overall at index 4.
    #[pyo3(signature = (doc1, doc2, policy = "h200t56"))]
    fn predict_pair(&self, doc1: &str, doc2: &str, policy: &str) -> PyResult<Vec<f64>> {
        let policy = parse_policy(policy)?;
        let encoded = tokenize::encode_pair(&self.tokenizer, doc1, doc2, policy);
        let pred = self.params.predict(&encoded.ids).map_err(value_err)?;
        Ok(pred.to_vec())
    }

    /// Forward over raw token ids; dropout only in train mode, driven by
    /// the seed.
    #[pyo3(signature = (ids, train_mode = false, dropout_seed = 0))]
    fn forward_ids(
        &self,
        ids: Vec<u32>,
        train_mode: bool,
        dropout_seed: u64,
    ) -> PyResult<Vec<f64>> {
        let (pred, _tape) = self
            .params
            .forward(&ids, train_mode, dropout_seed)
            .map_err(value_err)?;
        Ok(pred.to_vec())
    }

    fn num_parameters(&self) -> usize {
        self.params.num_params()
    }

    fn config_json(&self) -> String {
        serde_json::to_string(&self.params.config).expect("config serializes")
    }

    /// Write the versioned binary checkpoint.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.params
            .save(&path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Load a checkpoint saved by `save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let params =
            ModelParameters::load(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let tokenizer = Tokenizer::new(params.config.vocab_size as u32);
        Ok(Self { params, tokenizer })
    }
}

/// Average the eval-mode predictions of several saved checkpoints for one
/// document pair, then clip Overall into `[1, 4]`.
#[pyfunction]
#[pyo3(signature = (checkpoints, doc1, doc2, policy = "h200t56"))]
fn ensemble_predict_pair(
    checkpoints: Vec<PathBuf>,
    doc1: &str,
    doc2: &str,
    policy: &str,
) -> PyResult<f64> {
    if checkpoints.is_empty() {
        return Err(value_err("ensemble needs at least one checkpoint"));
    }
    let policy = parse_policy(policy)?;
    let members = checkpoints
        .iter()
        .map(|p| ModelParameters::load(p).map_err(|e| PyIOError::new_err(e.to_string())))
        .collect::<PyResult<Vec<_>>>()?;
    let tokenizer = Tokenizer::new(members[0].config.vocab_size as u32);
    let encoded = tokenize::encode_pair(&tokenizer, doc1, doc2, policy);
    let ensemble = train::EnsembleModel { members };
    let mean = ensemble.predict(&encoded.ids).map_err(value_err)?;
    Ok(eval::clip(mean[corpus::OVERALL_INDEX], 1.0, 4.0))
}

/// Language codes supported by the pipeline.
#[pyfunction]
fn supported_languages() -> Vec<String> {
    Lang::ALL.iter().map(|l| l.to_string()).collect()
}

/// Check a language code.
#[pyfunction]
fn is_supported_language(code: &str) -> bool {
    Lang::from_str(code).is_ok()
}

#[pymodule]
fn nsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(compose_document, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(head_tail_truncate, m)?)?;
    m.add_function(wrap_pyfunction!(encode_pair, m)?)?;
    m.add_function(wrap_pyfunction!(multi_label_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rdrop_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(clip_scores, m)?)?;
    m.add_function(wrap_pyfunction!(default_plan_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(split_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_predict_pair, m)?)?;
    m.add_function(wrap_pyfunction!(supported_languages, m)?)?;
    m.add_function(wrap_pyfunction!(is_supported_language, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
