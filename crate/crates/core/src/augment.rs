//! Back-translation and translate-train augmentation.
//!
//! All translation goes through [`TranslatorPort`], so the pipeline runs the
//! same against the shipped stubs or a real service adapter. A side's title
//! and body travel in one call, joined by a single newline (cleaned text
//! contains none), and are split back at the first newline afterwards;
//! implementations must preserve that separator line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleRecord, Lang, Provenance};

#[derive(Debug, Clone, thiserror::Error)]
#[error("cannot translate {source_lang} -> {target_lang}: {message}")]
pub struct TranslateError {
    pub source_lang: Lang,
    pub target_lang: Lang,
    pub message: String,
}

/// A deterministic translation backend.
pub trait TranslatorPort {
    fn translate(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError>;
}

/// Returns the input unchanged; useful for tests and dry runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl TranslatorPort for IdentityTranslator {
    fn translate(&self, text: &str, _source: Lang, _target: Lang) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

/// Wraps the text in `[tgt]...[/tgt]` markers so translated output is
/// distinguishable from the source in tests.
#[derive(Debug, Default, Clone, Copy)]
pub struct TaggingTranslator;

impl TranslatorPort for TaggingTranslator {
    fn translate(&self, text: &str, _source: Lang, target: Lang) -> Result<String, TranslateError> {
        Ok(format!("[{target}]{text}[/{target}]"))
    }
}

/// Wraps another translator and records every call.
pub struct CountingTranslator<T> {
    inner: T,
    calls: Mutex<Vec<(String, Lang, Lang)>>,
}

impl<T> CountingTranslator<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(String, Lang, Lang)> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl<T: TranslatorPort> TranslatorPort for CountingTranslator<T> {
    fn translate(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError> {
        self.calls
            .lock()
            .unwrap()
            .push((text.to_string(), source, target));
        self.inner.translate(text, source, target)
    }
}

/// Connection settings for a real HTTP translation adapter implementing
/// [`TranslatorPort`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub rate_limit_per_sec: f64,
}

/// A dashed language-pair tag such as `en-en` or `de-fr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairTag {
    pub lang1: Lang,
    pub lang2: Lang,
}

impl PairTag {
    pub fn new(lang1: Lang, lang2: Lang) -> Self {
        Self { lang1, lang2 }
    }
}

impl fmt::Display for PairTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lang1, self.lang2)
    }
}

impl FromStr for PairTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("expected xx-yy language pair, got {s:?}"))?;
        Ok(Self::new(Lang::from_str(a)?, Lang::from_str(b)?))
    }
}

impl Serialize for PairTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PairTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PairTag::from_str(&s).map_err(serde::de::Error::custom)
    }
}

/// One arrangement row: take `quantity` samples of `origin` and emit every
/// tag in `targets` from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlanRow {
    pub origin: PairTag,
    pub quantity: usize,
    pub targets: Vec<PairTag>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub rows: Vec<AugmentPlanRow>,
}

impl AugmentPlan {
    /// Total number of records the plan emits.
    pub fn emitted_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.quantity * r.targets.len())
            .sum()
    }

    /// Serializes one row per line.
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("plan row serialization cannot fail"))
            .map(|l| l + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, AugmentError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = serde_json::from_str(line).map_err(|e| AugmentError::BadPlanLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(Self { rows })
    }
}

fn tag(l1: Lang, l2: Lang) -> PairTag {
    PairTag::new(l1, l2)
}

/// The shipped translate-train arrangement.
pub fn build_default_plan() -> AugmentPlan {
    use Lang::*;
    AugmentPlan {
        rows: vec![
            AugmentPlanRow {
                origin: tag(En, En),
                quantity: 401,
                targets: vec![tag(Ru, Ru)],
            },
            AugmentPlanRow {
                origin: tag(En, En),
                quantity: 800,
                targets: vec![tag(Zh, Zh), tag(Zh, En)],
            },
            AugmentPlanRow {
                origin: tag(En, En),
                quantity: 586,
                targets: vec![tag(It, It), tag(Es, En), tag(Es, It)],
            },
            AugmentPlanRow {
                origin: tag(Pl, Pl),
                quantity: 349,
                targets: vec![tag(Pl, En)],
            },
            AugmentPlanRow {
                origin: tag(De, En),
                quantity: 317,
                targets: vec![tag(De, Fr), tag(Fr, Fr)],
            },
        ],
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("back-translation only applies to non-pivot samples ({lang} pairs are the pivot)")]
    SourceIsPivot { lang: Lang },
    #[error("back-translation supports monolingual or de-en records, not {lang1}-{lang2}")]
    UnsupportedPair { lang1: Lang, lang2: Lang },
    #[error("plan row {row} ({origin}) needs {required} origin samples but only {available} exist")]
    InsufficientOrigins {
        row: usize,
        origin: PairTag,
        required: usize,
        available: usize,
    },
    #[error("malformed plan line {line}: {message}")]
    BadPlanLine { line: usize, message: String },
    #[error(transparent)]
    Translate(#[from] TranslateError),
}

/// Translates one article side (title plus body) in a single call.
fn translate_side(
    translator: &dyn TranslatorPort,
    title: &str,
    text: &str,
    from: Lang,
    to: Lang,
) -> Result<(String, String), TranslateError> {
    let composed = format!("{title}\n{text}");
    let out = translator.translate(&composed, from, to)?;
    Ok(match out.split_once('\n') {
        Some((t, x)) => (t.to_string(), x.to_string()),
        None => (String::new(), out),
    })
}

fn round_trip(
    translator: &dyn TranslatorPort,
    title: &str,
    text: &str,
    lang: Lang,
    pivot: Lang,
) -> Result<(String, String), TranslateError> {
    let (t, x) = translate_side(translator, title, text, lang, pivot)?;
    translate_side(translator, &t, &x, pivot, lang)
}

/// Round-trips a record through the pivot language (default `en`).
///
/// Monolingual records have both sides round-tripped; de-en records only
/// the German side, recombined with the untouched English side. Records
/// already in the pivot language are rejected.
pub fn back_translate(
    record: &ArticleRecord,
    pivot: Lang,
    translator: &dyn TranslatorPort,
) -> Result<ArticleRecord, AugmentError> {
    let mut out = record.clone();
    match (record.lang1, record.lang2) {
        (l1, l2) if l1 == l2 && l1 == pivot => {
            return Err(AugmentError::SourceIsPivot { lang: pivot })
        }
        (l1, l2) if l1 == l2 => {
            let (t1, x1) = round_trip(translator, &record.title1, &record.text1, l1, pivot)?;
            let (t2, x2) = round_trip(translator, &record.title2, &record.text2, l2, pivot)?;
            out.title1 = t1;
            out.text1 = x1;
            out.title2 = t2;
            out.text2 = x2;
        }
        (Lang::De, Lang::En) => {
            let (t1, x1) =
                round_trip(translator, &record.title1, &record.text1, Lang::De, pivot)?;
            out.title1 = t1;
            out.text1 = x1;
        }
        (Lang::En, Lang::De) => {
            let (t2, x2) =
                round_trip(translator, &record.title2, &record.text2, Lang::De, pivot)?;
            out.title2 = t2;
            out.text2 = x2;
        }
        (lang1, lang2) => return Err(AugmentError::UnsupportedPair { lang1, lang2 }),
    }
    out.pair_id = format!("{}_bt", record.pair_id);
    out.provenance = Provenance::BackTranslated;
    Ok(out)
}

type SideCache = BTreeMap<(String, u8, Lang), (String, String)>;

fn side_in(
    cache: &mut SideCache,
    translator: &dyn TranslatorPort,
    record: &ArticleRecord,
    side: u8,
    lang: Lang,
) -> Result<(String, String), TranslateError> {
    let (orig_lang, title, text) = match side {
        1 => (record.lang1, &record.title1, &record.text1),
        _ => (record.lang2, &record.title2, &record.text2),
    };
    if lang == orig_lang {
        return Ok((title.clone(), text.clone()));
    }
    let key = (record.pair_id.clone(), side, lang);
    if let Some(cached) = cache.get(&key) {
        return Ok(cached.clone());
    }
    // Non-English to non-English goes through the English pivot, which also
    // makes the intermediate reusable for other targets.
    let result = if orig_lang == Lang::En || lang == Lang::En {
        translate_side(translator, title, text, orig_lang, lang)?
    } else {
        let (t_en, x_en) = side_in(cache, translator, record, side, Lang::En)?;
        translate_side(translator, &t_en, &x_en, Lang::En, lang)?
    };
    cache.insert(key, result.clone());
    Ok(result)
}

/// Executes an augmentation plan.
///
/// For each row, `quantity` origin records are drawn by seeded sampling
/// without replacement; each needed side is translated once per distinct
/// target language and recombined to emit every target tag. Scores are
/// copied unchanged and emitted ids get a `_tt_<target>` suffix.
pub fn translate_train(
    records: &[ArticleRecord],
    plan: &AugmentPlan,
    translator: &dyn TranslatorPort,
    seed: u64,
) -> Result<Vec<ArticleRecord>, AugmentError> {
    let mut out = Vec::with_capacity(plan.emitted_count());
    let mut cache = SideCache::new();

    for (row_idx, row) in plan.rows.iter().enumerate() {
        let mut candidates: Vec<&ArticleRecord> = records
            .iter()
            .filter(|r| {
                r.provenance == Provenance::Original
                    && r.lang1 == row.origin.lang1
                    && r.lang2 == row.origin.lang2
            })
            .collect();
        candidates.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if candidates.len() < row.quantity {
            return Err(AugmentError::InsufficientOrigins {
                row: row_idx + 1,
                origin: row.origin,
                required: row.quantity,
                available: candidates.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(row_idx as u64));
        candidates.shuffle(&mut rng);

        for record in &candidates[..row.quantity] {
            for target in &row.targets {
                let (title1, text1) = side_in(&mut cache, translator, record, 1, target.lang1)?;
                let (title2, text2) = side_in(&mut cache, translator, record, 2, target.lang2)?;
                out.push(ArticleRecord {
                    pair_id: format!("{}_tt_{}", record.pair_id, target),
                    lang1: target.lang1,
                    lang2: target.lang2,
                    title1,
                    text1,
                    title2,
                    text2,
                    scores: record.scores,
                    provenance: Provenance::TranslateTrain,
                });
            }
        }
    }
    Ok(out)
}
