//! Dataset ingestion, text cleaning and deterministic k-fold splitting.
//!
//! Ingestion starts from files already on disk: a CSV pair index plus one
//! JSON file per article id. Rows whose article files are missing or
//! unreadable are skipped and counted instead of failing the whole load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Number of annotated score dimensions per pair.
pub const SCORE_DIMS: usize = 7;
/// Index of the Overall dimension inside the fixed component order.
pub const OVERALL_INDEX: usize = 4;
/// Component names in fixed order.
pub const DIM_NAMES: [&str; SCORE_DIMS] = [
    "geography",
    "entities",
    "time",
    "narrative",
    "overall",
    "style",
    "tone",
];

/// Lower bound of the annotation scale.
pub const SCORE_MIN: f64 = 1.0;
/// Upper bound of the annotation scale.
pub const SCORE_MAX: f64 = 4.0;

/// The ten languages covered by the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Es,
    It,
    De,
    En,
    Zh,
    Ar,
    Pl,
    Fr,
    Tr,
    Ru,
}

impl Lang {
    pub const ALL: [Lang; 10] = [
        Lang::Es,
        Lang::It,
        Lang::De,
        Lang::En,
        Lang::Zh,
        Lang::Ar,
        Lang::Pl,
        Lang::Fr,
        Lang::Tr,
        Lang::Ru,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Es => "es",
            Lang::It => "it",
            Lang::De => "de",
            Lang::En => "en",
            Lang::Zh => "zh",
            Lang::Ar => "ar",
            Lang::Pl => "pl",
            Lang::Fr => "fr",
            Lang::Tr => "tr",
            Lang::Ru => "ru",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lang::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown language code {s:?}"))
    }
}

/// The seven similarity annotations of one pair, each in `[1, 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub geography: f64,
    pub entities: f64,
    pub time: f64,
    pub narrative: f64,
    pub overall: f64,
    pub style: f64,
    pub tone: f64,
}

impl ScoreVector {
    /// Components in the fixed order (Geography, Entities, Time, Narrative,
    /// Overall, Style, Tone).
    pub fn as_array(&self) -> [f64; SCORE_DIMS] {
        [
            self.geography,
            self.entities,
            self.time,
            self.narrative,
            self.overall,
            self.style,
            self.tone,
        ]
    }

    pub fn from_array(values: [f64; SCORE_DIMS]) -> Self {
        Self {
            geography: values[0],
            entities: values[1],
            time: values[2],
            narrative: values[3],
            overall: values[4],
            style: values[5],
            tone: values[6],
        }
    }

    /// Returns the first component outside `[1, 4]`, if any.
    pub fn out_of_range(&self) -> Option<(&'static str, f64)> {
        self.as_array()
            .iter()
            .zip(DIM_NAMES.iter())
            .find(|(v, _)| !(SCORE_MIN..=SCORE_MAX).contains(*v) || !v.is_finite())
            .map(|(v, name)| (*name, *v))
    }
}

/// How a record entered the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    BackTranslated,
    TranslateTrain,
}

/// One labeled pair of news articles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub pair_id: String,
    pub lang1: Lang,
    pub lang2: Lang,
    pub title1: String,
    pub text1: String,
    pub title2: String,
    pub text2: String,
    pub scores: ScoreVector,
    pub provenance: Provenance,
}

impl ArticleRecord {
    /// The pair id of the original record this one derives from. Augmented
    /// records carry suffixes (`_bt`, `_tt_<target>`) on top of the source
    /// id; originals return their own id.
    pub fn source_pair_id(&self) -> &str {
        match self.provenance {
            Provenance::Original => &self.pair_id,
            Provenance::BackTranslated => {
                self.pair_id.strip_suffix("_bt").unwrap_or(&self.pair_id)
            }
            Provenance::TranslateTrain => match self.pair_id.rfind("_tt_") {
                Some(i) => &self.pair_id[..i],
                None => &self.pair_id,
            },
        }
    }

    /// Canonical language-pair tag: `"de"` for monolingual pairs, otherwise
    /// `"de-en"` preserving the record's side order.
    pub fn lang_pair_tag(&self) -> String {
        if self.lang1 == self.lang2 {
            self.lang1.to_string()
        } else {
            format!("{}-{}", self.lang1, self.lang2)
        }
    }

    pub fn is_monolingual(&self) -> bool {
        self.lang1 == self.lang2
    }
}

/// Checks the `<id1>_<id2>` shape: exactly one underscore separating two
/// non-empty numeric tokens.
pub fn valid_pair_id(pair_id: &str) -> bool {
    let mut parts = pair_id.split('_');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => {
            !a.is_empty()
                && !b.is_empty()
                && a.bytes().all(|c| c.is_ascii_digit())
                && b.bytes().all(|c| c.is_ascii_digit())
        }
        _ => false,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index header must be \"{expected}\", got \"{got}\"")]
    BadHeader { expected: String, got: String },
    #[error("malformed index row at line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("score {dim}={value} outside [{SCORE_MIN}, {SCORE_MAX}] at line {line}")]
    ScoreOutOfRange {
        line: u64,
        dim: &'static str,
        value: f64,
    },
    #[error("invalid pair_id {pair_id:?} at line {line}: expected <id1>_<id2> with numeric ids")]
    BadPairId { pair_id: String, line: u64 },
    #[error("unknown language {lang:?} at line {line}")]
    BadLang { lang: String, line: u64 },
    #[error("malformed dataset line {line}: {message}")]
    BadJsonlLine { line: usize, message: String },
    #[error("cannot split an empty record set")]
    EmptySplit,
    #[error("fold count must be at least 2, got {k}")]
    FoldCountTooSmall { k: usize },
    #[error("fold count {k} exceeds the {sources} distinct source pair ids")]
    TooManyFolds { k: usize, sources: usize },
}

const INDEX_HEADER: [&str; 10] = [
    "pair_id",
    "lang1",
    "lang2",
    "geography",
    "entities",
    "time",
    "narrative",
    "overall",
    "style",
    "tone",
];

#[derive(Deserialize)]
struct ArticleFile {
    title: String,
    text: String,
}

/// Result of [`load_dataset`]: the loaded records plus skip counters.
/// `records.len() + skipped() == index row count` always holds.
#[derive(Debug)]
pub struct LoadOutcome {
    pub records: Vec<ArticleRecord>,
    pub skipped_missing: usize,
    pub skipped_malformed: usize,
}

impl LoadOutcome {
    pub fn skipped(&self) -> usize {
        self.skipped_missing + self.skipped_malformed
    }
}

/// Loads one record per index row, reading `<article_id>.json` files from
/// `article_dir`. Rows with missing or unparseable article files are
/// skipped and counted; malformed index rows are hard errors.
pub fn load_dataset(index_path: &Path, article_dir: &Path) -> Result<LoadOutcome, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(index_path)
        .map_err(|e| CorpusError::Io {
            path: index_path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::BadRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != INDEX_HEADER {
        return Err(CorpusError::BadHeader {
            expected: INDEX_HEADER.join(","),
            got: got.join(","),
        });
    }

    let mut outcome = LoadOutcome {
        records: Vec::new(),
        skipped_missing: 0,
        skipped_malformed: 0,
    };

    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(CorpusError::BadRow {
                    line,
                    message: e.to_string(),
                });
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != INDEX_HEADER.len() {
            return Err(CorpusError::BadRow {
                line,
                message: format!("expected {} fields, got {}", INDEX_HEADER.len(), row.len()),
            });
        }

        let pair_id = row[0].to_string();
        if !valid_pair_id(&pair_id) {
            return Err(CorpusError::BadPairId { pair_id, line });
        }
        let lang1 = Lang::from_str(&row[1]).map_err(|_| CorpusError::BadLang {
            lang: row[1].to_string(),
            line,
        })?;
        let lang2 = Lang::from_str(&row[2]).map_err(|_| CorpusError::BadLang {
            lang: row[2].to_string(),
            line,
        })?;

        let mut values = [0.0; SCORE_DIMS];
        for (i, value) in values.iter_mut().enumerate() {
            let raw = &row[3 + i];
            *value = raw.parse().map_err(|_| CorpusError::BadRow {
                line,
                message: format!("cannot parse {} value {raw:?}", DIM_NAMES[i]),
            })?;
        }
        let scores = ScoreVector::from_array(values);
        if let Some((dim, value)) = scores.out_of_range() {
            return Err(CorpusError::ScoreOutOfRange { line, dim, value });
        }

        let (id1, id2) = pair_id.split_once('_').expect("validated above");
        let art1 = match read_article(article_dir, id1) {
            ArticleRead::Ok(a) => a,
            ArticleRead::Missing => {
                outcome.skipped_missing += 1;
                continue;
            }
            ArticleRead::Malformed => {
                outcome.skipped_malformed += 1;
                continue;
            }
        };
        let art2 = match read_article(article_dir, id2) {
            ArticleRead::Ok(a) => a,
            ArticleRead::Missing => {
                outcome.skipped_missing += 1;
                continue;
            }
            ArticleRead::Malformed => {
                outcome.skipped_malformed += 1;
                continue;
            }
        };

        outcome.records.push(ArticleRecord {
            pair_id,
            lang1,
            lang2,
            title1: art1.title,
            text1: art1.text,
            title2: art2.title,
            text2: art2.text,
            scores,
            provenance: Provenance::Original,
        });
    }

    Ok(outcome)
}

enum ArticleRead {
    Ok(ArticleFile),
    Missing,
    Malformed,
}

fn read_article(dir: &Path, id: &str) -> ArticleRead {
    let path = dir.join(format!("{id}.json"));
    let raw = match fs::read_to_string(&path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return ArticleRead::Missing,
        Err(_) => return ArticleRead::Malformed,
    };
    match serde_json::from_str::<ArticleFile>(&raw) {
        Ok(article) => ArticleRead::Ok(article),
        Err(_) => ArticleRead::Malformed,
    }
}

struct CleanPatterns {
    url: Regex,
    windows_path: Regex,
    unix_abs_path: Regex,
    relative_path: Regex,
    whitespace: Regex,
}

fn clean_patterns() -> &'static CleanPatterns {
    static PATTERNS: OnceLock<CleanPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| CleanPatterns {
        // URLs match anywhere and extend to the next whitespace.
        url: Regex::new(r"(?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)\S+").unwrap(),
        // Path patterns require a leading boundary so fractions like 3/4
        // and words like and/or survive.
        windows_path: Regex::new(r"(^|\s)[A-Za-z]:[/\\]\S*").unwrap(),
        unix_abs_path: Regex::new(r"(^|\s)/\S+").unwrap(),
        relative_path: Regex::new(r"(^|\s)[^\s/\\]+(?:[/\\][^\s/\\]+)+\.[A-Za-z][A-Za-z0-9]*")
            .unwrap(),
        whitespace: Regex::new(r"\s+").unwrap(),
    })
}

/// Removes URLs and file paths, collapses whitespace runs to single spaces
/// and trims the result. Total and idempotent.
///
/// Removal runs to a fixpoint: stripping one pattern can expose another
/// (for example a trailing absolute path behind a removed prefix).
pub fn clean_text(raw: &str) -> String {
    let mut current = clean_pass(raw);
    loop {
        let next = clean_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn clean_pass(raw: &str) -> String {
    let p = clean_patterns();
    let s = p.url.replace_all(raw, " ");
    let s = p.windows_path.replace_all(&s, " ");
    let s = p.unix_abs_path.replace_all(&s, " ");
    let s = p.relative_path.replace_all(&s, " ");
    let s = p.whitespace.replace_all(&s, " ");
    s.trim().to_string()
}

/// Joins a cleaned title and body with a single newline; an empty side
/// yields the other alone.
pub fn compose_document(title: &str, body: &str) -> String {
    match (title.is_empty(), body.is_empty()) {
        (true, _) => body.to_string(),
        (_, true) => title.to_string(),
        _ => format!("{title}\n{body}"),
    }
}

/// Assignment of every record id to one of `k` folds.
///
/// The balance guarantee (sizes differ by at most one) holds over distinct
/// source pair ids; augmented records inherit the fold of their source so a
/// source never straddles the train/validation boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold(&self, pair_id: &str) -> Option<usize> {
        self.fold_of.get(pair_id).copied()
    }

    /// Number of assigned ids per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &fold in self.fold_of.values() {
            sizes[fold] += 1;
        }
        sizes
    }
}

/// Splits records into `k` folds by seeded random sampling.
///
/// Distinct source pair ids are shuffled deterministically and dealt round
/// robin, so fold sizes differ by at most one; every augmented record maps
/// to its source's fold.
pub fn split_kfold(
    records: &[ArticleRecord],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    if k < 2 {
        return Err(CorpusError::FoldCountTooSmall { k });
    }
    let sources: BTreeSet<&str> = records.iter().map(|r| r.source_pair_id()).collect();
    if k > sources.len() {
        return Err(CorpusError::TooManyFolds {
            k,
            sources: sources.len(),
        });
    }

    let mut shuffled: Vec<&str> = sources.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let source_fold: BTreeMap<&str, usize> = shuffled
        .iter()
        .enumerate()
        .map(|(pos, id)| (*id, pos % k))
        .collect();

    let mut fold_of = BTreeMap::new();
    for record in records {
        let fold = source_fold[record.source_pair_id()];
        fold_of.insert(record.pair_id.clone(), fold);
    }

    Ok(FoldAssignment { k, seed, fold_of })
}

/// Writes records as JSON-lines, one record per line.
pub fn write_jsonl(records: &[ArticleRecord], path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|source| {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    })?);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    out.flush().map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a JSON-lines dataset written by [`write_jsonl`].
pub fn read_jsonl(path: &Path) -> Result<Vec<ArticleRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::BadJsonlLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
