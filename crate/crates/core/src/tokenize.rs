//! Hashing tokenizer, head-tail truncation and pair encoding.
//!
//! The tokenizer needs no vocabulary asset: surface tokens are mapped to ids
//! through a fixed 64-bit FNV-1a hash, so the mapping is stable across runs
//! and platforms. Ids 0..=3 are reserved for special tokens; content tokens
//! start at 4.

/// Padding token id (only used when callers batch sequences themselves).
pub const PAD_ID: u32 = 0;
/// Classification token placed at position 0 of every encoded pair.
pub const CLS_ID: u32 = 1;
/// Separator token closing each article.
pub const SEP_ID: u32 = 2;
/// Reserved unknown id; the hashing scheme never emits it.
pub const UNK_ID: u32 = 3;
/// First id available to content tokens.
pub const FIRST_CONTENT_ID: u32 = 4;

/// Default vocabulary size of the hashing tokenizer.
pub const DEFAULT_VOCAB_SIZE: u32 = 32_768;

/// Per-article token budget shared by all shipped truncation presets.
pub const ARTICLE_TOKEN_BUDGET: usize = 256;

/// Upper bound on the length of an encoded pair: two article budgets plus
/// one CLS and two SEP tokens.
pub const MAX_ENCODED_LEN: usize = 2 * ARTICLE_TOKEN_BUDGET + 3;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// A sequence of token ids in `[0, vocab_size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Deterministic subword-free tokenizer backed by the hashing trick.
#[derive(Debug, Clone, Copy)]
pub struct Tokenizer {
    vocab_size: u32,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_VOCAB_SIZE)
    }
}

impl Tokenizer {
    /// `vocab_size` must leave room for the four reserved ids.
    pub fn new(vocab_size: u32) -> Self {
        assert!(
            vocab_size > FIRST_CONTENT_ID,
            "vocab_size must exceed the {FIRST_CONTENT_ID} reserved ids"
        );
        Self { vocab_size }
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Lowercases, splits on Unicode whitespace and punctuation boundaries
    /// (punctuation marks become their own tokens) and hashes each surface
    /// token into `[4, vocab_size)`.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let lowered = text.to_lowercase();
        let mut ids = Vec::new();
        let mut word = String::new();
        for ch in lowered.chars() {
            if ch.is_whitespace() {
                self.flush(&mut word, &mut ids);
            } else if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                // punctuation and symbols are standalone tokens
                self.flush(&mut word, &mut ids);
                let mut buf = [0u8; 4];
                ids.push(self.hash_token(ch.encode_utf8(&mut buf).as_bytes()));
            }
        }
        self.flush(&mut word, &mut ids);
        TokenSequence { ids }
    }

    fn flush(&self, word: &mut String, ids: &mut Vec<u32>) {
        if !word.is_empty() {
            ids.push(self.hash_token(word.as_bytes()));
            word.clear();
        }
    }

    fn hash_token(&self, bytes: &[u8]) -> u32 {
        let content_range = (self.vocab_size - FIRST_CONTENT_ID) as u64;
        FIRST_CONTENT_ID + (fnv1a64(bytes) % content_range) as u32
    }
}

/// How many leading and trailing tokens survive truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TruncationPolicy {
    pub head_len: usize,
    pub tail_len: usize,
}

impl TruncationPolicy {
    pub fn new(head_len: usize, tail_len: usize) -> Self {
        Self { head_len, tail_len }
    }

    /// Named presets selectable on the command line. Every preset keeps the
    /// per-article budget at 256 tokens.
    pub fn preset(name: &str) -> Option<Self> {
        let (head, tail) = match name {
            "h256t0" => (256, 0),
            "h200t56" => (200, 56),
            "h128t128" => (128, 128),
            "h56t200" => (56, 200),
            "h0t256" => (0, 256),
            _ => return None,
        };
        Some(Self::new(head, tail))
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["h256t0", "h200t56", "h128t128", "h56t200", "h0t256"]
    }

    pub fn budget(&self) -> usize {
        self.head_len + self.tail_len
    }
}

impl Default for TruncationPolicy {
    /// The default preset `h200t56`.
    fn default() -> Self {
        Self::new(200, 56)
    }
}

/// Keeps the first `head_len` and last `tail_len` tokens of a sequence.
///
/// Sequences no longer than the combined budget are returned unchanged, so
/// an overlapping head and tail never duplicates tokens.
pub fn head_tail_truncate(tokens: &TokenSequence, policy: TruncationPolicy) -> TokenSequence {
    let n = tokens.len();
    if n <= policy.budget() {
        return tokens.clone();
    }
    let mut ids = Vec::with_capacity(policy.budget());
    ids.extend_from_slice(&tokens.ids[..policy.head_len]);
    ids.extend_from_slice(&tokens.ids[n - policy.tail_len..]);
    TokenSequence { ids }
}

/// A tokenized article pair laid out as `[CLS] doc1 [SEP] doc2 [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<u32>,
    /// Positions of the two SEP tokens.
    pub article_boundaries: (usize, usize),
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Tokenizes and truncates both documents with the same policy, then
/// assembles the joint sequence. Padding is left to batching code.
pub fn encode_pair(
    tokenizer: &Tokenizer,
    doc1: &str,
    doc2: &str,
    policy: TruncationPolicy,
) -> EncodedPair {
    let t1 = head_tail_truncate(&tokenizer.tokenize(doc1), policy);
    let t2 = head_tail_truncate(&tokenizer.tokenize(doc2), policy);
    let mut ids = Vec::with_capacity(t1.len() + t2.len() + 3);
    ids.push(CLS_ID);
    ids.extend_from_slice(&t1.ids);
    ids.push(SEP_ID);
    let first_sep = ids.len() - 1;
    ids.extend_from_slice(&t2.ids);
    ids.push(SEP_ID);
    let second_sep = ids.len() - 1;
    EncodedPair {
        ids,
        article_boundaries: (first_sep, second_sep),
    }
}
