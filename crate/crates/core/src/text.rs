//! Lyrics preprocessing: tokenization, stop-word removal, vocabulary
//! construction and fixed-length integer encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// First id handed to a real token.
pub const FIRST_TOKEN_ID: u32 = 2;

pub const DEFAULT_SEQ_LEN: usize = 64;
pub const DEFAULT_VOCAB_SIZE: usize = 5000;

/// Embedded stop-word list, version 1. Order is irrelevant; it is a set.
pub const DEFAULT_STOPWORDS_V1: [&str; 30] = [
    "the", "a", "an", "and", "or", "of", "to", "in", "on", "is", "it", "i", "you", "my", "me",
    "so", "that", "this", "for", "with", "be", "are", "was", "we", "your", "at", "but", "as",
    "all", "just",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot build a vocabulary from a corpus without tokens")]
    EmptyCorpus,
    #[error("vocabulary max_size must be at least 1")]
    ZeroVocabularySize,
    #[error("sequence length must be at least 1")]
    ZeroSequenceLength,
    #[error("malformed vocabulary line {line}: {reason}")]
    BadVocabularyLine { line: usize, reason: String },
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase ASCII alphanumeric token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, PipelineError> {
        let text = text.into();
        if text.is_empty()
            || !text
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        {
            return Err(PipelineError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits on every maximal run of characters outside `[A-Za-z0-9]` and
/// lowercases. Non-ASCII characters count as delimiters.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| Token(s.to_ascii_lowercase()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StopList {
    words: HashSet<Token>,
}

impl StopList {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn default_v1() -> Self {
        Self {
            words: DEFAULT_STOPWORDS_V1
                .iter()
                .map(|w| Token((*w).to_string()))
                .collect(),
        }
    }

    /// One token per line; blank lines are ignored, entries are lowercased.
    pub fn parse(contents: &str) -> Result<Self, PipelineError> {
        let words = contents
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| Token::new(l.to_ascii_lowercase()))
            .collect::<Result<_, _>>()?;
        Ok(Self { words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sorted one-per-line rendering, inverse of [`StopList::parse`].
    pub fn to_text(&self) -> String {
        let mut words: Vec<&str> = self.words.iter().map(Token::as_str).collect();
        words.sort_unstable();
        let mut out = String::new();
        for w in words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }
}

pub fn remove_stopwords(tokens: &[Token], stoplist: &StopList) -> Vec<Token> {
    tokens
        .iter()
        .filter(|t| !stoplist.contains(t))
        .cloned()
        .collect()
}

/// Token to id map; ids 0 and 1 are reserved for padding and unknown tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: HashMap<Token, u32>,
    max_size: usize,
}

// The size cap only shapes construction; a reloaded TSV equals its source.
impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for Vocabulary {}

/// Keeps the `max_size` most frequent tokens. Ties in frequency go to the
/// lexicographically smaller token.
pub fn build_vocabulary(
    corpus: &[Vec<Token>],
    max_size: usize,
) -> Result<Vocabulary, PipelineError> {
    if max_size == 0 {
        return Err(PipelineError::ZeroVocabularySize);
    }
    let mut counts: BTreeMap<&Token, u64> = BTreeMap::new();
    for token in corpus.iter().flatten() {
        *counts.entry(token).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }

    let mut ranked: Vec<(&Token, u64)> = counts.into_iter().collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

    let entries = ranked
        .into_iter()
        .take(max_size)
        .zip(FIRST_TOKEN_ID..)
        .map(|((t, _), id)| (t.clone(), id))
        .collect();
    Ok(Vocabulary { entries, max_size })
}

impl Vocabulary {
    pub fn id(&self, token: &Token) -> u32 {
        self.entries.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Number of real tokens, excluding the reserved ids.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Size of the id space, reserved ids included.
    pub fn id_space(&self) -> usize {
        self.entries.len() + FIRST_TOKEN_ID as usize
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn sorted_entries(&self) -> Vec<(&Token, u32)> {
        let mut v: Vec<_> = self.entries.iter().map(|(t, id)| (t, *id)).collect();
        v.sort_by_key(|(_, id)| *id);
        v
    }

    /// `token<TAB>id` lines sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (token, id) in self.sorted_entries() {
            let _ = writeln!(out, "{token}\t{id}");
        }
        out
    }

    pub fn from_tsv(contents: &str) -> Result<Self, PipelineError> {
        let mut entries = HashMap::new();
        for (n, line) in contents.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| PipelineError::BadVocabularyLine {
                line: n + 1,
                reason: reason.to_string(),
            };
            let (token, id) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let id: u32 = id.trim().parse().map_err(|_| bad("id is not an integer"))?;
            let token = Token::new(token).map_err(|_| bad("invalid token"))?;
            if entries.insert(token, id).is_some() {
                return Err(bad("duplicate token"));
            }
        }
        let mut ids: Vec<u32> = entries.values().copied().collect();
        ids.sort_unstable();
        if ids
            .iter()
            .enumerate()
            .any(|(i, id)| *id != FIRST_TOKEN_ID + i as u32)
        {
            return Err(PipelineError::BadVocabularyLine {
                line: 0,
                reason: "ids are not dense from 2".into(),
            });
        }
        let max_size = entries.len().max(1);
        Ok(Self { entries, max_size })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// Exactly `seq_len` ids: the first tokens mapped through the vocabulary,
/// then PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedLyrics {
    ids: Vec<u32>,
}

impl EncodedLyrics {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode(
    tokens: &[Token],
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<EncodedLyrics, PipelineError> {
    if seq_len == 0 {
        return Err(PipelineError::ZeroSequenceLength);
    }
    let mut ids: Vec<u32> = tokens.iter().take(seq_len).map(|t| vocab.id(t)).collect();
    ids.resize(seq_len, PAD_ID);
    Ok(EncodedLyrics { ids })
}

/// Everything needed to turn raw lyrics into model input.
#[derive(Debug, Clone, PartialEq)]
pub struct LyricsPipeline {
    pub stoplist: StopList,
    pub vocab: Vocabulary,
    pub seq_len: usize,
}

impl LyricsPipeline {
    pub fn tokens(stoplist: &StopList, text: &str) -> Vec<Token> {
        remove_stopwords(&tokenize(text), stoplist)
    }

    /// Stop words are removed before counting frequencies.
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        stoplist: StopList,
        max_size: usize,
        seq_len: usize,
    ) -> Result<Self, PipelineError> {
        if seq_len == 0 {
            return Err(PipelineError::ZeroSequenceLength);
        }
        let corpus: Vec<Vec<Token>> = texts
            .into_iter()
            .map(|t| Self::tokens(&stoplist, t))
            .collect();
        let vocab = build_vocabulary(&corpus, max_size)?;
        Ok(Self {
            stoplist,
            vocab,
            seq_len,
        })
    }

    pub fn encode(&self, text: &str) -> EncodedLyrics {
        let tokens = Self::tokens(&self.stoplist, text);
        // seq_len is validated at construction
        encode(&tokens, &self.vocab, self.seq_len).expect("seq_len >= 1")
    }
}
