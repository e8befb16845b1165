//! Append-only, hash-chained record ledger.
//!
//! Every block is hashed with SHA-256 over the compact JSON form of
//! `{index, prev_hash, records, timestamp}` with object keys sorted, and
//! persisted as that same compact JSON (plus its `hash`) on one line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const GENESIS_PREV_HASH: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";
pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("invalid {kind} record: {problem}")]
    InvalidRecord { kind: RecordKind, problem: String },
    #[error("token amount must be at least 1, got {0}")]
    InvalidAmount(i64),
    #[error("a block needs at least one record")]
    EmptyBlock,
    #[error("unknown record kind {0:?}")]
    UnknownKind(String),
    #[error("chain is corrupt at block {index}: {reason}")]
    Corrupt { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Preference,
    SongMetadata,
    EmotionTag,
    TokenReward,
    Ownership,
    Request,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::Preference,
        RecordKind::SongMetadata,
        RecordKind::EmotionTag,
        RecordKind::TokenReward,
        RecordKind::Ownership,
        RecordKind::Request,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Preference => "preference",
            RecordKind::SongMetadata => "song_metadata",
            RecordKind::EmotionTag => "emotion_tag",
            RecordKind::TokenReward => "token_reward",
            RecordKind::Ownership => "ownership",
            RecordKind::Request => "request",
        }
    }

    /// Payload fields a record of this kind must carry.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            RecordKind::Preference => &["user_id", "song_id", "feedback"],
            RecordKind::SongMetadata => &["song_id", "title", "artist"],
            RecordKind::EmotionTag => &["song_id", "tags", "source"],
            RecordKind::TokenReward => &["user_id", "amount", "reason"],
            RecordKind::Ownership => &["song_id", "owner", "rights"],
            RecordKind::Request => &["user_id", "endpoint"],
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LedgerError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub kind: RecordKind,
    pub payload: Map<String, Value>,
    pub actor: String,
    pub timestamp: i64,
}

impl LedgerRecord {
    pub fn new(kind: RecordKind, payload: Value, actor: &str, timestamp: i64) -> Self {
        let payload = match payload {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        Self {
            kind,
            payload,
            actor: actor.to_string(),
            timestamp,
        }
    }

    pub fn token_reward(user: &str, amount: i64, reason: &str, timestamp: i64) -> Self {
        Self::new(
            RecordKind::TokenReward,
            json!({"user_id": user, "amount": amount, "reason": reason}),
            SYSTEM_ACTOR,
            timestamp,
        )
    }

    pub fn request(user: &str, endpoint: &str, timestamp: i64) -> Self {
        Self::new(
            RecordKind::Request,
            json!({"user_id": user, "endpoint": endpoint}),
            user,
            timestamp,
        )
    }

    pub fn preference(user: &str, song: &str, feedback: &str, timestamp: i64) -> Self {
        Self::new(
            RecordKind::Preference,
            json!({"user_id": user, "song_id": song, "feedback": feedback}),
            user,
            timestamp,
        )
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        let invalid = |problem: String| LedgerError::InvalidRecord {
            kind: self.kind,
            problem,
        };
        if self.actor.is_empty() {
            return Err(invalid("empty actor".into()));
        }
        for field in self.kind.required_fields() {
            match self.payload.get(*field) {
                None | Some(Value::Null) => {
                    return Err(invalid(format!("missing field {field:?}")));
                }
                Some(_) => {}
            }
        }
        if self.kind == RecordKind::TokenReward {
            match self.payload["amount"].as_i64() {
                Some(a) if a >= 1 => {}
                _ => return Err(invalid("\"amount\" must be an integer >= 1".into())),
            }
        }
        Ok(())
    }

    pub fn get_str(&self, field: &str) -> Option<&str> {
        self.payload.get(field).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    pub index: u64,
    pub prev_hash: String,
    pub timestamp: i64,
    pub records: Vec<LedgerRecord>,
    pub hash: String,
}

impl LedgerBlock {
    fn seal(index: u64, prev_hash: String, timestamp: i64, records: Vec<LedgerRecord>) -> Self {
        let hash = block_hash(index, &prev_hash, timestamp, &records);
        Self {
            index,
            prev_hash,
            timestamp,
            records,
            hash,
        }
    }

    pub fn computed_hash(&self) -> String {
        block_hash(self.index, &self.prev_hash, self.timestamp, &self.records)
    }

    /// The persisted line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical(&serde_json::to_value(self).expect("blocks are plain data"))
    }
}

/// Compact JSON with object keys in ascending order.
pub fn canonical(value: &Value) -> String {
    // explicit, in case some dependency turns on serde_json/preserve_order
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let ordered: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, sorted(v))).collect();
                Value::Object(ordered.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("values always serialize")
}

pub fn block_hash(index: u64, prev_hash: &str, timestamp: i64, records: &[LedgerRecord]) -> String {
    let body = json!({
        "index": index,
        "prev_hash": prev_hash,
        "timestamp": timestamp,
        "records": records,
    });
    hex::encode(Sha256::digest(canonical(&body).as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_bad_index: Option<usize>,
}

impl Verification {
    fn good() -> Self {
        Self {
            ok: true,
            first_bad_index: None,
        }
    }

    fn bad(index: usize) -> Self {
        Self {
            ok: false,
            first_bad_index: Some(index),
        }
    }
}

fn is_hex64(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Recomputes every hash and link.
pub fn verify_chain(blocks: &[LedgerBlock]) -> Verification {
    let mut prev = GENESIS_PREV_HASH;
    for (i, b) in blocks.iter().enumerate() {
        let sound = b.index == i as u64
            && b.prev_hash == prev
            && is_hex64(&b.hash)
            && !b.records.is_empty()
            && b.records.iter().all(|r| r.validate().is_ok())
            && b.computed_hash() == b.hash;
        if !sound {
            return Verification::bad(i);
        }
        prev = &b.hash;
    }
    Verification::good()
}

/// Parses persisted lines back into blocks. A line that does not parse, or
/// that is not byte-for-byte the canonical form of what it parses to, is
/// reported as the first bad block.
pub fn parse_serialized(bytes: &[u8]) -> Result<Vec<LedgerBlock>, LedgerError> {
    let lines = persisted_lines(bytes);
    let mut blocks = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let corrupt = |reason: String| LedgerError::Corrupt { index: i, reason };
        let text = std::str::from_utf8(line).map_err(|e| corrupt(e.to_string()))?;
        let block: LedgerBlock = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if block.to_line() != text {
            return Err(corrupt("line is not in canonical form".into()));
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Checks persisted lines in order and stops at the first bad one.
pub fn verify_serialized(bytes: &[u8]) -> Verification {
    let mut prev = GENESIS_PREV_HASH.to_string();
    for (i, line) in persisted_lines(bytes).into_iter().enumerate() {
        match check_line(line, i, &prev) {
            Some(hash) => prev = hash,
            None => return Verification::bad(i),
        }
    }
    Verification::good()
}

fn persisted_lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

// `{"hash":"<64 hex>",`
const HASH_FIELD_LEN: usize = 2 + 4 + 3 + 64 + 2;

/// The block's hash if line `i` is canonical, sound and linked to `prev`.
fn check_line(line: &[u8], i: usize, prev: &str) -> Option<String> {
    let text = std::str::from_utf8(line).ok()?;
    let block: LedgerBlock = serde_json::from_str(text).ok()?;
    let sound = block.index == i as u64
        && block.prev_hash == prev
        && is_hex64(&block.hash)
        && !block.records.is_empty()
        && block.records.iter().all(|r| r.validate().is_ok())
        && block.to_line() == text;
    if !sound {
        return None;
    }
    // sorted keys put "hash" first; the rest of the line is the hashed body
    let mut hasher = Sha256::new();
    hasher.update(b"{");
    hasher.update(&text.as_bytes()[HASH_FIELD_LEN..]);
    (hex::encode(hasher.finalize()) == block.hash).then_some(block.hash)
}

/// Where blocks live between runs. Lines are appended verbatim; `load`
/// returns everything persisted so far.
pub trait ChainStore: Send {
    fn load(&mut self) -> Result<Vec<u8>, LedgerError>;
    fn append_line(&mut self, line: &str) -> Result<(), LedgerError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    bytes: Vec<u8>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes_mut(&mut self) -> &mut Vec<u8> {
        &mut self.bytes
    }
}

impl ChainStore for MemoryStore {
    fn load(&mut self) -> Result<Vec<u8>, LedgerError> {
        Ok(self.bytes.clone())
    }

    fn append_line(&mut self, line: &str) -> Result<(), LedgerError> {
        self.bytes.extend_from_slice(line.as_bytes());
        self.bytes.push(b'\n');
        Ok(())
    }
}

/// JSON-lines file, one block per line.
#[derive(Debug, Clone)]
pub struct FileStore {
    path: PathBuf,
}

impl FileStore {
    pub fn new(path: impl AsRef<Path>) -> Self {
        Self {
            path: path.as_ref().to_path_buf(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ChainStore for FileStore {
    fn load(&mut self) -> Result<Vec<u8>, LedgerError> {
        let mut bytes = Vec::new();
        match File::open(&self.path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(bytes)
    }

    fn append_line(&mut self, line: &str) -> Result<(), LedgerError> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(format!("{line}\n").as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

/// Source of UTC timestamps, in seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        chrono::Utc::now().timestamp()
    }
}

/// Always reports the same instant.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub i64);

impl Clock for FixedClock {
    fn now(&self) -> i64 {
        self.0
    }
}

/// A clock tests can move by hand.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        Self(AtomicI64::new(start))
    }

    pub fn set(&self, t: i64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct Ledger {
    blocks: Vec<LedgerBlock>,
    balances: BTreeMap<String, i64>,
    store: Box<dyn ChainStore>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("blocks", &self.blocks.len())
            .finish_non_exhaustive()
    }
}

impl Ledger {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            blocks: Vec::new(),
            balances: BTreeMap::new(),
            store: Box::new(MemoryStore::new()),
            clock,
        }
    }

    /// Loads whatever `store` already holds; refuses a chain that does not
    /// verify.
    pub fn open(mut store: Box<dyn ChainStore>, clock: Arc<dyn Clock>) -> Result<Self, LedgerError> {
        let blocks = parse_serialized(&store.load()?)?;
        if let Verification {
            ok: false,
            first_bad_index: Some(index),
        } = verify_chain(&blocks)
        {
            return Err(LedgerError::Corrupt {
                index,
                reason: "hash or link mismatch".into(),
            });
        }
        let mut ledger = Self {
            blocks: Vec::new(),
            balances: BTreeMap::new(),
            store,
            clock,
        };
        for b in blocks {
            ledger.index_block(&b);
            ledger.blocks.push(b);
        }
        Ok(ledger)
    }

    pub fn open_file(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, LedgerError> {
        Self::open(Box::new(FileStore::new(path)), clock)
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn head_hash(&self) -> &str {
        self.blocks.last().map_or(GENESIS_PREV_HASH, |b| &b.hash)
    }

    /// Seals `records` into one new block stamped by the ledger's clock.
    pub fn append(&mut self, records: Vec<LedgerRecord>) -> Result<&LedgerBlock, LedgerError> {
        let now = self.clock.now();
        self.append_at(records, now)
    }

    pub fn append_at(
        &mut self,
        records: Vec<LedgerRecord>,
        timestamp: i64,
    ) -> Result<&LedgerBlock, LedgerError> {
        if records.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        for r in &records {
            r.validate()?;
        }
        let block = LedgerBlock::seal(
            self.blocks.len() as u64,
            self.head_hash().to_string(),
            timestamp,
            records,
        );
        self.store.append_line(&block.to_line())?;
        self.index_block(&block);
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn award_tokens(
        &mut self,
        user: &str,
        amount: i64,
        reason: &str,
    ) -> Result<&LedgerBlock, LedgerError> {
        if amount < 1 {
            return Err(LedgerError::InvalidAmount(amount));
        }
        let now = self.clock.now();
        self.append_at(vec![LedgerRecord::token_reward(user, amount, reason, now)], now)
    }

    fn index_block(&mut self, block: &LedgerBlock) {
        for r in block.records.iter().filter(|r| r.kind == RecordKind::TokenReward) {
            if let (Some(user), Some(amount)) = (r.get_str("user_id"), r.payload["amount"].as_i64()) {
                *self.balances.entry(user.to_string()).or_default() += amount;
            }
        }
    }

    pub fn balance(&self, user: &str) -> i64 {
        self.balances.get(user).copied().unwrap_or(0)
    }

    /// Checks the in-memory chain.
    pub fn verify(&self) -> Verification {
        verify_chain(&self.blocks)
    }

    /// Checks what the store actually holds, which can differ from memory if
    /// someone edited the file underneath us.
    pub fn verify_persisted(&mut self) -> Result<Verification, LedgerError> {
        Ok(verify_serialized(&self.store.load()?))
    }

    pub fn query(&self, kind: RecordKind, filter: &[(&str, Value)]) -> Vec<&LedgerRecord> {
        query(&self.blocks, kind, filter)
    }

    pub fn requests_per_day(&self) -> BTreeMap<NaiveDate, u64> {
        requests_per_day(&self.blocks)
    }
}

/// Records of `kind` whose payload equals every `(key, value)` in `filter`,
/// in chain order.
pub fn query<'a>(
    blocks: &'a [LedgerBlock],
    kind: RecordKind,
    filter: &[(&str, Value)],
) -> Vec<&'a LedgerRecord> {
    blocks
        .iter()
        .flat_map(|b| &b.records)
        .filter(|r| r.kind == kind)
        .filter(|r| filter.iter().all(|(k, v)| r.payload.get(*k) == Some(v)))
        .collect()
}

pub fn balance(blocks: &[LedgerBlock], user: &str) -> i64 {
    query(blocks, RecordKind::TokenReward, &[("user_id", json!(user))])
        .iter()
        .filter_map(|r| r.payload["amount"].as_i64())
        .sum()
}

/// Request records per UTC calendar date of the record timestamp.
pub fn requests_per_day(blocks: &[LedgerBlock]) -> BTreeMap<NaiveDate, u64> {
    let mut out = BTreeMap::new();
    for r in blocks.iter().flat_map(|b| &b.records) {
        if r.kind != RecordKind::Request {
            continue;
        }
        if let Some(dt) = DateTime::from_timestamp(r.timestamp, 0) {
            *out.entry(dt.date_naive()).or_default() += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> Ledger {
        Ledger::in_memory(Arc::new(FixedClock(1_700_000_000)))
    }

    #[test]
    fn line_without_hash_field_is_the_hashed_body() {
        let mut l = ledger();
        let b = l
            .append(vec![LedgerRecord::token_reward("ü \"x\"", 3, "feedback", 9)])
            .unwrap()
            .clone();
        let line = b.to_line();
        assert_eq!(&line[..HASH_FIELD_LEN], format!("{{\"hash\":\"{}\",", b.hash));
        let body = json!({"index": b.index, "prev_hash": b.prev_hash, "timestamp": b.timestamp, "records": b.records});
        assert_eq!(format!("{{{}", &line[HASH_FIELD_LEN..]), canonical(&body));
    }

    #[test]
    fn genesis_and_links() {
        let mut l = ledger();
        let b0 = l.append(vec![LedgerRecord::request("u", "/mood", 1)]).unwrap().clone();
        assert_eq!(b0.index, 0);
        assert_eq!(b0.prev_hash, GENESIS_PREV_HASH);
        assert!(is_hex64(&b0.hash));
        let b1 = l.append(vec![LedgerRecord::request("u", "/mood", 2)]).unwrap().clone();
        assert_eq!(b1.prev_hash, b0.hash);
        assert!(l.verify().ok);
    }

    #[test]
    fn record_schema() {
        let mut l = ledger();
        let r = LedgerRecord::new(
            RecordKind::TokenReward,
            json!({"user_id": "u", "reason": "x"}),
            SYSTEM_ACTOR,
            0,
        );
        assert!(matches!(
            l.append(vec![r]),
            Err(LedgerError::InvalidRecord { kind: RecordKind::TokenReward, .. })
        ));
        assert!(matches!(l.append(vec![]), Err(LedgerError::EmptyBlock)));
        assert!(matches!(l.award_tokens("u", 0, "x"), Err(LedgerError::InvalidAmount(0))));
        assert!(l.is_empty());
        assert_eq!("song_metadata".parse::<RecordKind>().unwrap(), RecordKind::SongMetadata);
    }

    #[test]
    fn canonical_sorts_nested_keys() {
        let v = json!({"b": 1, "a": {"z": [ {"y": 1, "x": 2} ], "c": null}});
        assert_eq!(canonical(&v), r#"{"a":{"c":null,"z":[{"x":2,"y":1}]},"b":1}"#);
    }

    #[test]
    fn known_hash() {
        // sha256 of {"index":0,"prev_hash":"000…0","records":[],"timestamp":0}
        let body = format!(r#"{{"index":0,"prev_hash":"{GENESIS_PREV_HASH}","records":[],"timestamp":0}}"#);
        let want = hex::encode(Sha256::digest(body.as_bytes()));
        assert_eq!(block_hash(0, GENESIS_PREV_HASH, 0, &[]), want);
    }

    #[test]
    fn utc_day_boundary() {
        let mut l = ledger();
        // 2024-01-01T23:59:59Z and the next second
        l.append(vec![LedgerRecord::request("u", "/mood", 1_704_153_599)]).unwrap();
        l.append(vec![LedgerRecord::request("u", "/mood", 1_704_153_600)]).unwrap();
        let days: Vec<String> = l.requests_per_day().keys().map(|d| d.to_string()).collect();
        assert_eq!(days, ["2024-01-01", "2024-01-02"]);
    }
}
