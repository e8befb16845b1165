//! C ABI over the moodtune classifier, recommender and ledger.
//!
//! Handles are opaque pointers created by `mt_*_open`/`mt_*_load` and
//! released with the matching `mt_*_free`. Every fallible call returns an
//! [`MtStatus`]; on failure [`mt_last_error`] describes what went wrong on
//! the calling thread. Strings handed out by the library must be released
//! with [`mt_string_free`].

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use moodtune::classifier::TrainedClassifier;
use moodtune::corpus::read_jsonl;
use moodtune::emotion::{make_mood_report, EmotionDistribution, NUM_EMOTIONS};
use moodtune::image::MoodImage;
use moodtune::ledger::{verify_serialized, Ledger, LedgerError, SystemClock};
use moodtune::recommender::{
    Catalog, Feedback, Interaction, InteractionStore, SongRecord, Weights,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    NotFound = 5,
    Internal = 6,
}

/// A loaded classifier checkpoint.
pub struct MtClassifier {
    inner: TrainedClassifier,
}

/// A catalog plus its feedback history.
pub struct MtRecommender {
    catalog: Catalog,
    store: InteractionStore,
}

/// A ledger backed by a JSON-lines chain file.
pub struct MtLedger {
    inner: Ledger,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(MtStatus, String);

impl Fail {
    fn invalid(msg: impl Into<String>) -> Self {
        Fail(MtStatus::InvalidArgument, msg.into())
    }
}

impl From<LedgerError> for Fail {
    fn from(e: LedgerError) -> Self {
        let status = match e {
            LedgerError::Io(_) => MtStatus::Io,
            LedgerError::Corrupt { .. } => MtStatus::Corrupt,
            _ => MtStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside moodtune");
            MtStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(MtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(MtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(MtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(MtStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_probs(out: *mut f64, d: &EmotionDistribution) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(MtStatus::NullPointer, "out_probs is null".into()));
    }
    ptr::copy_nonoverlapping(d.probs().as_ptr(), out, NUM_EMOTIONS);
    Ok(())
}

unsafe fn read_probs(p: *const f64) -> Result<EmotionDistribution, Fail> {
    if p.is_null() {
        return Err(Fail(MtStatus::NullPointer, "probs is null".into()));
    }
    let slice = std::slice::from_raw_parts(p, NUM_EMOTIONS);
    EmotionDistribution::from_slice(slice).map_err(|e| Fail::invalid(e.to_string()))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(MtStatus::Internal, "string contains NUL".into()))
}

/// Number of emotion labels; probability arrays have this many entries.
pub const MT_NUM_EMOTIONS: usize = 5;

const _: () = assert!(MT_NUM_EMOTIONS == NUM_EMOTIONS);

/// Message for the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lowercase name of label `index` (0 = happy … 4 = neutral), or null when
/// out of range. The string is static.
#[no_mangle]
pub extern "C" fn mt_emotion_name(index: u32) -> *const c_char {
    const NAMES: [&CStr; NUM_EMOTIONS] = [c"happy", c"sad", c"surprise", c"disgust", c"neutral"];
    NAMES
        .get(index as usize)
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Labels at or above `threshold` (argmax when none), most probable first.
/// Writes up to 5 label indices to `out_labels` and their count to
/// `out_count`.
///
/// # Safety
/// `probs` points to 5 doubles; `out_labels` has room for 5 entries.
#[no_mangle]
pub unsafe extern "C" fn mt_mood_report(
    probs: *const f64,
    threshold: f64,
    out_labels: *mut u32,
    out_count: *mut usize,
) -> MtStatus {
    guard(|| {
        let d = read_probs(probs)?;
        let report = make_mood_report(&d, threshold).map_err(|e| Fail::invalid(e.to_string()))?;
        if out_labels.is_null() {
            return Err(Fail(MtStatus::NullPointer, "out_labels is null".into()));
        }
        for (i, l) in report.reported.iter().enumerate() {
            out_labels.add(i).write(l.index() as u32);
        }
        write_out(out_count, report.reported.len(), "out_count")
    })
}

/// Loads a classifier checkpoint (lyrics or mood image).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mt_classifier_load(
    path: *const c_char,
    out: *mut *mut MtClassifier,
) -> MtStatus {
    guard(|| {
        let path = text(path, "path")?;
        let inner = TrainedClassifier::load(path).map_err(|e| Fail(MtStatus::Io, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(MtClassifier { inner })), "out")
    })
}

/// # Safety
/// `h` comes from [`mt_classifier_load`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_classifier_free(h: *mut MtClassifier) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Emotion distribution of a lyric text; writes 5 doubles.
///
/// # Safety
/// `h` is a live classifier, `lyrics` NUL-terminated, `out_probs` has room
/// for 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_classifier_classify_lyrics(
    h: *const MtClassifier,
    lyrics: *const c_char,
    out_probs: *mut f64,
) -> MtStatus {
    guard(|| {
        let c = handle(h, "classifier")?;
        let d = c
            .inner
            .classify_lyrics(text(lyrics, "lyrics")?)
            .map_err(|e| Fail::invalid(e.to_string()))?;
        write_probs(out_probs, &d)
    })
}

/// Emotion distribution of a 48×48 PGM image given as raw file bytes.
///
/// # Safety
/// `pgm` points to `len` readable bytes; `out_probs` has room for 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_classifier_classify_pgm(
    h: *const MtClassifier,
    pgm: *const u8,
    len: usize,
    out_probs: *mut f64,
) -> MtStatus {
    guard(|| {
        let c = handle(h, "classifier")?;
        if pgm.is_null() {
            return Err(Fail(MtStatus::NullPointer, "pgm is null".into()));
        }
        let img = MoodImage::from_pgm(std::slice::from_raw_parts(pgm, len))
            .map_err(|e| Fail::invalid(e.to_string()))?;
        let report = c
            .inner
            .classify_mood_image(&img)
            .map_err(|e| Fail::invalid(e.to_string()))?;
        write_probs(out_probs, &report.distribution)
    })
}

/// Loads a JSON-lines catalog with an empty feedback history.
///
/// # Safety
/// `catalog_path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mt_recommender_open(
    catalog_path: *const c_char,
    blend: f64,
    out: *mut *mut MtRecommender,
) -> MtStatus {
    guard(|| {
        let path = text(catalog_path, "catalog_path")?;
        let entries = read_jsonl(path).map_err(|e| Fail(MtStatus::Io, e.to_string()))?;
        let songs = entries
            .iter()
            .map(SongRecord::from_entry)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Fail::invalid(e.to_string()))?;
        let catalog = Catalog::new(songs, blend).map_err(|e| Fail::invalid(e.to_string()))?;
        let r = MtRecommender {
            catalog,
            store: InteractionStore::new(),
        };
        write_out(out, Box::into_raw(Box::new(r)), "out")
    })
}

/// # Safety
/// `h` comes from [`mt_recommender_open`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_recommender_free(h: *mut MtRecommender) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Records one like (`like != 0`) or skip. Timestamps per user must not go
/// backwards.
///
/// # Safety
/// `h` is live; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mt_recommender_add_feedback(
    h: *mut MtRecommender,
    user_id: *const c_char,
    song_id: *const c_char,
    like: i32,
    timestamp: i64,
) -> MtStatus {
    guard(|| {
        let r = handle_mut(h, "recommender")?;
        let song = text(song_id, "song_id")?;
        if r.catalog.get(song).is_none() {
            return Err(Fail(MtStatus::NotFound, format!("no song {song:?}")));
        }
        r.store
            .append(Interaction {
                user_id: text(user_id, "user_id")?.to_string(),
                song_id: song.to_string(),
                feedback: if like != 0 { Feedback::Like } else { Feedback::Skip },
                timestamp,
            })
            .map_err(|e| Fail::invalid(e.to_string()))
    })
}

/// Top-`k` songs for `user_id` in mood `probs` as a JSON array of
/// `{song_id, score, components}`. Free the result with [`mt_string_free`].
///
/// # Safety
/// `h` is live, `probs` points to 5 doubles, `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn mt_recommender_recommend(
    h: *const MtRecommender,
    user_id: *const c_char,
    probs: *const f64,
    k: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    out_json: *mut *mut c_char,
) -> MtStatus {
    guard(|| {
        let r = handle(h, "recommender")?;
        let mood = read_probs(probs)?;
        let weights = Weights::new(alpha, beta, gamma).map_err(|e| Fail::invalid(e.to_string()))?;
        let recs = r
            .catalog
            .recommend(text(user_id, "user_id")?, &mood, &r.store, k, &weights, &HashSet::new())
            .map_err(|e| Fail::invalid(e.to_string()))?;
        let json = serde_json::to_string(&recs).map_err(|e| Fail(MtStatus::Internal, e.to_string()))?;
        write_out(out_json, to_c_string(json)?, "out_json")
    })
}

/// Opens (or creates) a chain file; fails with `Corrupt` if it does not
/// verify.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_open(path: *const c_char, out: *mut *mut MtLedger) -> MtStatus {
    guard(|| {
        let inner = Ledger::open_file(text(path, "path")?, Arc::new(SystemClock))?;
        write_out(out, Box::into_raw(Box::new(MtLedger { inner })), "out")
    })
}

/// # Safety
/// `h` comes from [`mt_ledger_open`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_free(h: *mut MtLedger) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Appends one token_reward block.
///
/// # Safety
/// `h` is live; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_award_tokens(
    h: *mut MtLedger,
    user_id: *const c_char,
    amount: i64,
    reason: *const c_char,
) -> MtStatus {
    guard(|| {
        let l = handle_mut(h, "ledger")?;
        l.inner
            .award_tokens(text(user_id, "user_id")?, amount, text(reason, "reason")?)?;
        Ok(())
    })
}

/// # Safety
/// `h` is live; `user_id` NUL-terminated; `out_balance` writable.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_balance(
    h: *const MtLedger,
    user_id: *const c_char,
    out_balance: *mut i64,
) -> MtStatus {
    guard(|| {
        let l = handle(h, "ledger")?;
        write_out(out_balance, l.inner.balance(text(user_id, "user_id")?), "out_balance")
    })
}

/// Number of blocks in the chain.
///
/// # Safety
/// `h` is live; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_len(h: *const MtLedger, out_len: *mut usize) -> MtStatus {
    guard(|| write_out(out_len, handle(h, "ledger")?.inner.len(), "out_len"))
}

/// Verifies a chain file on disk. `out_ok` is 1 when every hash and link
/// checks out; otherwise 0 and `out_first_bad` holds the first bad block
/// index (it is -1 when the chain is sound).
///
/// # Safety
/// `path` is NUL-terminated; outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn mt_ledger_verify_file(
    path: *const c_char,
    out_ok: *mut i32,
    out_first_bad: *mut i64,
) -> MtStatus {
    guard(|| {
        let bytes = std::fs::read(text(path, "path")?).map_err(|e| Fail(MtStatus::Io, e.to_string()))?;
        let v = verify_serialized(&bytes);
        write_out(out_ok, i32::from(v.ok), "out_ok")?;
        write_out(out_first_bad, v.first_bad_index.map_or(-1, |i| i as i64), "out_first_bad")
    })
}
