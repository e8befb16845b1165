//! Blended song ranking: emotional affinity with the listener's mood,
//! item-item collaborative filtering over likes, and content similarity to
//! what the listener already liked.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, TrainedClassifier};
use crate::corpus::SongEntry;
use crate::emotion::{EmotionDistribution, EmotionError, NUM_EMOTIONS};

pub const DEFAULT_BLEND: f64 = 0.5;
const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("duplicate song id {0:?} in catalog")]
    DuplicateSong(String),
    #[error("song id must be non-empty")]
    EmptySongId,
    #[error("emotion profile of {0:?} is all zeros")]
    ZeroVector(String),
    #[error("weights must be non-negative and sum to 1, got ({alpha}, {beta}, {gamma})")]
    InvalidWeights { alpha: f64, beta: f64, gamma: f64 },
    #[error("tag blend must lie in [0, 1], got {0}")]
    InvalidBlend(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("user {user:?}: timestamp {timestamp} precedes {last}")]
    OutOfOrder { user: String, timestamp: i64, last: i64 },
    #[error("interaction log line {line}: {message}")]
    BadLog { line: usize, message: String },
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongRecord {
    pub song_id: String,
    pub title: String,
    pub artist: String,
    pub curated_tags: EmotionDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_tags: Option<EmotionDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_ref: Option<String>,
}

impl SongRecord {
    pub fn from_entry(entry: &SongEntry) -> Result<Self, RecommendError> {
        Ok(Self {
            song_id: entry.id.clone(),
            title: entry.title.clone(),
            artist: entry.artist.clone(),
            curated_tags: entry.curated_tags()?,
            predicted_tags: None,
            catalog_ref: entry.catalog_ref.clone(),
        })
    }

    /// Same as [`SongRecord::from_entry`] with `predicted_tags` filled in by
    /// a lyric classifier.
    pub fn from_entry_with(
        entry: &SongEntry,
        classifier: &TrainedClassifier,
    ) -> Result<Self, RecommendError> {
        let mut record = Self::from_entry(entry)?;
        record.predicted_tags = Some(classifier.classify_lyrics(&entry.lyrics)?);
        Ok(record)
    }
}

/// `λ·curated + (1−λ)·predicted`, renormalized; just the curated tags when
/// nothing was predicted.
pub fn song_emotion_profile(
    song: &SongRecord,
    blend: f64,
) -> Result<EmotionDistribution, RecommendError> {
    if !(0.0..=1.0).contains(&blend) {
        return Err(RecommendError::InvalidBlend(blend));
    }
    let Some(predicted) = &song.predicted_tags else {
        return Ok(song.curated_tags);
    };
    let mut w = [0.0; NUM_EMOTIONS];
    for (i, v) in w.iter_mut().enumerate() {
        *v = blend * song.curated_tags.probs()[i] + (1.0 - blend) * predicted.probs()[i];
    }
    Ok(EmotionDistribution::normalized(w)?)
}

pub fn emotion_affinity(mood: &EmotionDistribution, profile: &EmotionDistribution) -> f64 {
    mood.dot(profile).clamp(0.0, 1.0)
}

/// Cosine of two emotion profiles.
pub fn profile_cosine(
    a: &EmotionDistribution,
    b: &EmotionDistribution,
) -> Option<f64> {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(b) / (na * nb)).clamp(0.0, 1.0))
}

pub fn content_similarity(
    a: &SongRecord,
    b: &SongRecord,
    blend: f64,
) -> Result<f64, RecommendError> {
    let pa = song_emotion_profile(a, blend)?;
    let pb = song_emotion_profile(b, blend)?;
    profile_cosine(&pa, &pb).ok_or_else(|| {
        let bad = if pa.dot(&pa) == 0.0 { a } else { b };
        RecommendError::ZeroVector(bad.song_id.clone())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Like,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub song_id: String,
    pub feedback: Feedback,
    pub timestamp: i64,
}

/// Append-only feedback log, optionally mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct InteractionStore {
    events: Vec<Interaction>,
    last_seen: HashMap<String, i64>,
    // song -> users who liked it, and the reverse
    likers: HashMap<String, BTreeSet<String>>,
    liked: HashMap<String, BTreeSet<String>>,
    file: Option<PathBuf>,
}

impl InteractionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays an existing log (if any) and mirrors later appends to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RecommendError> {
        let path = path.as_ref();
        let mut store = Self::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Interaction =
                    serde_json::from_str(&line).map_err(|e| RecommendError::BadLog {
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                store.push(event)?;
            }
        }
        store.file = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn append(&mut self, event: Interaction) -> Result<(), RecommendError> {
        self.check(&event)?;
        if let Some(path) = &self.file {
            let mut line = serde_json::to_string(&event).map_err(std::io::Error::from)?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?
                .write_all(line.as_bytes())?;
        }
        self.push(event)
    }

    fn check(&self, event: &Interaction) -> Result<(), RecommendError> {
        match self.last_seen.get(&event.user_id) {
            Some(&last) if event.timestamp < last => Err(RecommendError::OutOfOrder {
                user: event.user_id.clone(),
                timestamp: event.timestamp,
                last,
            }),
            _ => Ok(()),
        }
    }

    fn push(&mut self, event: Interaction) -> Result<(), RecommendError> {
        self.check(&event)?;
        self.last_seen.insert(event.user_id.clone(), event.timestamp);
        if event.feedback == Feedback::Like {
            self.likers
                .entry(event.song_id.clone())
                .or_default()
                .insert(event.user_id.clone());
            self.liked
                .entry(event.user_id.clone())
                .or_default()
                .insert(event.song_id.clone());
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[Interaction] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_timestamp(&self, user: &str) -> Option<i64> {
        self.last_seen.get(user).copied()
    }

    /// Songs `user` has liked at least once, in id order.
    pub fn liked_by(&self, user: &str) -> impl Iterator<Item = &str> {
        self.liked.get(user).into_iter().flatten().map(String::as_str)
    }

    fn likers_of(&self, song: &str) -> Option<&BTreeSet<String>> {
        self.likers.get(song)
    }
}

/// Item-item collaborative score of `song` for `user`: the mean, over the
/// user's liked songs, of the cosine between binary like columns. The
/// querying user's own row is left out of both columns, so the score says
/// what other listeners imply rather than echoing the user's own likes.
pub fn cf_score(user: &str, song: &str, store: &InteractionStore) -> f64 {
    let Some(liked) = store.liked.get(user) else {
        return 0.0;
    };
    let Some(target) = store.likers_of(song) else {
        return 0.0;
    };
    let target_n = target.iter().filter(|u| *u != user).count();
    if target_n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for other in liked {
        let Some(col) = store.likers_of(other) else {
            continue;
        };
        let n = col.iter().filter(|u| *u != user).count();
        if n == 0 {
            continue;
        }
        let common = target
            .intersection(col)
            .filter(|u| *u != user)
            .count();
        total += common as f64 / ((target_n * n) as f64).sqrt();
    }
    (total / liked.len() as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.3,
            gamma: 0.1,
        }
    }
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, RecommendError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RecommendError> {
        let Self { alpha, beta, gamma } = *self;
        let finite = [alpha, beta, gamma].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite || (alpha + beta + gamma - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(RecommendError::InvalidWeights { alpha, beta, gamma });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub emotion_affinity: f64,
    pub cf_score: f64,
    pub content_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub song_id: String,
    pub score: f64,
    pub components: Components,
}

/// A validated catalog with every song's emotion profile precomputed.
#[derive(Debug, Clone)]
pub struct Catalog {
    songs: Vec<SongRecord>,
    profiles: Vec<EmotionDistribution>,
    index: HashMap<String, usize>,
    blend: f64,
}

impl Catalog {
    pub fn new(songs: Vec<SongRecord>, blend: f64) -> Result<Self, RecommendError> {
        if songs.is_empty() {
            return Err(RecommendError::EmptyCatalog);
        }
        let mut index = HashMap::with_capacity(songs.len());
        let mut profiles = Vec::with_capacity(songs.len());
        for (i, s) in songs.iter().enumerate() {
            if s.song_id.is_empty() {
                return Err(RecommendError::EmptySongId);
            }
            if index.insert(s.song_id.clone(), i).is_some() {
                return Err(RecommendError::DuplicateSong(s.song_id.clone()));
            }
            profiles.push(song_emotion_profile(s, blend)?);
        }
        Ok(Self {
            songs,
            profiles,
            index,
            blend,
        })
    }

    pub fn songs(&self) -> &[SongRecord] {
        &self.songs
    }

    pub fn len(&self) -> usize {
        self.songs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }

    pub fn blend(&self) -> f64 {
        self.blend
    }

    pub fn get(&self, song_id: &str) -> Option<&SongRecord> {
        self.index.get(song_id).map(|i| &self.songs[*i])
    }

    pub fn profile(&self, song_id: &str) -> Option<&EmotionDistribution> {
        self.index.get(song_id).map(|i| &self.profiles[*i])
    }

    /// Mean profile cosine between `song` and the catalog songs `user` liked;
    /// 0 for users without likes.
    pub fn content_score(&self, user: &str, song: &str, store: &InteractionStore) -> f64 {
        let Some(profile) = self.profile(song) else {
            return 0.0;
        };
        let sims: Vec<f64> = store
            .liked_by(user)
            .filter_map(|s| self.profile(s))
            .map(|p| profile_cosine(profile, p).unwrap_or(0.0))
            .collect();
        if sims.is_empty() {
            0.0
        } else {
            (sims.iter().sum::<f64>() / sims.len() as f64).clamp(0.0, 1.0)
        }
    }

    pub fn score(
        &self,
        user: &str,
        mood: &EmotionDistribution,
        song: &str,
        store: &InteractionStore,
        weights: &Weights,
    ) -> Option<Recommendation> {
        let profile = self.profile(song)?;
        let components = Components {
            emotion_affinity: emotion_affinity(mood, profile),
            cf_score: cf_score(user, song, store),
            content_score: self.content_score(user, song, store),
        };
        let score = weights.alpha * components.emotion_affinity
            + weights.beta * components.cf_score
            + weights.gamma * components.content_score;
        Some(Recommendation {
            song_id: song.to_string(),
            score: score.clamp(0.0, 1.0),
            components,
        })
    }

    /// Top `k` songs by score, ties broken by ascending id, skipping ids in
    /// `exclude`. Returns fewer than `k` when the catalog runs out.
    pub fn recommend(
        &self,
        user: &str,
        mood: &EmotionDistribution,
        store: &InteractionStore,
        k: usize,
        weights: &Weights,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Recommendation>, RecommendError> {
        if k == 0 {
            return Err(RecommendError::InvalidK);
        }
        weights.validate()?;
        let mut scored: Vec<Recommendation> = self
            .songs
            .iter()
            .filter(|s| !exclude.contains(&s.song_id))
            .filter_map(|s| self.score(user, mood, &s.song_id, store, weights))
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.song_id.cmp(&b.song_id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// One-shot form of [`Catalog::recommend`] over a plain song list.
pub fn recommend(
    user: &str,
    mood: &EmotionDistribution,
    catalog: &[SongRecord],
    store: &InteractionStore,
    k: usize,
    weights: &Weights,
    exclude: &HashSet<String>,
) -> Result<Vec<Recommendation>, RecommendError> {
    Catalog::new(catalog.to_vec(), DEFAULT_BLEND)?.recommend(user, mood, store, k, weights, exclude)
}

/// Like counts per song, handy for diagnostics.
pub fn like_counts(store: &InteractionStore) -> BTreeMap<&str, usize> {
    store
        .likers
        .iter()
        .map(|(s, users)| (s.as_str(), users.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::EmotionLabel::*;

    fn song(id: &str, curated: EmotionDistribution) -> SongRecord {
        SongRecord {
            song_id: id.into(),
            title: id.to_uppercase(),
            artist: "x".into(),
            curated_tags: curated,
            predicted_tags: None,
            catalog_ref: None,
        }
    }

    fn like(store: &mut InteractionStore, user: &str, song: &str, t: i64) {
        store
            .append(Interaction {
                user_id: user.into(),
                song_id: song.into(),
                feedback: Feedback::Like,
                timestamp: t,
            })
            .unwrap();
    }

    #[test]
    fn profile_blend() {
        let mut s = song("a", EmotionDistribution::one_hot(Happy));
        assert_eq!(song_emotion_profile(&s, 0.3).unwrap(), s.curated_tags);
        s.predicted_tags = Some(EmotionDistribution::one_hot(Sad));
        assert_eq!(
            song_emotion_profile(&s, 0.5).unwrap().probs(),
            &[0.5, 0.5, 0.0, 0.0, 0.0]
        );
        assert_eq!(song_emotion_profile(&s, 1.0).unwrap(), s.curated_tags);
        assert!(song_emotion_profile(&s, 1.5).is_err());
    }

    #[test]
    fn affinity_and_content() {
        let h = EmotionDistribution::one_hot(Happy);
        let sad = EmotionDistribution::one_hot(Sad);
        let u = EmotionDistribution::uniform();
        assert_eq!(emotion_affinity(&h, &h), 1.0);
        assert_eq!(emotion_affinity(&h, &sad), 0.0);
        assert!((emotion_affinity(&u, &u) - 0.2).abs() < 1e-12);
        let half = EmotionDistribution::new([0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let c = content_similarity(&song("a", half), &song("b", h), 0.5).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert_eq!(content_similarity(&song("a", h), &song("b", sad), 0.5).unwrap(), 0.0);
        assert!((content_similarity(&song("a", half), &song("a", half), 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cf_leaves_out_the_querying_user() {
        let mut store = InteractionStore::new();
        assert_eq!(cf_score("c", "s1", &store), 0.0);
        like(&mut store, "a", "s1", 1);
        like(&mut store, "a", "s2", 2);
        like(&mut store, "b", "s1", 3);
        like(&mut store, "b", "s2", 4);
        like(&mut store, "c", "s2", 5);
        assert!((cf_score("c", "s1", &store) - 1.0).abs() < 1e-12);
        assert_eq!(cf_score("nobody", "s1", &store), 0.0);
        assert_eq!(cf_score("c", "unliked", &store), 0.0);
    }

    #[test]
    fn timestamps_must_not_go_backwards_per_user() {
        let mut store = InteractionStore::new();
        like(&mut store, "a", "s1", 10);
        like(&mut store, "b", "s1", 5);
        let err = store
            .append(Interaction {
                user_id: "a".into(),
                song_id: "s2".into(),
                feedback: Feedback::Skip,
                timestamp: 9,
            })
            .unwrap_err();
        assert!(matches!(err, RecommendError::OutOfOrder { last: 10, .. }));
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn store_file_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let mut s = InteractionStore::open(&path).unwrap();
            like(&mut s, "a", "s1", 1);
            like(&mut s, "b", "s1", 2);
        }
        let s = InteractionStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(like_counts(&s).get("s1"), Some(&2));
    }

    #[test]
    fn ranking_rules() {
        let h = EmotionDistribution::one_hot(Happy);
        let sad = EmotionDistribution::one_hot(Sad);
        let store = InteractionStore::new();
        let w = Weights::new(1.0, 0.0, 0.0).unwrap();
        let none = HashSet::new();
        let recs = recommend("u", &h, &[song("s", sad), song("h", h)], &store, 10, &w, &none).unwrap();
        assert_eq!(recs[0].song_id, "h");
        assert_eq!(recs[0].score, 1.0);

        let recs = recommend("u", &h, &[song("b", sad), song("a", sad)], &store, 10, &w, &none).unwrap();
        assert_eq!(recs[0].song_id, "a");

        let exclude: HashSet<String> = ["h".to_string()].into();
        let recs = recommend("u", &h, &[song("s", sad), song("h", h)], &store, 10, &w, &exclude).unwrap();
        assert_eq!(recs.len(), 1);

        assert!(matches!(
            recommend("u", &h, &[], &store, 1, &w, &none),
            Err(RecommendError::EmptyCatalog)
        ));
        assert!(Weights::new(0.5, 0.5, 0.5).is_err());
        assert!(Weights::new(1.2, -0.2, 0.0).is_err());
        assert!(matches!(
            recommend("u", &h, &[song("a", h)], &store, 0, &w, &none),
            Err(RecommendError::InvalidK)
        ));
        assert!(matches!(
            Catalog::new(vec![song("a", h), song("a", sad)], 0.5),
            Err(RecommendError::DuplicateSong(_))
        ));
    }
}
