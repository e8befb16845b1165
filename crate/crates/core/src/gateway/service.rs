//! Request handling independent of the HTTP framework.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ServiceConfig;
use super::provider::{CatalogProvider, ExternalTrack, StubProvider};
use crate::classifier::{train_mood_classifier, TrainedClassifier};
use crate::corpus::read_jsonl;
use crate::emotion::{make_mood_report, EmotionDistribution, EmotionLabel, MoodReport};
use crate::image::MoodImage;
use crate::ledger::{Clock, Ledger, LedgerRecord, Verification};
use crate::nn::TrainConfig;
use crate::recommender::{Catalog, Components, Feedback, Interaction, InteractionStore, SongRecord};
use crate::synthetic::glyph_dataset;

pub const DEFAULT_K: usize = 10;
pub const MAX_K: usize = 100;
pub const MOOD_ENDPOINT: &str = "/mood";
pub const RECOMMENDATIONS_ENDPOINT: &str = "/recommendations";
const UNKNOWN_USER: &str = "-";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("send exactly one of self_report or image")]
    BothOrNeitherChannel,
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("bad image: {0}")]
    BadImage(String),
    #[error("user_id must be a non-empty string")]
    InvalidUserId,
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("k must be an integer in 1..={MAX_K}, got {0:?}")]
    BadK(String),
    #[error("feedback must be \"like\" or \"skip\", got {0:?}")]
    BadFeedback(String),
    #[error("no song with id {0:?}")]
    UnknownSong(String),
    #[error("no mood has been set for user {0:?}")]
    NoMoodSet(String),
    #[error("no active session for user {0:?}")]
    NoSession(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::UnknownSong(_) => 404,
            ApiError::NoMoodSet(_) | ApiError::NoSession(_) => 409,
            ApiError::Internal(_) => 500,
            _ => 400,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BothOrNeitherChannel => "BothOrNeitherChannel",
            ApiError::UnknownLabel(_) => "UnknownLabel",
            ApiError::BadImage(_) => "BadImage",
            ApiError::InvalidUserId => "InvalidUserId",
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::BadK(_) => "BadK",
            ApiError::BadFeedback(_) => "BadFeedback",
            ApiError::UnknownSong(_) => "UnknownSong",
            ApiError::NoMoodSet(_) => "NoMoodSet",
            ApiError::NoSession(_) => "NoSession",
            ApiError::Internal(_) => "Internal",
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct MoodRequest {
    user_id: Option<String>,
    self_report: Option<String>,
    image: Option<String>,
}

#[derive(Debug, Deserialize)]
struct FeedbackRequest {
    user_id: Option<String>,
    song_id: String,
    feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub token_balance: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationView {
    pub song_id: String,
    pub title: String,
    pub artist: String,
    pub score: f64,
    pub components: Components,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalTrack>,
}

#[derive(Debug, Clone)]
struct Session {
    mood: MoodReport,
    liked: BTreeSet<String>,
    last_active: i64,
}

/// Everything a running service needs; `Service::new` takes ownership.
pub struct ServiceParts {
    pub config: ServiceConfig,
    pub catalog: Catalog,
    pub image_classifier: Arc<TrainedClassifier>,
    pub store: InteractionStore,
    pub ledger: Ledger,
    pub clock: Arc<dyn Clock>,
    pub provider: Box<dyn CatalogProvider>,
}

pub struct Service {
    config: ServiceConfig,
    catalog: Catalog,
    provider: Box<dyn CatalogProvider>,
    image_classifier: RwLock<Arc<TrainedClassifier>>,
    // lock order: sessions, then store, then ledger
    sessions: Mutex<HashMap<String, Session>>,
    store: Mutex<InteractionStore>,
    ledger: Mutex<Ledger>,
    clock: Arc<dyn Clock>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn user_of(id: Option<&str>) -> Result<&str, ApiError> {
    match id {
        Some(u) if !u.trim().is_empty() => Ok(u),
        _ => Err(ApiError::InvalidUserId),
    }
}

/// The mood-image model the service falls back to: trained on seeded
/// synthetic glyphs.
pub fn synthetic_image_classifier(
    seed: u64,
    threshold: f64,
) -> Result<TrainedClassifier, ApiError> {
    let data = glyph_dataset(40, 0.1, seed);
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    train_mood_classifier(&data, threshold, &cfg)
        .map(|t| t.classifier)
        .map_err(ApiError::internal)
}

impl Service {
    pub fn new(parts: ServiceParts) -> Self {
        Self {
            config: parts.config,
            catalog: parts.catalog,
            provider: parts.provider,
            image_classifier: RwLock::new(parts.image_classifier),
            sessions: Mutex::new(HashMap::new()),
            store: Mutex::new(parts.store),
            ledger: Mutex::new(parts.ledger),
            clock: parts.clock,
        }
    }

    /// Loads catalog, classifiers, interaction log and chain as configured.
    pub fn from_config(config: ServiceConfig, clock: Arc<dyn Clock>) -> anyhow::Result<Self> {
        use anyhow::Context;
        let entries = read_jsonl(&config.catalog_path)
            .with_context(|| format!("loading catalog {}", config.catalog_path.display()))?;
        let lyric = match &config.checkpoint_path {
            Some(p) => Some(TrainedClassifier::load(p).with_context(|| format!("loading {}", p.display()))?),
            None => None,
        };
        let songs = entries
            .iter()
            .map(|e| match &lyric {
                Some(c) => SongRecord::from_entry_with(e, c),
                None => SongRecord::from_entry(e),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let provider = Box::new(StubProvider::from_catalog(&songs));
        let catalog = Catalog::new(songs, config.blend)?;
        let image_classifier = match &config.image_checkpoint_path {
            Some(p) => TrainedClassifier::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => synthetic_image_classifier(config.seed, config.mood_threshold)?,
        };
        let store = match &config.interactions_path {
            Some(p) => InteractionStore::open(p)?,
            None => InteractionStore::new(),
        };
        let ledger = match &config.chain_path {
            Some(p) => Ledger::open_file(p, clock.clone())
                .with_context(|| format!("opening chain {}", p.display()))?,
            None => Ledger::in_memory(clock.clone()),
        };
        Ok(Self::new(ServiceParts {
            config,
            catalog,
            image_classifier: Arc::new(image_classifier),
            store,
            ledger,
            clock,
            provider,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Replaces the mood-image model; requests already running keep the
    /// one they started with.
    pub fn swap_image_classifier(&self, classifier: Arc<TrainedClassifier>) {
        *self.image_classifier.write().unwrap_or_else(|p| p.into_inner()) = classifier;
    }

    fn log_request(&self, user: &str, endpoint: &str) -> Result<(), ApiError> {
        let mut ledger = lock(&self.ledger);
        let now = ledger.now();
        ledger
            .append_at(vec![LedgerRecord::request(user, endpoint, now)], now)
            .map(|_| ())
            .map_err(ApiError::internal)
    }

    fn expire_sessions(&self, sessions: &mut HashMap<String, Session>, now: i64) {
        let ttl = self.config.session_ttl_secs;
        sessions.retain(|_, s| now - s.last_active < ttl);
    }

    /// `POST /mood`. Always leaves one request record, even on failure.
    pub fn submit_mood(&self, body: &[u8]) -> Result<MoodReport, ApiError> {
        let parsed: Result<MoodRequest, _> = serde_json::from_slice(body);
        let user = parsed
            .as_ref()
            .ok()
            .and_then(|r| r.user_id.clone())
            .filter(|u| !u.trim().is_empty());
        let result = parsed
            .map_err(|e| ApiError::BadRequest(e.to_string()))
            .and_then(|req| self.mood_inner(req));
        self.log_request(user.as_deref().unwrap_or(UNKNOWN_USER), MOOD_ENDPOINT)?;
        result
    }

    fn mood_inner(&self, req: MoodRequest) -> Result<MoodReport, ApiError> {
        let user = user_of(req.user_id.as_deref())?.to_string();
        let threshold = self.config.mood_threshold;
        let report = match (req.self_report, req.image) {
            (Some(label), None) => {
                let label: EmotionLabel = label.parse().map_err(|_| ApiError::UnknownLabel(label))?;
                make_mood_report(&EmotionDistribution::one_hot(label), threshold)
                    .map_err(ApiError::internal)?
            }
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ApiError::BadImage(e.to_string()))?;
                let img = MoodImage::from_pgm(&bytes).map_err(|e| ApiError::BadImage(e.to_string()))?;
                let classifier = self
                    .image_classifier
                    .read()
                    .unwrap_or_else(|p| p.into_inner())
                    .clone();
                let dist = classifier
                    .classify_mood_image(&img)
                    .map_err(ApiError::internal)?
                    .distribution;
                make_mood_report(&dist, threshold).map_err(ApiError::internal)?
            }
            _ => return Err(ApiError::BothOrNeitherChannel),
        };
        let now = self.clock.now();
        let mut sessions = lock(&self.sessions);
        self.expire_sessions(&mut sessions, now);
        let session = sessions.entry(user).or_insert_with(|| Session {
            mood: report.clone(),
            liked: BTreeSet::new(),
            last_active: now,
        });
        session.mood = report.clone();
        session.last_active = now;
        Ok(report)
    }

    /// `GET /recommendations`. Always leaves one request record.
    pub fn recommendations(
        &self,
        user_id: Option<&str>,
        k: Option<&str>,
    ) -> Result<Vec<RecommendationView>, ApiError> {
        let result = self.recommendations_inner(user_id, k);
        let logged = user_id.filter(|u| !u.trim().is_empty()).unwrap_or(UNKNOWN_USER);
        self.log_request(logged, RECOMMENDATIONS_ENDPOINT)?;
        result
    }

    fn recommendations_inner(
        &self,
        user_id: Option<&str>,
        k: Option<&str>,
    ) -> Result<Vec<RecommendationView>, ApiError> {
        let user = user_of(user_id)?;
        let k = match k {
            None => DEFAULT_K,
            Some(raw) => match raw.trim().parse::<usize>() {
                Ok(k) if (1..=MAX_K).contains(&k) => k,
                _ => return Err(ApiError::BadK(raw.to_string())),
            },
        };
        let now = self.clock.now();
        let (mood, exclude) = {
            let mut sessions = lock(&self.sessions);
            self.expire_sessions(&mut sessions, now);
            let s = sessions
                .get_mut(user)
                .ok_or_else(|| ApiError::NoMoodSet(user.to_string()))?;
            s.last_active = now;
            let exclude: HashSet<String> = s.liked.iter().cloned().collect();
            (s.mood.distribution, exclude)
        };
        let recs = {
            let store = lock(&self.store);
            self.catalog
                .recommend(user, &mood, &store, k, &self.config.weights, &exclude)
                .map_err(ApiError::internal)?
        };
        Ok(recs
            .into_iter()
            .map(|r| {
                let song = self.catalog.get(&r.song_id).expect("ranked from the catalog");
                RecommendationView {
                    title: song.title.clone(),
                    artist: song.artist.clone(),
                    external: song
                        .catalog_ref
                        .as_deref()
                        .and_then(|c| self.provider.lookup(c)),
                    song_id: r.song_id,
                    score: r.score,
                    components: r.components,
                }
            })
            .collect())
    }

    /// `POST /feedback`: records the event and pays one token.
    pub fn feedback(&self, body: &[u8]) -> Result<FeedbackResponse, ApiError> {
        let req: FeedbackRequest =
            serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let user = user_of(req.user_id.as_deref())?.to_string();
        let feedback = match req.feedback.as_str() {
            "like" => Feedback::Like,
            "skip" => Feedback::Skip,
            other => return Err(ApiError::BadFeedback(other.to_string())),
        };
        if self.catalog.get(&req.song_id).is_none() {
            return Err(ApiError::UnknownSong(req.song_id));
        }
        let now = self.clock.now();
        let mut sessions = lock(&self.sessions);
        self.expire_sessions(&mut sessions, now);
        let session = sessions
            .get_mut(&user)
            .ok_or_else(|| ApiError::NoSession(user.clone()))?;
        {
            let mut store = lock(&self.store);
            let ts = store.last_timestamp(&user).map_or(now, |last| last.max(now));
            store
                .append(Interaction {
                    user_id: user.clone(),
                    song_id: req.song_id.clone(),
                    feedback,
                    timestamp: ts,
                })
                .map_err(ApiError::internal)?;
        }
        let balance = {
            let mut ledger = lock(&self.ledger);
            let label = req.feedback.as_str();
            let records = vec![
                LedgerRecord::preference(&user, &req.song_id, label, now),
                LedgerRecord::token_reward(&user, 1, &format!("feedback:{label}"), now),
            ];
            ledger.append_at(records, now).map_err(ApiError::internal)?;
            ledger.balance(&user)
        };
        if feedback == Feedback::Like {
            session.liked.insert(req.song_id);
        }
        session.last_active = now;
        Ok(FeedbackResponse {
            token_balance: balance,
        })
    }

    /// `GET /ledger/verify`, over what is actually persisted.
    pub fn verify_ledger(&self) -> Result<Verification, ApiError> {
        lock(&self.ledger).verify_persisted().map_err(ApiError::internal)
    }

    /// `GET /metrics/requests`, keyed by ISO date.
    pub fn request_metrics(&self) -> BTreeMap<String, u64> {
        lock(&self.ledger)
            .requests_per_day()
            .into_iter()
            .map(|(d, n)| (d.to_string(), n))
            .collect()
    }

    pub fn token_balance(&self, user: &str) -> i64 {
        lock(&self.ledger).balance(user)
    }

    pub fn ledger_len(&self) -> usize {
        lock(&self.ledger).len()
    }
}
