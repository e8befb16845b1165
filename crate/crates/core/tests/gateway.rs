use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use moodtune::classifier::TrainedClassifier;
use moodtune::corpus::{write_jsonl, EmotionTags, SongEntry};
use moodtune::emotion::EmotionLabel;
use moodtune::gateway::{router, synthetic_image_classifier, Service, ServiceConfig, ServiceParts, StubProvider};
use moodtune::ledger::{Ledger, ManualClock};
use moodtune::recommender::{Catalog, InteractionStore, SongRecord, Weights};
use moodtune::synthetic::glyph;
use serde_json::{json, Value};
use tower::ServiceExt;

// 2024-03-01T12:00:00Z
const NOON: i64 = 1_709_294_400;

fn image_model() -> Arc<TrainedClassifier> {
    static CELL: OnceLock<Arc<TrainedClassifier>> = OnceLock::new();
    CELL.get_or_init(|| Arc::new(synthetic_image_classifier(0, 0.30).unwrap()))
        .clone()
}

fn entry(id: &str, label: EmotionLabel, r: Option<&str>) -> SongEntry {
    SongEntry {
        id: id.into(),
        title: format!("Title {id}"),
        artist: "Band".into(),
        lyrics: String::new(),
        emotion: EmotionTags::Single(label),
        catalog_ref: r.map(str::to_string),
    }
}

fn catalog_entries() -> Vec<SongEntry> {
    vec![
        entry("h1", EmotionLabel::Happy, Some("stub:h1")),
        entry("s1", EmotionLabel::Sad, None),
        entry("s2", EmotionLabel::Sad, None),
        entry("n1", EmotionLabel::Neutral, None),
        entry("d1", EmotionLabel::Disgust, None),
    ]
}

struct Harness {
    app: Router,
    clock: Arc<ManualClock>,
    service: Arc<Service>,
}

fn harness_with(ledger: impl FnOnce(Arc<ManualClock>) -> Ledger, weights: Weights) -> Harness {
    let clock = Arc::new(ManualClock::new(NOON));
    let songs: Vec<SongRecord> = catalog_entries().iter().map(|e| SongRecord::from_entry(e).unwrap()).collect();
    let config = ServiceConfig {
        weights,
        ..ServiceConfig::default()
    };
    let service = Arc::new(Service::new(ServiceParts {
        provider: Box::new(StubProvider::from_catalog(&songs)),
        catalog: Catalog::new(songs, config.blend).unwrap(),
        config,
        image_classifier: image_model(),
        store: InteractionStore::new(),
        ledger: ledger(clock.clone()),
        clock: clock.clone(),
    }));
    Harness {
        app: router(service.clone()),
        clock,
        service,
    }
}

fn harness() -> Harness {
    harness_with(|c| Ledger::in_memory(c), Weights::default())
}

impl Harness {
    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(match body {
                Some(v) => Body::from(v.to_string()),
                None => Body::empty(),
            })
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    async fn mood(&self, user: &str, label: &str) -> (StatusCode, Value) {
        self.call("POST", "/mood", Some(json!({"user_id": user, "self_report": label})))
            .await
    }
}

fn pgm_b64(label: EmotionLabel) -> String {
    base64::engine::general_purpose::STANDARD.encode(glyph(label).to_pgm())
}

#[tokio::test]
async fn self_report_is_one_hot() {
    let h = harness();
    let (status, body) = h.mood("u1", "happy").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["reported"], json!(["happy"]));
    assert_eq!(body["distribution"], json!([1.0, 0.0, 0.0, 0.0, 0.0]));
}

#[tokio::test]
async fn image_channel_detects_glyph() {
    let h = harness();
    let (status, body) = h
        .call("POST", "/mood", Some(json!({"user_id": "u1", "image": pgm_b64(EmotionLabel::Happy)})))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["reported"], json!(["happy"]));
}

#[tokio::test]
async fn mood_input_errors() {
    let h = harness();
    let cases = [
        (json!({"user_id": "u1"}), "BothOrNeitherChannel"),
        (
            json!({"user_id": "u1", "self_report": "happy", "image": pgm_b64(EmotionLabel::Sad)}),
            "BothOrNeitherChannel",
        ),
        (json!({"user_id": "u1", "self_report": "anger"}), "UnknownLabel"),
        (json!({"user_id": "u1", "image": "!!!not base64"}), "BadImage"),
        (json!({"user_id": "u1", "image": "UDUKMTAgMTAKMjU1Cg=="}), "BadImage"),
        (json!({"self_report": "happy"}), "InvalidUserId"),
    ];
    for (body, code) in cases {
        let (status, resp) = h.call("POST", "/mood", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["error"], code, "{body}");
    }
    let (status, _) = h.call("POST", "/mood", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn recommendations_flow() {
    let h = harness();
    let (status, body) = h.call("GET", "/recommendations?user_id=u1", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("NoMoodSet")));

    h.mood("u1", "happy").await;
    let (status, body) = h.call("GET", "/recommendations?user_id=u1&k=3", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[0]["song_id"], "h1");
    assert_eq!(list[0]["title"], "Title h1");
    assert_eq!(list[0]["external"]["url"], "stub://track/stub:h1");
    assert!(list[0]["components"]["emotion_affinity"].as_f64().unwrap() > 0.99);

    let (_, body) = h.call("GET", "/recommendations?user_id=u1&k=100", None).await;
    assert_eq!(body.as_array().unwrap().len(), 5);
    for k in ["0", "101", "ten", "-1"] {
        let (status, body) = h.call("GET", &format!("/recommendations?user_id=u1&k={k}"), None).await;
        assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadK")));
    }
}

#[tokio::test]
async fn feedback_pays_and_excludes_session_likes() {
    let h = harness();
    let like = |song: &str| json!({"user_id": "u1", "song_id": song, "feedback": "like"});
    let (status, body) = h.call("POST", "/feedback", Some(like("h1"))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("NoSession")));

    h.mood("u1", "happy").await;
    let (status, body) = h.call("POST", "/feedback", Some(like("h1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"token_balance": 1}));
    let (_, body) = h
        .call("POST", "/feedback", Some(json!({"user_id": "u1", "song_id": "s1", "feedback": "skip"})))
        .await;
    assert_eq!(body, json!({"token_balance": 2}));

    let (status, body) = h.call("POST", "/feedback", Some(like("nope"))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSong")));
    let (status, _) = h
        .call("POST", "/feedback", Some(json!({"user_id": "u1", "song_id": "h1", "feedback": "love"})))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, body) = h.call("GET", "/recommendations?user_id=u1&k=10", None).await;
    let ids: Vec<&str> = body.as_array().unwrap().iter().map(|r| r["song_id"].as_str().unwrap()).collect();
    assert!(!ids.contains(&"h1"));
    assert_eq!(ids.len(), 4);
    assert_eq!(h.service.token_balance("u1"), 2);
}

#[tokio::test]
async fn cf_reflects_other_users_likes() {
    let h = harness_with(|c| Ledger::in_memory(c), Weights::new(0.0, 1.0, 0.0).unwrap());
    for u in ["a", "b"] {
        h.mood(u, "neutral").await;
        for s in ["s1", "d1"] {
            h.call("POST", "/feedback", Some(json!({"user_id": u, "song_id": s, "feedback": "like"})))
                .await;
        }
    }
    h.mood("c", "neutral").await;
    h.call("POST", "/feedback", Some(json!({"user_id": "c", "song_id": "s1", "feedback": "like"})))
        .await;
    let (_, body) = h.call("GET", "/recommendations?user_id=c&k=1", None).await;
    assert_eq!(body[0]["song_id"], "d1");
    assert_eq!(body[0]["components"]["cf_score"], 1.0);
}

#[tokio::test]
async fn ledger_endpoints() {
    let h = harness();
    let (_, body) = h.call("GET", "/ledger/verify", None).await;
    assert_eq!(body, json!({"ok": true}));
    for _ in 0..5 {
        h.mood("u1", "sad").await;
        h.call("GET", "/recommendations?user_id=u1", None).await;
    }
    // failed calls still count
    h.call("GET", "/recommendations?user_id=ghost", None).await;
    let (_, body) = h.call("GET", "/metrics/requests", None).await;
    assert_eq!(body, json!({"2024-03-01": 11}));

    h.clock.advance(86_400);
    h.mood("u1", "sad").await;
    let (_, body) = h.call("GET", "/metrics/requests", None).await;
    assert_eq!(body, json!({"2024-03-01": 11, "2024-03-02": 1}));
}

#[tokio::test]
async fn corrupted_chain_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.jsonl");
    let p = path.clone();
    let h = harness_with(move |c| Ledger::open_file(&p, c).unwrap(), Weights::default());
    for _ in 0..4 {
        h.mood("u1", "sad").await;
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut tampered: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    tampered[2] = tampered[2].replace("/mood", "/mooo");
    std::fs::write(&path, tampered.join("\n") + "\n").unwrap();
    let (_, body) = h.call("GET", "/ledger/verify", None).await;
    assert_eq!(body, json!({"ok": false, "first_bad_index": 2}));
}

#[tokio::test]
async fn sessions_expire_after_an_idle_hour() {
    let h = harness();
    h.mood("u1", "happy").await;
    h.clock.advance(59 * 60);
    let (status, _) = h.call("GET", "/recommendations?user_id=u1", None).await;
    assert_eq!(status, StatusCode::OK);
    h.clock.advance(60 * 60);
    let (status, _) = h.call("GET", "/recommendations?user_id=u1", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_users_keep_their_own_mood() {
    let h = Arc::new(harness());
    let labels: [&'static str; 5] = ["happy", "sad", "surprise", "disgust", "neutral"];
    let mut tasks = Vec::new();
    for (i, label) in labels.into_iter().enumerate() {
        let h = h.clone();
        tasks.push(tokio::spawn(async move {
            let user = format!("user{i}");
            for _ in 0..10 {
                let (status, body) = h.mood(&user, label).await;
                assert_eq!(status, StatusCode::OK);
                assert_eq!(body["reported"], json!([label]));
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    for (i, label) in labels.iter().enumerate() {
        let (_, body) = h.call("GET", &format!("/recommendations?user_id=user{i}&k=1"), None).await;
        let song = h.service.catalog().get(body[0]["song_id"].as_str().unwrap()).unwrap();
        if *label != "surprise" {
            assert_eq!(song.curated_tags.argmax().as_str(), *label);
        }
    }
}

#[test]
fn service_from_config_files() {
    let dir = tempfile::tempdir().unwrap();
    write_jsonl(dir.path().join("songs.jsonl"), &catalog_entries()).unwrap();
    let cfg_path = dir.path().join("moodtune.conf");
    std::fs::write(&cfg_path, "catalog_path = songs.jsonl\nchain_path = chain.jsonl\ninteractions_path = events.jsonl\nseed = 3\n").unwrap();
    let cfg = ServiceConfig::load(&cfg_path).unwrap();
    let clock = Arc::new(ManualClock::new(NOON));
    let svc = Service::from_config(cfg.clone(), clock.clone()).unwrap();
    svc.submit_mood(br#"{"user_id":"u","self_report":"sad"}"#).unwrap();
    svc.feedback(br#"{"user_id":"u","song_id":"s1","feedback":"like"}"#).unwrap();
    drop(svc);
    let again = Service::from_config(cfg, clock).unwrap();
    assert_eq!(again.token_balance("u"), 1);
    assert_eq!(again.ledger_len(), 2);
    assert!(dir.path().join("events.jsonl").exists());
}
