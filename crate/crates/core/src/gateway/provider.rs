//! External catalog lookup. Only an offline stub ships; a networked
//! provider would implement the same trait.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::recommender::SongRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalTrack {
    pub catalog_ref: String,
    pub provider: String,
    pub url: String,
}

pub trait CatalogProvider: Send + Sync {
    fn lookup(&self, catalog_ref: &str) -> Option<ExternalTrack>;
    /// Candidate refs for a title/artist pair, best first.
    fn search(&self, title: &str, artist: &str) -> Vec<String>;
}

/// Answers from the loaded catalog alone. Deterministic and offline.
#[derive(Debug, Clone, Default)]
pub struct StubProvider {
    by_ref: BTreeMap<String, (String, String)>,
}

impl StubProvider {
    pub fn from_catalog(songs: &[SongRecord]) -> Self {
        let by_ref = songs
            .iter()
            .filter_map(|s| {
                let r = s.catalog_ref.clone()?;
                Some((r, (s.title.to_lowercase(), s.artist.to_lowercase())))
            })
            .collect();
        Self { by_ref }
    }
}

impl CatalogProvider for StubProvider {
    fn lookup(&self, catalog_ref: &str) -> Option<ExternalTrack> {
        self.by_ref.get(catalog_ref).map(|_| ExternalTrack {
            catalog_ref: catalog_ref.to_string(),
            provider: "stub".into(),
            url: format!("stub://track/{catalog_ref}"),
        })
    }

    fn search(&self, title: &str, artist: &str) -> Vec<String> {
        let (title, artist) = (title.to_lowercase(), artist.to_lowercase());
        self.by_ref
            .iter()
            .filter(|(_, (t, a))| *t == title && (artist.is_empty() || *a == artist))
            .map(|(r, _)| r.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::{EmotionDistribution, EmotionLabel};

    #[test]
    fn stub_lookup_and_search() {
        let song = SongRecord {
            song_id: "s1".into(),
            title: "Blue".into(),
            artist: "Joni".into(),
            curated_tags: EmotionDistribution::one_hot(EmotionLabel::Sad),
            predicted_tags: None,
            catalog_ref: Some("stub:blue".into()),
        };
        let p = StubProvider::from_catalog(&[song]);
        assert_eq!(p.lookup("stub:blue").unwrap().url, "stub://track/stub:blue");
        assert!(p.lookup("stub:red").is_none());
        assert_eq!(p.search("blue", ""), vec!["stub:blue"]);
        assert!(p.search("blue", "someone else").is_empty());
    }
}
