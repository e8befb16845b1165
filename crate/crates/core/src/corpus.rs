//! JSON-lines song files shared by the training corpus and the catalog.
//!
//! One object per line:
//! `{"id", "title", "artist", "lyrics", "emotion"}` plus an optional
//! `"catalog_ref"`. `"emotion"` is a label, a list of labels (equal weight),
//! or an object of label weights; all are normalized into a distribution.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{EmotionDistribution, EmotionError, EmotionLabel, NUM_EMOTIONS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate song id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmotionTags {
    Single(EmotionLabel),
    Many(Vec<EmotionLabel>),
    Weighted(BTreeMap<EmotionLabel, f64>),
}

impl EmotionTags {
    pub fn to_distribution(&self) -> Result<EmotionDistribution, EmotionError> {
        let mut w = [0.0; NUM_EMOTIONS];
        match self {
            EmotionTags::Single(l) => w[l.index()] = 1.0,
            EmotionTags::Many(ls) => ls.iter().for_each(|l| w[l.index()] += 1.0),
            EmotionTags::Weighted(m) => m.iter().for_each(|(l, v)| w[l.index()] += v),
        }
        EmotionDistribution::normalized(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongEntry {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub artist: String,
    #[serde(default)]
    pub lyrics: String,
    pub emotion: EmotionTags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_ref: Option<String>,
}

impl SongEntry {
    pub fn curated_tags(&self) -> Result<EmotionDistribution, EmotionError> {
        self.emotion.to_distribution()
    }

    /// Training label: the argmax of the curated tags.
    pub fn label(&self) -> Result<EmotionLabel, EmotionError> {
        Ok(self.curated_tags()?.argmax())
    }
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<SongEntry>, CorpusError> {
    let mut songs: Vec<SongEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| CorpusError::Parse {
            line: n + 1,
            message,
        };
        let song: SongEntry = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if song.id.is_empty() {
            return Err(parse("empty song id".into()));
        }
        song.curated_tags().map_err(|e| parse(e.to_string()))?;
        if !seen.insert(song.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: n + 1,
                id: song.id,
            });
        }
        songs.push(song);
    }
    Ok(songs)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<SongEntry>, CorpusError> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl(path: impl AsRef<Path>, songs: &[SongEntry]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in songs {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
