//! Emotion classifiers over lyrics and mood images, plus evaluation and
//! retraining.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::SongEntry;
use crate::emotion::{
    compute_metrics, make_mood_report, ClassificationMetrics, EmotionDistribution, EmotionError,
    EmotionLabel, MoodReport, NUM_EMOTIONS,
};
use crate::image::{LabeledMoodImage, MoodImage};
use crate::nn::{self, Checkpoint, Model, NnError, Tensor, TrainConfig};
use crate::text::{
    EncodedLyrics, LyricsPipeline, PipelineError, StopList, Vocabulary, DEFAULT_SEQ_LEN,
    DEFAULT_VOCAB_SIZE,
};

pub const TAXONOMY_VERSION: &str = "emotions-v1";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training corpus contains a single label ({0})")]
    SingleClassCorpus(EmotionLabel),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("image must be {side}x{side} with values in [0, 1]", side = nn::IMAGE_SIDE)]
    BadImageShape,
    #[error("classifier was trained on {trained}, not {requested}")]
    WrongModality {
        trained: &'static str,
        requested: &'static str,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
}

/// A labeled example that can be fed to a classifier.
pub trait LabeledSample {
    fn input(&self) -> Tensor<f32>;
    fn label(&self) -> EmotionLabel;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLyric {
    pub song_id: String,
    pub encoded: EncodedLyrics,
    pub label: EmotionLabel,
}

pub fn lyric_tensor(encoded: &EncodedLyrics) -> Tensor<f32> {
    Tensor::vector(encoded.ids().iter().map(|id| *id as f32).collect())
}

impl LabeledSample for LabeledLyric {
    fn input(&self) -> Tensor<f32> {
        lyric_tensor(&self.encoded)
    }

    fn label(&self) -> EmotionLabel {
        self.label
    }
}

impl LabeledSample for LabeledMoodImage {
    fn input(&self) -> Tensor<f32> {
        self.pixels.to_tensor()
    }

    fn label(&self) -> EmotionLabel {
        self.label
    }
}

/// How raw input reaches the network.
#[derive(Debug, Clone, PartialEq)]
pub enum InputPipeline {
    Lyrics(LyricsPipeline),
    /// Pixels already normalized to `[0, 1]`; reports use `threshold`.
    MoodImage { threshold: f64 },
}

impl InputPipeline {
    fn name(&self) -> &'static str {
        match self {
            InputPipeline::Lyrics(_) => "lyrics",
            InputPipeline::MoodImage { .. } => "mood images",
        }
    }
}

/// A frozen model plus the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    model: Model,
    pipeline: InputPipeline,
    taxonomy_version: String,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub classifier: TrainedClassifier,
    pub loss_history: Vec<f64>,
}

fn check_corpus<S: LabeledSample>(samples: &[S]) -> Result<(), ClassifierError> {
    let first = samples.first().ok_or(ClassifierError::EmptyCorpus)?.label();
    if samples.iter().all(|s| s.label() == first) {
        return Err(ClassifierError::SingleClassCorpus(first));
    }
    Ok(())
}

fn dataset<S: LabeledSample>(samples: &[S]) -> Vec<(Tensor<f32>, usize)> {
    samples.iter().map(|s| (s.input(), s.label().index())).collect()
}

/// Trains the reference lyric CNN. The model is initialized from
/// `config.seed`, which also drives shuffling.
pub fn train_lyric_classifier(
    corpus: &[LabeledLyric],
    pipeline: LyricsPipeline,
    config: &TrainConfig,
) -> Result<Training, ClassifierError> {
    check_corpus(corpus)?;
    let model = nn::lyric_model(pipeline.vocab.id_space(), pipeline.seq_len, config.seed)?;
    let (model, loss_history) = nn::train(model, &dataset(corpus), config)?;
    Ok(Training {
        classifier: TrainedClassifier {
            model,
            pipeline: InputPipeline::Lyrics(pipeline),
            taxonomy_version: TAXONOMY_VERSION.into(),
        },
        loss_history,
    })
}

pub fn train_mood_classifier(
    images: &[LabeledMoodImage],
    threshold: f64,
    config: &TrainConfig,
) -> Result<Training, ClassifierError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EmotionError::InvalidThreshold(threshold).into());
    }
    check_corpus(images)?;
    let model = nn::mood_image_model(config.seed)?;
    let (model, loss_history) = nn::train(model, &dataset(images), config)?;
    Ok(Training {
        classifier: TrainedClassifier {
            model,
            pipeline: InputPipeline::MoodImage { threshold },
            taxonomy_version: TAXONOMY_VERSION.into(),
        },
        loss_history,
    })
}

#[derive(Debug, Clone)]
pub struct LyricOptions {
    pub stoplist: StopList,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl Default for LyricOptions {
    fn default() -> Self {
        Self {
            stoplist: StopList::default_v1(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            seq_len: DEFAULT_SEQ_LEN,
        }
    }
}

/// Builds the vocabulary from `songs`, encodes them and trains.
pub fn fit_lyric_classifier(
    songs: &[SongEntry],
    options: &LyricOptions,
    config: &TrainConfig,
) -> Result<Training, ClassifierError> {
    if songs.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    let pipeline = LyricsPipeline::fit(
        songs.iter().map(|s| s.lyrics.as_str()),
        options.stoplist.clone(),
        options.vocab_size,
        options.seq_len,
    )?;
    let corpus = label_songs(songs, &pipeline)?;
    train_lyric_classifier(&corpus, pipeline, config)
}

pub fn label_songs(
    songs: &[SongEntry],
    pipeline: &LyricsPipeline,
) -> Result<Vec<LabeledLyric>, ClassifierError> {
    songs
        .iter()
        .map(|s| {
            Ok(LabeledLyric {
                song_id: s.id.clone(),
                encoded: pipeline.encode(&s.lyrics),
                label: s.label()?,
            })
        })
        .collect()
}

/// Seeded shuffle, then the first `round(train_fraction * n)` items train.
pub fn train_test_split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((items.len() as f64) * train_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|i| items[*i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

impl TrainedClassifier {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn pipeline(&self) -> &InputPipeline {
        &self.pipeline
    }

    pub fn taxonomy_version(&self) -> &str {
        &self.taxonomy_version
    }

    pub fn lyrics_pipeline(&self) -> Option<&LyricsPipeline> {
        match &self.pipeline {
            InputPipeline::Lyrics(p) => Some(p),
            InputPipeline::MoodImage { .. } => None,
        }
    }

    /// Distribution predicted for an already-prepared input tensor.
    pub fn predict(&self, input: &Tensor<f32>) -> Result<EmotionDistribution, ClassifierError> {
        let out = self.model.forward(input)?;
        let probs: Vec<f64> = out.data().iter().map(|v| *v as f64).collect();
        let probs: [f64; NUM_EMOTIONS] = probs.try_into().map_err(|_| {
            NnError::InvalidInput(format!("model emits {} values", out.len()))
        })?;
        // f32 softmax can drift a few ulps off unit mass
        Ok(EmotionDistribution::normalized(probs)?)
    }

    /// tokenize → remove stop words → encode → forward.
    pub fn classify_lyrics(&self, lyrics: &str) -> Result<EmotionDistribution, ClassifierError> {
        let pipeline = self
            .lyrics_pipeline()
            .ok_or(ClassifierError::WrongModality {
                trained: self.pipeline.name(),
                requested: "lyrics",
            })?;
        self.predict(&lyric_tensor(&pipeline.encode(lyrics)))
    }

    pub fn classify_mood_image(&self, img: &MoodImage) -> Result<MoodReport, ClassifierError> {
        let InputPipeline::MoodImage { threshold } = self.pipeline else {
            return Err(ClassifierError::WrongModality {
                trained: self.pipeline.name(),
                requested: "mood images",
            });
        };
        let dist = self.predict(&img.to_tensor())?;
        Ok(make_mood_report(&dist, threshold)?)
    }

    /// Argmax predictions scored against the labels.
    pub fn evaluate<S: LabeledSample + Sync>(
        &self,
        test: &[S],
    ) -> Result<ClassificationMetrics, ClassifierError> {
        use rayon::prelude::*;
        if test.is_empty() {
            return Err(ClassifierError::EmptyTestSet);
        }
        let predictions: Vec<EmotionLabel> = test
            .par_iter()
            .map(|s| self.predict(&s.input()).map(|d| d.argmax()))
            .collect::<Result<_, _>>()?;
        let truths: Vec<EmotionLabel> = test.iter().map(LabeledSample::label).collect();
        Ok(compute_metrics(&predictions, &truths)?)
    }

    /// Continues training from the current parameters on `new_data` and
    /// returns a new classifier; `self` is left untouched.
    pub fn retrain<S: LabeledSample>(
        &self,
        new_data: &[S],
        config: &TrainConfig,
    ) -> Result<Training, ClassifierError> {
        if new_data.is_empty() {
            return Err(ClassifierError::EmptyCorpus);
        }
        let (model, loss_history) = nn::train(self.model.clone(), &dataset(new_data), config)?;
        Ok(Training {
            classifier: TrainedClassifier {
                model,
                pipeline: self.pipeline.clone(),
                taxonomy_version: self.taxonomy_version.clone(),
            },
            loss_history,
        })
    }

    /// Writes the checkpoint at `path`; a lyric classifier also writes its
    /// vocabulary to `<path>.vocab` and stop words to `<path>.stopwords`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let path = path.as_ref();
        let mut meta = BTreeMap::new();
        meta.insert("taxonomy".to_string(), self.taxonomy_version.clone());
        match &self.pipeline {
            InputPipeline::Lyrics(p) => {
                meta.insert("kind".into(), "lyrics".into());
                meta.insert("seq_len".into(), p.seq_len.to_string());
                p.vocab.save(sibling(path, "vocab"))?;
                std::fs::write(sibling(path, "stopwords"), p.stoplist.to_text())
                    .map_err(PipelineError::from)?;
            }
            InputPipeline::MoodImage { threshold } => {
                meta.insert("kind".into(), "mood_image".into());
                meta.insert("threshold".into(), threshold.to_string());
            }
        }
        Checkpoint {
            model: self.model.clone(),
            meta,
        }
        .save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let path = path.as_ref();
        let bad = |message: &str| ClassifierError::Checkpoint {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let Checkpoint { model, meta } = Checkpoint::load(path)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(&format!("missing meta {k}")));
        let pipeline = match get("kind")?.as_str() {
            "lyrics" => {
                let seq_len = get("seq_len")?.parse().map_err(|_| bad("bad seq_len"))?;
                let vocab = Vocabulary::load(sibling(path, "vocab"))?;
                let stoplist = StopList::load(sibling(path, "stopwords"))?;
                if model.input_shape() != [seq_len] {
                    return Err(bad("seq_len does not match the model input"));
                }
                InputPipeline::Lyrics(LyricsPipeline {
                    stoplist,
                    vocab,
                    seq_len,
                })
            }
            "mood_image" => InputPipeline::MoodImage {
                threshold: get("threshold")?.parse().map_err(|_| bad("bad threshold"))?,
            },
            _ => return Err(bad("unknown classifier kind")),
        };
        Ok(Self {
            model,
            pipeline,
            taxonomy_version: get("taxonomy")?.clone(),
        })
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
