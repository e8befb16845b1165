//! Emotion taxonomy, probability distributions over it, mood reports and
//! classification metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Allowed deviation of a distribution's total mass from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Default probability a label needs to be reported as a detected mood.
pub const DEFAULT_MOOD_THRESHOLD: f64 = 0.30;

pub const NUM_EMOTIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmotionError {
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("mood threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("predictions and truths differ in length ({predictions} vs {truths})")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("cannot compute metrics on empty input")]
    EmptyInput,
}

/// The fixed, ordered emotion taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Happy,
    Sad,
    Surprise,
    Disgust,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_EMOTIONS] = [
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
        EmotionLabel::Disgust,
        EmotionLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = EmotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| EmotionError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A validated probability vector over [`EmotionLabel::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; NUM_EMOTIONS]")]
pub struct EmotionDistribution {
    probs: [f64; NUM_EMOTIONS],
}

impl From<EmotionDistribution> for [f64; NUM_EMOTIONS] {
    fn from(d: EmotionDistribution) -> Self {
        d.probs
    }
}

impl<'de> Deserialize<'de> for EmotionDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = <[f64; NUM_EMOTIONS]>::deserialize(deserializer)?;
        EmotionDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

impl EmotionDistribution {
    pub fn new(probs: [f64; NUM_EMOTIONS]) -> Result<Self, EmotionError> {
        validate(&probs)?;
        Ok(Self { probs })
    }

    /// Accepts any slice of the right length; used at the classifier boundary.
    pub fn from_slice(values: &[f64]) -> Result<Self, EmotionError> {
        let probs: [f64; NUM_EMOTIONS] = values.try_into().map_err(|_| {
            EmotionError::InvalidDistribution(format!(
                "expected {NUM_EMOTIONS} entries, got {}",
                values.len()
            ))
        })?;
        Self::new(probs)
    }

    /// Rescales non-negative weights to unit mass.
    pub fn normalized(weights: [f64; NUM_EMOTIONS]) -> Result<Self, EmotionError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EmotionError::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(EmotionError::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.map(|w| w / total))
    }

    pub fn one_hot(label: EmotionLabel) -> Self {
        let mut probs = [0.0; NUM_EMOTIONS];
        probs[label.index()] = 1.0;
        Self { probs }
    }

    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / NUM_EMOTIONS as f64; NUM_EMOTIONS],
        }
    }

    pub fn probs(&self) -> &[f64; NUM_EMOTIONS] {
        &self.probs
    }

    pub fn get(&self, label: EmotionLabel) -> f64 {
        self.probs[label.index()]
    }

    /// Most probable label; ties go to the lowest ordinal.
    pub fn argmax(&self) -> EmotionLabel {
        let mut best = 0;
        for i in 1..NUM_EMOTIONS {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        EmotionLabel::ALL[best]
    }

    pub fn dot(&self, other: &EmotionDistribution) -> f64 {
        self.probs.iter().zip(other.probs.iter()).map(|(a, b)| a * b).sum()
    }
}

fn validate(probs: &[f64; NUM_EMOTIONS]) -> Result<(), EmotionError> {
    for (i, p) in probs.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 || *p > 1.0 + SUM_TOLERANCE {
            return Err(EmotionError::InvalidDistribution(format!(
                "entry {} ({}) = {p} outside [0, 1]",
                i,
                EmotionLabel::ALL[i]
            )));
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(EmotionError::InvalidDistribution(format!(
            "entries sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Emotions shown to the user, possibly more than one at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoodReport {
    pub distribution: EmotionDistribution,
    pub reported: Vec<EmotionLabel>,
    pub threshold: f64,
}

/// Reports every label at or above `threshold`, most probable first.
///
/// Falls back to the single argmax label when nothing clears the threshold,
/// so the report is never empty. Equal probabilities order by label ordinal.
pub fn make_mood_report(
    dist: &EmotionDistribution,
    threshold: f64,
) -> Result<MoodReport, EmotionError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EmotionError::InvalidThreshold(threshold));
    }
    validate(dist.probs())?;

    let mut reported: Vec<EmotionLabel> = EmotionLabel::ALL
        .iter()
        .copied()
        .filter(|l| dist.get(*l) >= threshold)
        .collect();
    reported.sort_by(|a, b| {
        dist.get(*b)
            .total_cmp(&dist.get(*a))
            .then_with(|| a.index().cmp(&b.index()))
    });
    if reported.is_empty() {
        reported.push(dist.argmax());
    }

    Ok(MoodReport {
        distribution: *dist,
        reported,
        threshold,
    })
}

/// Confusion matrix indexed `[truth][prediction]`.
pub type ConfusionMatrix = [[u64; NUM_EMOTIONS]; NUM_EMOTIONS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class_precision: [f64; NUM_EMOTIONS],
    pub per_class_recall: [f64; NUM_EMOTIONS],
    pub per_class_f1: [f64; NUM_EMOTIONS],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean(values: &[f64; NUM_EMOTIONS]) -> f64 {
    values.iter().sum::<f64>() / NUM_EMOTIONS as f64
}

/// Accuracy plus per-class and macro precision, recall and F1.
///
/// Any 0/0 ratio is taken as 0, so classes absent from both lists pull the
/// macro averages down.
pub fn compute_metrics(
    predictions: &[EmotionLabel],
    truths: &[EmotionLabel],
) -> Result<ClassificationMetrics, EmotionError> {
    if predictions.len() != truths.len() {
        return Err(EmotionError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(EmotionError::EmptyInput);
    }

    let mut confusion: ConfusionMatrix = [[0; NUM_EMOTIONS]; NUM_EMOTIONS];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[t.index()][p.index()] += 1;
    }

    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..NUM_EMOTIONS).map(|c| confusion[c][c]).sum();

    let mut precision = [0.0; NUM_EMOTIONS];
    let mut recall = [0.0; NUM_EMOTIONS];
    let mut f1 = [0.0; NUM_EMOTIONS];
    for c in 0..NUM_EMOTIONS {
        let tp = confusion[c][c] as f64;
        let predicted: u64 = (0..NUM_EMOTIONS).map(|t| confusion[t][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        precision[c] = ratio(tp, predicted as f64);
        recall[c] = ratio(tp, actual as f64);
        f1[c] = ratio(2.0 * precision[c] * recall[c], precision[c] + recall[c]);
    }

    Ok(ClassificationMetrics {
        accuracy: correct as f64 / total as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion,
    })
}

impl fmt::Display for ClassificationMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1")?;
        for label in EmotionLabel::ALL {
            let i = label.index();
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                label.as_str(),
                self.per_class_precision[i],
                self.per_class_recall[i],
                self.per_class_f1[i]
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        )?;
        write!(f, "accuracy   {:.4}", self.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn dist(p: [f64; 5]) -> EmotionDistribution {
        EmotionDistribution::new(p).unwrap()
    }

    #[test]
    fn label_parsing_is_case_insensitive() {
        assert_eq!("HaPpY".parse::<EmotionLabel>().unwrap(), Happy);
        assert_eq!(Disgust.to_string(), "disgust");
        assert!("anger".parse::<EmotionLabel>().is_err());
        assert_eq!(serde_json::to_string(&Surprise).unwrap(), "\"surprise\"");
    }

    #[test]
    fn distribution_rejects_bad_mass() {
        assert!(EmotionDistribution::new([0.5, 0.5, 0.1, 0.0, 0.0]).is_err());
        assert!(EmotionDistribution::new([-0.1, 0.6, 0.5, 0.0, 0.0]).is_err());
        assert!(EmotionDistribution::new([0.2; 5]).is_ok());
        assert!(serde_json::from_str::<EmotionDistribution>("[1,1,0,0,0]").is_err());
    }

    #[test]
    fn single_dominant_mood() {
        let r = make_mood_report(&dist([0.70, 0.10, 0.05, 0.05, 0.10]), 0.30).unwrap();
        assert_eq!(r.reported, vec![Happy]);
    }

    #[test]
    fn combined_happy_and_sad() {
        let r = make_mood_report(&dist([0.45, 0.40, 0.05, 0.05, 0.05]), 0.30).unwrap();
        assert_eq!(r.reported, vec![Happy, Sad]);
    }

    #[test]
    fn uniform_falls_back_to_first_label() {
        let r = make_mood_report(&EmotionDistribution::uniform(), 0.30).unwrap();
        assert_eq!(r.reported, vec![Happy]);
    }

    #[test]
    fn reported_order_breaks_ties_by_ordinal() {
        let r = make_mood_report(&dist([0.1, 0.0, 0.45, 0.0, 0.45]), 0.30).unwrap();
        assert_eq!(r.reported, vec![Surprise, Neutral]);
        let r = make_mood_report(&dist([0.1, 0.0, 0.35, 0.0, 0.55]), 0.30).unwrap();
        assert_eq!(r.reported, vec![Neutral, Surprise]);
    }

    #[test]
    fn threshold_bounds() {
        let d = EmotionDistribution::uniform();
        assert!(matches!(
            make_mood_report(&d, 0.0),
            Err(EmotionError::InvalidThreshold(_))
        ));
        assert!(make_mood_report(&d, 1.0).is_err());
    }

    #[test]
    fn perfect_predictions_on_three_classes() {
        let labels = [Happy, Sad, Neutral];
        let m = compute_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_f1 - 0.6).abs() < 1e-12);
        for l in labels {
            assert_eq!(m.per_class_f1[l.index()], 1.0);
        }
    }

    #[test]
    fn hand_computed_two_class_case() {
        let truths = [Happy, Happy, Sad, Sad];
        let preds = [Happy, Happy, Happy, Sad];
        let m = compute_metrics(&preds, &truths).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.per_class_precision[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.per_class_recall[0], 1.0);
        assert!((m.per_class_f1[0] - 0.8).abs() < 1e-12);
        assert_eq!(m.per_class_precision[1], 1.0);
        assert_eq!(m.per_class_recall[1], 0.5);
        assert!((m.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion[1][0], 1);
    }

    #[test]
    fn total_mismatch() {
        let m = compute_metrics(&[Sad], &[Happy]).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.macro_f1, 0.0);
    }

    #[test]
    fn metric_errors() {
        assert_eq!(compute_metrics(&[], &[]), Err(EmotionError::EmptyInput));
        assert!(matches!(
            compute_metrics(&[Happy], &[Happy, Sad]),
            Err(EmotionError::LengthMismatch { .. })
        ));
    }
}
