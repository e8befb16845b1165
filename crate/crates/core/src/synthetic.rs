//! Seeded desk-scale datasets that are separable by construction: keyword
//! lyrics (every class owns a few words no other class uses) and glyph
//! images (every class lights a different region of the frame).

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EmotionTags, SongEntry};
use crate::emotion::EmotionLabel;
use crate::image::{LabeledMoodImage, MoodImage};
use crate::nn::IMAGE_SIDE;

/// The word reserved for each class.
pub fn class_keyword(label: EmotionLabel) -> &'static str {
    match label {
        EmotionLabel::Happy => "sunshine",
        EmotionLabel::Sad => "tears",
        EmotionLabel::Surprise => "suddenly",
        EmotionLabel::Disgust => "rotten",
        EmotionLabel::Neutral => "window",
    }
}

const FILLER: &[&str] = &[
    "night", "road", "heart", "time", "light", "city", "river", "dream", "song", "sky", "train",
    "morning", "hands", "fire", "home", "summer", "winter", "radio", "street", "ocean", "stars",
    "voice", "shadow", "paper", "money", "car", "door", "letter", "phone", "garden", "mountain",
    "coffee", "echo", "silver", "gold", "wire", "glass", "stone", "cloud", "wheel",
];

const GLUE: &[&str] = &["the", "and", "my", "you", "in", "of", "to", "we", "oh", "yeah"];

/// `per_class` songs for every label, in label-major order.
pub fn keyword_corpus(per_class: usize, seed: u64) -> Vec<SongEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut songs = Vec::with_capacity(per_class * EmotionLabel::ALL.len());
    for label in EmotionLabel::ALL {
        for n in 0..per_class {
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..rng.random_range(10..=20) {
                words.push(FILLER.choose(&mut rng).expect("non-empty"));
            }
            for _ in 0..rng.random_range(3..=8) {
                words.push(GLUE.choose(&mut rng).expect("non-empty"));
            }
            for _ in 0..rng.random_range(2..=4) {
                words.push(class_keyword(label));
            }
            // Fisher-Yates so keywords land anywhere in the line
            for i in (1..words.len()).rev() {
                let j = rng.random_range(0..=i);
                words.swap(i, j);
            }
            songs.push(SongEntry {
                id: format!("{label}-{n:03}"),
                title: format!("{} {}", capitalize(words[0]), words[1]),
                artist: format!("Synth {}", n % 7),
                lyrics: words.join(" "),
                emotion: EmotionTags::Single(label),
                catalog_ref: None,
            });
        }
    }
    songs
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Region `(row0, col0, rows, cols)` lit up for a label.
fn glyph_region(label: EmotionLabel) -> (usize, usize, usize, usize) {
    match label {
        EmotionLabel::Happy => (4, 4, 16, 16),
        EmotionLabel::Sad => (4, 28, 16, 16),
        EmotionLabel::Surprise => (28, 4, 16, 16),
        EmotionLabel::Disgust => (28, 28, 16, 16),
        EmotionLabel::Neutral => (21, 4, 6, 40),
    }
}

fn draw(label: EmotionLabel, intensity: f32, dr: isize, dc: isize) -> Vec<f32> {
    let mut px = vec![0.0f32; IMAGE_SIDE * IMAGE_SIDE];
    let (r0, c0, h, w) = glyph_region(label);
    for r in 0..h {
        for c in 0..w {
            let rr = (r0 + r) as isize + dr;
            let cc = (c0 + c) as isize + dc;
            if (0..IMAGE_SIDE as isize).contains(&rr) && (0..IMAGE_SIDE as isize).contains(&cc) {
                px[rr as usize * IMAGE_SIDE + cc as usize] = intensity;
            }
        }
    }
    px
}

/// The noiseless, centered glyph of a label.
pub fn glyph(label: EmotionLabel) -> MoodImage {
    MoodImage::new(draw(label, 1.0, 0, 0)).expect("valid glyph")
}

/// Jittered copies of every glyph: shifted by up to 2 px, intensity in
/// `[0.6, 1]`, uniform pixel noise of amplitude `noise`, clamped to `[0, 1]`.
pub fn glyph_dataset(per_class: usize, noise: f32, seed: u64) -> Vec<LabeledMoodImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * EmotionLabel::ALL.len());
    for label in EmotionLabel::ALL {
        for _ in 0..per_class {
            let intensity = rng.random_range(0.6..=1.0f32);
            let dr = rng.random_range(-2..=2i64) as isize;
            let dc = rng.random_range(-2..=2i64) as isize;
            let mut px = draw(label, intensity, dr, dc);
            if noise > 0.0 {
                for v in &mut px {
                    *v = (*v + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
                }
            }
            out.push(LabeledMoodImage {
                pixels: MoodImage::new(px).expect("clamped"),
                label,
            });
        }
    }
    out
}
