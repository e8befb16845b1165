//! Portable graymap (PGM) input for the mood-image channel.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::emotion::EmotionLabel;
use crate::nn::{Tensor, IMAGE_SIDE};

pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad image: {0}")]
    BadImage(String),
    #[error("image must be {IMAGE_SIDE}x{IMAGE_SIDE}, got {width}x{height}")]
    BadImageShape { width: usize, height: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 48×48 grayscale image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MoodImage {
    pixels: Vec<f32>,
}

impl MoodImage {
    pub fn new(pixels: Vec<f32>) -> Result<Self, ImageError> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(ImageError::BadImage(format!(
                "expected {IMAGE_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::BadImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn blank() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], self.pixels.clone()).expect("fixed size")
    }

    /// Pixelwise `weight * self + (1 - weight) * other`.
    pub fn blend(&self, other: &MoodImage, weight: f32) -> MoodImage {
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (weight * a + (1.0 - weight) * b).clamp(0.0, 1.0))
            .collect();
        MoodImage { pixels }
    }

    /// Binary (P5) PGM with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
        out.extend(self.pixels.iter().map(|v| (v * 255.0).round() as u8));
        out
    }

    /// Accepts binary (P5) and ASCII (P2) graymaps with maxval up to 255;
    /// samples are divided by 255.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let bad = |m: &str| ImageError::BadImage(m.to_string());
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PGM header"));
            }
            header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        let magic = header[0];
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric PGM header"));
        let (width, height, maxval) = (num(header[1])?, num(header[2])?, num(header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("maxval must be in 1..=255"));
        }
        if (width, height) != (IMAGE_SIDE, IMAGE_SIDE) {
            return Err(ImageError::BadImageShape { width, height });
        }
        let samples: Vec<usize> = match magic {
            "P5" => {
                let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
                if data.len() < IMAGE_PIXELS {
                    return Err(bad("raster truncated"));
                }
                data[..IMAGE_PIXELS].iter().map(|b| *b as usize).collect()
            }
            "P2" => std::str::from_utf8(&bytes[pos..])
                .map_err(|_| bad("raster is not ASCII"))?
                .split_whitespace()
                .map(num)
                .collect::<Result<_, _>>()?,
            _ => return Err(bad("not a PGM (expected P2 or P5)")),
        };
        if samples.len() < IMAGE_PIXELS {
            return Err(bad("raster truncated"));
        }
        if samples.iter().any(|s| *s > maxval) {
            return Err(bad("sample exceeds maxval"));
        }
        let pixels = samples[..IMAGE_PIXELS]
            .iter()
            .map(|s| *s as f32 / 255.0)
            .collect();
        Ok(Self { pixels })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::from_pgm(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMoodImage {
    pub pixels: MoodImage,
    pub label: EmotionLabel,
}

/// Loads every `<label>_<n>.pgm` in `dir`, sorted by file name.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledMoodImage>, ImageError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let label = stem
                .split_once('_')
                .and_then(|(l, _)| l.parse::<EmotionLabel>().ok())
                .ok_or_else(|| {
                    ImageError::BadImage(format!("{} is not named <label>_<n>.pgm", p.display()))
                })?;
            Ok(LabeledMoodImage {
                pixels: MoodImage::load(&p)?,
                label,
            })
        })
        .collect()
}

pub fn save_image_dir(
    dir: impl AsRef<Path>,
    images: &[LabeledMoodImage],
) -> Result<(), ImageError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (n, img) in images.iter().enumerate() {
        fs::write(dir.join(format!("{}_{n}.pgm", img.label)), img.pixels.to_pgm())?;
    }
    Ok(())
}
