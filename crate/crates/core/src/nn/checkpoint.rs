//! Checkpoint files: a text manifest terminated by an `end` line, followed
//! by every parameter as little-endian `f32` in layer order.
//!
//! ```text
//! moodtune-checkpoint 1
//! seed 42
//! input 64
//! layer embedding vocab=50 dim=32
//! layer relu
//! param 0 0 50x32 offset=0 count=1600
//! meta seq_len 64
//! end
//! <binary payload>
//! ```
//!
//! Offsets are byte offsets into the payload.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::layer::LayerSpec;
use super::model::Model;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &str = "moodtune-checkpoint 1";

/// A model plus free-form string metadata carried in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: BTreeMap<String, String>,
}

fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_dims(s: &str) -> Result<Vec<usize>, NnError> {
    s.split('x')
        .map(|d| {
            d.parse()
                .map_err(|_| NnError::Checkpoint(format!("bad dimensions {s:?}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let mut header = String::new();
        let _ = writeln!(header, "{MAGIC}");
        let _ = writeln!(header, "seed {}", self.model.seed());
        let _ = writeln!(header, "input {}", dims(self.model.input_shape()));
        for layer in self.model.layers() {
            let _ = writeln!(header, "layer {layer}");
        }
        let mut offset = 0usize;
        for (li, group) in self.model.params().iter().enumerate() {
            for (slot, t) in group.iter().enumerate() {
                let _ = writeln!(
                    header,
                    "param {li} {slot} {} offset={offset} count={}",
                    dims(t.shape()),
                    t.len()
                );
                offset += t.len() * 4;
            }
        }
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(NnError::Checkpoint(format!("unencodable meta entry {k:?}")));
            }
            let _ = writeln!(header, "meta {k} {v}");
        }
        header.push_str("end\n");

        let mut bytes = header.into_bytes();
        bytes.reserve(offset);
        for v in self.model.params().iter().flatten().flat_map(|t| t.data()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        let end_marker = b"\nend\n";
        let header_end = bytes
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| bad("manifest has no end line"))?
            + end_marker.len();
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| bad("manifest is not UTF-8"))?;
        let payload = &bytes[header_end..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a moodtune checkpoint"));
        }
        let mut seed = None;
        let mut input = None;
        let mut layers = Vec::new();
        let mut entries: Vec<(usize, usize, Vec<usize>, usize, usize)> = Vec::new();
        let mut meta = BTreeMap::new();
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "seed" => seed = Some(rest.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "input" => input = Some(parse_dims(rest)?),
                "layer" => layers.push(rest.parse::<LayerSpec>()?),
                "param" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    let [li, slot, shape, offset, count] = f[..] else {
                        return Err(bad("bad param line"));
                    };
                    let num = |s: &str, prefix: &str| {
                        s.strip_prefix(prefix)
                            .unwrap_or(s)
                            .parse::<usize>()
                            .map_err(|_| bad("bad param line"))
                    };
                    entries.push((
                        num(li, "")?,
                        num(slot, "")?,
                        parse_dims(shape)?,
                        num(offset, "offset=")?,
                        num(count, "count=")?,
                    ));
                }
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "end" => break,
                _ => return Err(bad("unknown manifest line")),
            }
        }
        let seed = seed.ok_or_else(|| bad("missing seed"))?;
        let input = input.ok_or_else(|| bad("missing input shape"))?;

        let mut params: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); layers.len()];
        for (li, slot, shape, offset, count) in entries {
            if li >= layers.len() || slot != params[li].len() {
                return Err(bad("parameter entries out of order"));
            }
            let end = offset
                .checked_add(count * 4)
                .filter(|e| *e <= payload.len())
                .ok_or_else(|| bad("parameter payload truncated"))?;
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params[li].push(Tensor::new(shape, data)?);
        }
        let model = Model::from_parts(input, layers, params, seed)?;
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
