//! Binary labeled datasets (`NNDS`).
//!
//! Layout, little-endian: magic `NNDS`, u32 version (=1), u32 n_samples,
//! u32 n_features, u32 n_classes, then `n_samples × n_features` f32 row-major,
//! then `n_samples` u32 labels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<f32>,
    labels: Vec<u32>,
    n_features: usize,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<f32>, labels: Vec<u32>, n_features: usize, n_classes: usize) -> Result<Self> {
        if samples.len() != labels.len() * n_features {
            return Err(Error::Dimension {
                expected: labels.len() * n_features,
                found: samples.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::Parse(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            samples,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.samples[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], u32)> + '_ {
        (0..self.len()).map(move |i| (self.sample(i), self.labels[i]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Parse("dataset header truncated".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse("bad dataset magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        let version = word(0);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (n, f, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let expected = n
            .checked_mul(f)
            .and_then(|nf| nf.checked_add(n))
            .and_then(|words| words.checked_mul(4))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Parse("dataset header counts overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Parse(format!(
                "dataset payload is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let (feat, lab) = body.split_at(n * f * 4);
        let samples: Vec<f32> = feat
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset feature".into()));
        }
        let labels = lab
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(samples, labels, f, c)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.samples.len() + self.labels.len()));
        out.extend_from_slice(MAGIC);
        for w in [VERSION, self.len() as u32, self.n_features as u32, self.n_classes as u32] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for y in &self.labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    LabeledDataset::from_bytes(&fs::read(path)?)
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    crate::format::write_atomic(path.as_ref(), &ds.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_samples() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"NNDS");
        for w in [1u32, 2, 3, 2] {
            b.extend_from_slice(&w.to_le_bytes());
        }
        for v in [0.0f32, 0.5, 1.0, 0.25, 0.75, 0.125] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for y in [0u32, 1] {
            b.extend_from_slice(&y.to_le_bytes());
        }
        b
    }

    #[test]
    fn parses_hand_written_file() {
        let ds = LabeledDataset::from_bytes(&two_samples()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample(1), &[0.25, 0.75, 0.125]);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.to_bytes(), two_samples());
    }

    #[test]
    fn truncated_payload() {
        let b = two_samples();
        assert!(matches!(
            LabeledDataset::from_bytes(&b[..b.len() - 1]),
            Err(Error::Parse(_))
        ));
        assert!(LabeledDataset::from_bytes(&b[..10]).is_err());
    }

    #[test]
    fn bad_magic_and_label() {
        let mut b = two_samples();
        b[0] = b'X';
        assert!(LabeledDataset::from_bytes(&b).is_err());
        let mut b = two_samples();
        let n = b.len();
        b[n - 4..].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(LabeledDataset::from_bytes(&b), Err(Error::Parse(m)) if m.contains("label")));
    }
}
