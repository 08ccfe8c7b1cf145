//! JSON model files.
//!
//! ```json
//! {"format_version":1,"name":"...","input_dim":64,
//!  "input_bounds":{"lower":0.0,"upper":1.0},
//!  "layers":[{"units":32,"activation":"relu","weights":[[...]],"bias":[...],"alive":[...]}]}
//! ```
//!
//! `input_bounds` is either a pair of scalars or a pair of per-feature arrays.
//! Values round-trip exactly at 32-bit precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationKind, DenseLayer, InputBounds, Matrix, Network};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    input_dim: usize,
    #[serde(default)]
    input_bounds: Option<BoundsFile>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BoundsFile {
    Scalar { lower: f32, upper: f32 },
    PerFeature { lower: Vec<f32>, upper: Vec<f32> },
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    units: usize,
    activation: ActivationKind,
    weights: Vec<Vec<f32>>,
    bias: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alive: Option<Vec<bool>>,
}

pub fn parse_network(text: &str) -> Result<Network> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(file.format_version));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    let mut fan_in = file.input_dim;
    for (idx, lf) in file.layers.into_iter().enumerate() {
        if lf.weights.len() != fan_in {
            return Err(Error::Shape {
                layer: idx,
                detail: format!("expected {fan_in} weight rows, found {}", lf.weights.len()),
            });
        }
        if lf.weights.iter().any(|r| r.len() != lf.units) {
            return Err(Error::Shape {
                layer: idx,
                detail: format!("weight rows must have {} columns", lf.units),
            });
        }
        if lf.bias.len() != lf.units {
            return Err(Error::Shape {
                layer: idx,
                detail: format!("expected {} biases, found {}", lf.units, lf.bias.len()),
            });
        }
        let weights = if fan_in == 0 {
            Matrix::zeros(0, lf.units)
        } else {
            Matrix::from_rows(&lf.weights)?
        };
        let mut layer = DenseLayer::new(weights, lf.bias, lf.activation)?;
        if let Some(alive) = lf.alive {
            if alive.len() != lf.units {
                return Err(Error::Shape {
                    layer: idx,
                    detail: format!("expected {} alive flags, found {}", lf.units, alive.len()),
                });
            }
            layer.alive = alive;
        }
        fan_in = lf.units;
        layers.push(layer);
    }
    let bounds = match file.input_bounds {
        None => InputBounds::uniform(file.input_dim, 0.0, 1.0),
        Some(BoundsFile::Scalar { lower, upper }) => {
            InputBounds::uniform(file.input_dim, lower, upper)
        }
        Some(BoundsFile::PerFeature { lower, upper }) => {
            if lower.len() != file.input_dim || upper.len() != file.input_dim {
                return Err(Error::Dimension {
                    expected: file.input_dim,
                    found: lower.len().min(upper.len()),
                });
            }
            InputBounds { lower, upper }
        }
    };
    let net = Network {
        name: file.name,
        input_bounds: bounds,
        layers,
    };
    net.validate()?;
    Ok(net)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    parse_network(&fs::read_to_string(path)?)
}

/// Serializes to the compact JSON form (one line, trailing newline).
pub fn network_to_string(net: &Network) -> Result<String> {
    net.validate()?;
    let input_bounds = match net.input_bounds.as_scalar() {
        Some((lower, upper)) => BoundsFile::Scalar { lower, upper },
        None => BoundsFile::PerFeature {
            lower: net.input_bounds.lower.clone(),
            upper: net.input_bounds.upper.clone(),
        },
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        name: net.name.clone(),
        input_dim: net.input_dim(),
        input_bounds: Some(input_bounds),
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                units: l.fan_out(),
                activation: l.activation,
                weights: l.weights.to_rows(),
                bias: l.bias.clone(),
                alive: l.alive.iter().any(|a| !a).then(|| l.alive.clone()),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&file)?;
    s.push('\n');
    Ok(s)
}

/// Writes the model atomically (temporary file, then rename).
pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let text = network_to_string(net)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
