//! Dense network representation, forward inference and compaction.
//!
//! Pruning is expressed as masking: a dead unit keeps its index, but all of its
//! incoming weights, its bias and its outgoing weights are exactly zero and its
//! `alive` flag is cleared. [`Network::compact`] physically drops dead units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }

    #[inline]
    pub fn apply_f64(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => logistic(x),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`. The relu derivative at
    /// zero is taken as zero.
    #[inline]
    pub fn derivative_f64(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }
}

/// Standard logistic function `1 / (1 + e^-x)`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

/// One fully connected layer. `weights[i][j]` connects unit `i` of the previous
/// layer to unit `j` of this one.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f32>,
    pub activation: ActivationKind,
    pub alive: Vec<bool>,
    pub(crate) revision: u64,
}

impl PartialEq for DenseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.bias == other.bias
            && self.activation == other.activation
            && self.alive == other.alive
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f32>, activation: ActivationKind) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Dimension {
                expected: weights.cols(),
                found: bias.len(),
            });
        }
        let alive = vec![true; bias.len()];
        Ok(Self {
            weights,
            bias,
            activation,
            alive,
            revision: 0,
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn alive_units(&self) -> impl Iterator<Item = usize> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.then_some(i))
    }

    /// Mutation counter, bumped whenever pruning touches this layer.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn touch(&mut self) {
        self.revision += 1;
    }

    /// Pre-activations `x·W + b` for a concrete input.
    fn affine(&self, x: &[f32]) -> Vec<f32> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

/// Per-feature input box, stored at parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    pub lower: Vec<f32>,
    pub upper: Vec<f32>,
}

impl InputBounds {
    pub fn uniform(dim: usize, lower: f32, upper: f32) -> Self {
        Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `Some((lo, hi))` when every feature shares the same range.
    pub fn as_scalar(&self) -> Option<(f32, f32)> {
        let (&l, &u) = (self.lower.first()?, self.upper.first()?);
        (self.lower.iter().all(|&x| x == l) && self.upper.iter().all(|&x| x == u))
            .then_some((l, u))
    }

    pub fn to_intervals(&self) -> IntervalVector {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| Interval::new_unchecked(l as f64, u as f64))
            .collect()
    }

    pub fn clip(&self, x: &mut [f32]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }
}

/// Concrete values of one layer for one input.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    pub pre: Vec<f32>,
    pub post: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub input_bounds: InputBounds,
    pub layers: Vec<DenseLayer>,
}

impl Network {
    /// Builds and validates a network with `[0, 1]` input bounds.
    pub fn new(name: impl Into<String>, layers: Vec<DenseLayer>) -> Result<Self> {
        let dim = layers.first().map_or(0, DenseLayer::fan_in);
        let net = Self {
            name: name.into(),
            input_bounds: InputBounds::uniform(dim, 0.0, 1.0),
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn with_input_bounds(mut self, bounds: InputBounds) -> Result<Self> {
        self.input_bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::fan_in)
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    /// Index of the output layer.
    #[inline]
    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    /// Indices of the prunable (hidden) layers.
    pub fn hidden_layers(&self) -> std::ops::Range<usize> {
        0..self.layers.len().saturating_sub(1)
    }

    pub fn hidden_unit_count(&self) -> usize {
        self.hidden_layers().map(|l| self.layers[l].fan_out()).sum()
    }

    pub fn dead_hidden_count(&self) -> usize {
        self.hidden_layers()
            .map(|l| {
                let layer = &self.layers[l];
                layer.fan_out() - layer.alive_count()
            })
            .sum()
    }

    /// Fraction of hidden units that have been pruned.
    pub fn sparsity(&self) -> f64 {
        let total = self.hidden_unit_count();
        if total == 0 {
            0.0
        } else {
            self.dead_hidden_count() as f64 / total as f64
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::InvalidLayer {
                layer: self.layers.len(),
                reason: "a network needs at least one hidden layer",
            });
        }
        if self.input_bounds.lower.len() != self.input_dim()
            || self.input_bounds.upper.len() != self.input_dim()
        {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: self.input_bounds.lower.len(),
            });
        }
        for (k, (&l, &u)) in self
            .input_bounds
            .lower
            .iter()
            .zip(&self.input_bounds.upper)
            .enumerate()
        {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::NonFinite(format!("input bound of feature {k}")));
            }
            if l > u {
                return Err(Error::Parse(format!(
                    "input bound of feature {k} has lower {l} > upper {u}"
                )));
            }
        }
        let out = self.output_layer();
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() || layer.alive.len() != layer.fan_out() {
                return Err(Error::Shape {
                    layer: idx,
                    detail: format!(
                        "{} columns but {} biases and {} alive flags",
                        layer.fan_out(),
                        layer.bias.len(),
                        layer.alive.len()
                    ),
                });
            }
            if idx > 0 && layer.fan_in() != self.layers[idx - 1].fan_out() {
                return Err(Error::Shape {
                    layer: idx,
                    detail: format!(
                        "fan_in {} does not match previous fan_out {}",
                        layer.fan_in(),
                        self.layers[idx - 1].fan_out()
                    ),
                });
            }
            if idx != out && layer.activation == ActivationKind::Identity {
                return Err(Error::InvalidLayer {
                    layer: idx,
                    reason: "identity activation is only allowed on the output layer",
                });
            }
            if layer.weights.as_slice().iter().any(|w| !w.is_finite())
                || layer.bias.iter().any(|b| !b.is_finite())
            {
                return Err(Error::NonFinite(format!("parameters of layer {idx}")));
            }
            if idx == out && layer.alive.iter().any(|a| !a) {
                return Err(Error::InvalidLayer {
                    layer: idx,
                    reason: "output units cannot be pruned",
                });
            }
            for unit in 0..layer.fan_out() {
                if layer.alive[unit] {
                    continue;
                }
                let incoming_zero = layer.weights.col(unit).all(|w| w == 0.0);
                let outgoing_zero = self
                    .layers
                    .get(idx + 1)
                    .is_none_or(|next| next.weights.row(unit).iter().all(|&w| w == 0.0));
                if !incoming_zero || !outgoing_zero || layer.bias[unit] != 0.0 {
                    return Err(Error::InvalidUnit {
                        layer: idx,
                        unit,
                        reason: "dead unit has non-zero parameters",
                    });
                }
            }
        }
        Ok(())
    }

    /// Logits for one input. Dead units output zero.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        let acts = self.activations(x)?;
        Ok(acts.into_iter().last().map(|a| a.post).unwrap_or_default())
    }

    /// Pre- and post-activation values of every layer for one input.
    pub fn activations(&self, x: &[f32]) -> Result<Vec<LayerActivations>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut current: Vec<f32> = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&current);
            let post: Vec<f32> = pre
                .iter()
                .zip(&layer.alive)
                .map(|(&z, &alive)| if alive { layer.activation.apply(z) } else { 0.0 })
                .collect();
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activation at layer {idx}")));
            }
            current = post.clone();
            out.push(LayerActivations { pre, post });
        }
        Ok(out)
    }

    /// Copy of the network with dead units physically removed.
    pub fn compact(&self) -> Network {
        let keep: Vec<Vec<usize>> = self
            .layers
            .iter()
            .map(|l| l.alive_units().collect())
            .collect();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let rows: Vec<usize> = if idx == 0 {
                (0..layer.fan_in()).collect()
            } else {
                keep[idx - 1].clone()
            };
            let cols = &keep[idx];
            let mut w = Matrix::zeros(rows.len(), cols.len());
            for (ri, &r) in rows.iter().enumerate() {
                for (ci, &c) in cols.iter().enumerate() {
                    w.set(ri, ci, layer.weights.get(r, c));
                }
            }
            layers.push(DenseLayer {
                weights: w,
                bias: cols.iter().map(|&c| layer.bias[c]).collect(),
                activation: layer.activation,
                alive: vec![true; cols.len()],
                revision: 0,
            });
        }
        Network {
            name: self.name.clone(),
            input_bounds: self.input_bounds.clone(),
            layers,
        }
    }

    /// Majority activation kind over the hidden layers.
    pub fn dominant_hidden_activation(&self) -> ActivationKind {
        let (mut relu, mut sigmoid) = (0usize, 0usize);
        for l in self.hidden_layers() {
            match self.layers[l].activation {
                ActivationKind::Relu => relu += self.layers[l].fan_out(),
                ActivationKind::Sigmoid => sigmoid += self.layers[l].fan_out(),
                ActivationKind::Identity => {}
            }
        }
        if sigmoid > relu {
            ActivationKind::Sigmoid
        } else {
            ActivationKind::Relu
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
