//! Pairwise saliency of merging a nominee unit into a delegate unit.
//!
//! For nominee `i` and delegate `j` at hidden layer `l`:
//!
//! ```text
//! S(i, j) = mean(W[l+1][i, *]) * ( ||W[l][*, i] - W[l][*, j]||_2 + |b_i - b_j| / (|b_i + b_j| + eps) )
//! ```
//!
//! Lower saliency means the delegate can stand in for the nominee more safely.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;

/// Guards the bias ratio against `b_i + b_j = 0`.
pub const BIAS_EPSILON: f64 = 1e-12;

/// How the outgoing-weight sum of the nominee is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyNorm {
    /// Divide by the number of outgoing weights (mean outgoing weight).
    #[default]
    Count,
    /// Divide by the L1 norm of the outgoing weights.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub layer: usize,
    pub nominee: usize,
    pub delegate: usize,
    pub saliency: f64,
}

/// Candidate pairs of one layer, ascending by saliency; ties broken by
/// `(nominee, delegate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyList {
    pub layer: usize,
    pub pairs: Vec<CandidatePair>,
}

impl SaliencyList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CandidatePair> {
        self.pairs.iter()
    }
}

pub fn candidate_order(a: &CandidatePair, b: &CandidatePair) -> Ordering {
    a.saliency
        .total_cmp(&b.saliency)
        .then(a.nominee.cmp(&b.nominee))
        .then(a.delegate.cmp(&b.delegate))
}

fn check_pair(net: &Network, l: usize, i: usize, j: usize) -> Result<()> {
    if l + 1 >= net.layers.len() {
        return Err(Error::InvalidLayer {
            layer: l,
            reason: "saliency is only defined for hidden layers",
        });
    }
    let layer = &net.layers[l];
    for unit in [i, j] {
        if unit >= layer.fan_out() {
            return Err(Error::InvalidUnit {
                layer: l,
                unit,
                reason: "index out of range",
            });
        }
        if !layer.alive[unit] {
            return Err(Error::InvalidUnit {
                layer: l,
                unit,
                reason: "unit is dead",
            });
        }
    }
    if i == j {
        return Err(Error::InvalidUnit {
            layer: l,
            unit: i,
            reason: "nominee and delegate must differ",
        });
    }
    Ok(())
}

/// Normalised outgoing weight of unit `i` at layer `l`. Only alive units of
/// layer `l + 1` count towards the cardinality.
fn outgoing_factor(net: &Network, l: usize, i: usize, norm: SaliencyNorm) -> f64 {
    let next = &net.layers[l + 1];
    let row = next.weights.row(i);
    let sum: f64 = row.iter().map(|&w| w as f64).sum();
    let denom = match norm {
        SaliencyNorm::Count => next.alive_count() as f64,
        SaliencyNorm::L1 => row.iter().map(|&w| (w as f64).abs()).sum(),
    };
    if denom == 0.0 {
        0.0
    } else {
        sum / denom
    }
}

fn dissimilarity(net: &Network, l: usize, i: usize, j: usize) -> f64 {
    let layer = &net.layers[l];
    let sq: f64 = (0..layer.fan_in())
        .map(|r| {
            let d = layer.weights.get(r, i) as f64 - layer.weights.get(r, j) as f64;
            d * d
        })
        .sum();
    let (bi, bj) = (layer.bias[i] as f64, layer.bias[j] as f64);
    sq.sqrt() + (bi - bj).abs() / ((bi + bj).abs() + BIAS_EPSILON)
}

// Adding +0.0 folds -0.0 into 0.0 so the sort sees a single zero.
#[inline]
fn combine(factor: f64, dissimilarity: f64) -> f64 {
    factor * dissimilarity + 0.0
}

pub fn saliency(net: &Network, l: usize, i: usize, j: usize) -> Result<f64> {
    saliency_with(net, l, i, j, SaliencyNorm::Count)
}

pub fn saliency_with(net: &Network, l: usize, i: usize, j: usize, norm: SaliencyNorm) -> Result<f64> {
    check_pair(net, l, i, j)?;
    Ok(combine(outgoing_factor(net, l, i, norm), dissimilarity(net, l, i, j)))
}

/// Every ordered pair of distinct alive units at layer `l`, sorted.
pub fn saliency_list(net: &Network, l: usize, norm: SaliencyNorm) -> Result<SaliencyList> {
    if l + 1 >= net.layers.len() {
        return Err(Error::InvalidLayer {
            layer: l,
            reason: "saliency is only defined for hidden layers",
        });
    }
    let alive: Vec<usize> = net.layers[l].alive_units().collect();
    if alive.len() < 2 {
        return Err(Error::InvalidLayer {
            layer: l,
            reason: "fewer than two alive units",
        });
    }
    let factors: Vec<f64> = alive
        .iter()
        .map(|&i| outgoing_factor(net, l, i, norm))
        .collect();
    let mut pairs: Vec<CandidatePair> = alive
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| {
            let factor = factors[a];
            alive.iter().filter(move |&&j| j != i).map(move |&j| CandidatePair {
                layer: l,
                nominee: i,
                delegate: j,
                saliency: combine(factor, dissimilarity(net, l, i, j)),
            })
        })
        .collect();
    pairs.sort_by(candidate_order);
    Ok(SaliencyList { layer: l, pairs })
}
