//! Interval arithmetic over dense networks.
//!
//! [`BoundsMap`] holds the pre- and post-activation range of every unit when
//! the input ranges over the network's input box. [`pruning_impact`] and
//! [`propagate_impact`] turn one nominee/delegate merge into an interval
//! over-approximation of the resulting change `g(x) - f(x)` at the output.

use std::ops::{Add, Deref, DerefMut, Sub};

use crate::error::{Error, Result};
use crate::model::{ActivationKind, Matrix, Network};

/// Any bound larger than this in magnitude is reported as an explosion.
pub const EXPLOSION_LIMIT: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite(format!("interval [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(Error::Parse(format!("interval lower {lo} exceeds upper {hi}")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub const fn new_unchecked(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub const ZERO: Interval = Interval::point(0.0);

    #[inline]
    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Containment with an absolute slack on both sides.
    #[inline]
    pub fn contains_within(self, v: f64, slack: f64) -> bool {
        self.lo - slack <= v && v <= self.hi + slack
    }

    #[inline]
    pub fn scale(self, w: f64) -> Self {
        if w >= 0.0 {
            Self::new_unchecked(self.lo * w, self.hi * w)
        } else {
            Self::new_unchecked(self.hi * w, self.lo * w)
        }
    }

    #[inline]
    pub fn intersect(self, other: Self) -> Self {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        // Both operands are sound enclosures of the same quantity, so an empty
        // intersection can only come from rounding; collapse to a point.
        if lo <= hi {
            Self::new_unchecked(lo, hi)
        } else {
            Self::point(0.5 * (lo + hi))
        }
    }

    #[inline]
    pub fn magnitude(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn activate(self, kind: ActivationKind) -> Self {
        // All supported activations are monotone non-decreasing.
        Self::new_unchecked(kind.apply_f64(self.lo), kind.apply_f64(self.hi))
    }
}

impl Add for Interval {
    type Output = Interval;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new_unchecked(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

/// `{a - b : a ∈ self, b ∈ rhs}`.
impl Sub for Interval {
    type Output = Interval;

    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new_unchecked(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalVector(pub Vec<Interval>);

impl IntervalVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Interval::ZERO; n])
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        pairs.iter().map(|&(l, h)| Interval::new(l, h)).collect()
    }

    /// Elementwise interval sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(self.iter().zip(other.iter()).map(|(&a, &b)| a + b).collect())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.iter().map(|u| u.magnitude()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|u| u.lo.is_finite() && u.hi.is_finite())
    }
}

impl Deref for IntervalVector {
    type Target = [Interval];

    fn deref(&self) -> &[Interval] {
        &self.0
    }
}

impl DerefMut for IntervalVector {
    fn deref_mut(&mut self) -> &mut [Interval] {
        &mut self.0
    }
}

impl FromIterator<Interval> for IntervalVector {
    fn from_iter<I: IntoIterator<Item = Interval>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `out_j = Σ_i w_ij · in_i` in interval arithmetic.
pub fn interval_linear(w: &Matrix, input: &[Interval]) -> Result<IntervalVector> {
    if input.len() != w.rows() {
        return Err(Error::Dimension {
            expected: w.rows(),
            found: input.len(),
        });
    }
    let mut lo = vec![0.0f64; w.cols()];
    let mut hi = vec![0.0f64; w.cols()];
    for (i, u) in input.iter().enumerate() {
        for (j, &wij) in w.row(i).iter().enumerate() {
            if wij == 0.0 {
                continue;
            }
            let s = u.scale(wij as f64);
            lo[j] += s.lo;
            hi[j] += s.hi;
        }
    }
    Ok(lo
        .into_iter()
        .zip(hi)
        .map(|(l, h)| Interval::new_unchecked(l, h))
        .collect())
}

/// `out_j = Σ_i w_ij · in_i + b_j` in interval arithmetic.
pub fn interval_affine(w: &Matrix, b: &[f32], input: &[Interval]) -> Result<IntervalVector> {
    if b.len() != w.cols() {
        return Err(Error::Dimension {
            expected: w.cols(),
            found: b.len(),
        });
    }
    let mut out = interval_linear(w, input)?;
    for (u, &bj) in out.iter_mut().zip(b) {
        *u = *u + Interval::point(bj as f64);
    }
    Ok(out)
}

pub fn interval_activation(kind: ActivationKind, input: &[Interval]) -> IntervalVector {
    input.iter().map(|u| u.activate(kind)).collect()
}

/// Enclosure of `act(p + d) - act(p)` over `p ∈ pre`, `d ∈ delta`.
///
/// Intersects the difference of images `act(pre + delta) - act(pre)` with the
/// Lipschitz/monotonicity enclosure `L · [min(0, d⁻), max(0, d⁺)]`; both are
/// sound, so their intersection is too.
pub fn activation_delta(kind: ActivationKind, pre: Interval, delta: Interval) -> Interval {
    if delta == Interval::ZERO {
        return Interval::ZERO;
    }
    let lipschitz = match kind {
        ActivationKind::Identity => return delta,
        ActivationKind::Relu => 1.0,
        ActivationKind::Sigmoid => 0.25,
    };
    let images = (pre + delta).activate(kind) - pre.activate(kind);
    let slope = Interval::new_unchecked(delta.lo.min(0.0) * lipschitz, delta.hi.max(0.0) * lipschitz);
    images.intersect(slope)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub pre: IntervalVector,
    pub post: IntervalVector,
}

/// Pre/post-activation intervals of every unit in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMap {
    layers: Vec<LayerBounds>,
    revisions: Vec<u64>,
}

fn check_explosion(layer: usize, v: &IntervalVector) -> Result<()> {
    let mag = v
        .iter()
        .map(|u| {
            if u.lo.is_finite() && u.hi.is_finite() {
                u.magnitude()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    if mag > EXPLOSION_LIMIT {
        return Err(Error::Explosion {
            layer,
            magnitude: mag,
        });
    }
    Ok(())
}

fn layer_bounds(net: &Network, idx: usize, input: &[Interval]) -> Result<LayerBounds> {
    let layer = &net.layers[idx];
    let mut pre = interval_affine(&layer.weights, &layer.bias, input)?;
    check_explosion(idx, &pre)?;
    let mut post = interval_activation(layer.activation, &pre);
    for (u, &alive) in layer.alive.iter().enumerate() {
        if !alive {
            pre[u] = Interval::ZERO;
            post[u] = Interval::ZERO;
        }
    }
    Ok(LayerBounds { pre, post })
}

impl BoundsMap {
    /// Propagates the input box through every layer.
    pub fn build(net: &Network) -> Result<Self> {
        let mut map = Self {
            layers: Vec::with_capacity(net.layers.len()),
            revisions: Vec::with_capacity(net.layers.len()),
        };
        map.recompute(net, 0)?;
        Ok(map)
    }

    /// Recomputes layers `from_layer..` after the network was mutated there.
    pub fn refresh(&mut self, net: &Network, from_layer: usize) -> Result<()> {
        if from_layer > self.layers.len() || net.layers.len() != self.revisions.len() {
            return Err(Error::StaleBounds { layer: from_layer });
        }
        self.recompute(net, from_layer)
    }

    fn recompute(&mut self, net: &Network, from: usize) -> Result<()> {
        self.layers.truncate(from);
        self.revisions.truncate(from);
        let mut input = match from {
            0 => net.input_bounds.to_intervals(),
            _ => self.layers[from - 1].post.clone(),
        };
        for idx in from..net.layers.len() {
            let lb = layer_bounds(net, idx, &input)?;
            input = lb.post.clone();
            self.layers.push(lb);
            self.revisions.push(net.layers[idx].revision());
        }
        Ok(())
    }

    pub fn layer(&self, idx: usize) -> &LayerBounds {
        &self.layers[idx]
    }

    pub fn layers(&self) -> &[LayerBounds] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Errors if layer `idx` changed since the map last saw it.
    pub fn ensure_fresh(&self, net: &Network, idx: usize) -> Result<()> {
        match self.revisions.get(idx) {
            Some(&r) if net.layers.get(idx).map(|l| l.revision()) == Some(r) => Ok(()),
            _ => Err(Error::StaleBounds { layer: idx }),
        }
    }
}

/// Free-function form of [`BoundsMap::build`].
pub fn build_bounds_map(net: &Network) -> Result<BoundsMap> {
    BoundsMap::build(net)
}

/// Returns a copy of `bounds` recomputed from `from_layer` onwards.
pub fn refresh_bounds(net: &Network, bounds: &BoundsMap, from_layer: usize) -> Result<BoundsMap> {
    let mut out = bounds.clone();
    out.refresh(net, from_layer)?;
    Ok(out)
}

/// Interval impact at the pre-activations of layer `l + 1` of merging nominee
/// `i` into delegate `j` at layer `l`: `Δ_k = w_{i,k} · (a_j - a_i)`.
///
/// Layers `l` and `l + 1` may have been edited since the map was built (pruning
/// within a batch only refreshes bounds afterwards); every other layer must be
/// fresh.
pub fn pruning_impact(
    net: &Network,
    bounds: &BoundsMap,
    l: usize,
    i: usize,
    j: usize,
) -> Result<IntervalVector> {
    let next = l + 1;
    if next >= net.layers.len() {
        return Err(Error::InvalidLayer {
            layer: l,
            reason: "the output layer cannot be pruned",
        });
    }
    let layer = &net.layers[l];
    for (unit, reason) in [(i, "nominee"), (j, "delegate")] {
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
                reason: if reason == "nominee" {
                    "nominee is dead"
                } else {
                    "delegate is dead"
                },
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
    if bounds.len() != net.layers.len() {
        return Err(Error::StaleBounds { layer: 0 });
    }
    for idx in (0..l).chain(next + 1..net.layers.len()) {
        bounds.ensure_fresh(net, idx)?;
    }
    let post = &bounds.layer(l).post;
    let diff = post[j] - post[i];
    Ok(net.layers[next]
        .weights
        .row(i)
        .iter()
        .map(|&w| diff.scale(w as f64))
        .collect())
}

/// Carries a pre-activation impact at layer `layer` forward to the output.
pub fn propagate_impact(
    net: &Network,
    bounds: &BoundsMap,
    layer: usize,
    impact: &IntervalVector,
) -> Result<IntervalVector> {
    if layer >= net.layers.len() {
        return Err(Error::InvalidLayer {
            layer,
            reason: "no such layer",
        });
    }
    if impact.len() != net.layers[layer].fan_out() {
        return Err(Error::Dimension {
            expected: net.layers[layer].fan_out(),
            found: impact.len(),
        });
    }
    let mut delta = impact.clone();
    for m in layer..net.layers.len() {
        let l = &net.layers[m];
        let pre = &bounds.layer(m).pre;
        let post_delta: IntervalVector = delta
            .iter()
            .zip(pre.iter())
            .zip(&l.alive)
            .map(|((&d, &p), &alive)| {
                if alive {
                    activation_delta(l.activation, p, d)
                } else {
                    Interval::ZERO
                }
            })
            .collect();
        check_explosion(m, &post_delta)?;
        if m + 1 == net.layers.len() {
            return Ok(post_delta);
        }
        delta = interval_linear(&net.layers[m + 1].weights, &post_delta)?;
    }
    unreachable!("loop returns at the output layer")
}

/// Carries a post-activation impact at layer `layer` through the following
/// weight matrices to the output.
pub fn propagate_post_impact(
    net: &Network,
    bounds: &BoundsMap,
    layer: usize,
    post_impact: &IntervalVector,
) -> Result<IntervalVector> {
    if layer + 1 >= net.layers.len() {
        return Ok(post_impact.clone());
    }
    let delta = interval_linear(&net.layers[layer + 1].weights, post_impact)?;
    propagate_impact(net, bounds, layer + 1, &delta)
}

/// Output-layer impact of merging nominee `i` into delegate `j` at layer `l`.
pub fn output_impact(
    net: &Network,
    bounds: &BoundsMap,
    l: usize,
    i: usize,
    j: usize,
) -> Result<IntervalVector> {
    let delta = pruning_impact(net, bounds, l, i, j)?;
    propagate_impact(net, bounds, l + 1, &delta)
}
