//! Nominee/delegate pruning and the epoch loop that drives it.
//!
//! Each epoch walks the hidden layers in forward order. For every layer the
//! candidate pairs are re-ranked by saliency, the annealing chain is reset, and
//! the first `k` live candidates are evaluated: the interval impact of the
//! merge is added to the cumulative output impact, its energy is computed and
//! the annealer accepts or rejects it. Bounds are refreshed once per layer.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anneal::{energy, AnnealState, EnergyWeights};
use crate::error::{Error, Result};
use crate::interval::{output_impact, BoundsMap};
use crate::model::Network;
use crate::saliency::{saliency_list, SaliencyNorm};

/// Floor applied to the temperature so the acceptance rate stays defined.
pub const MIN_TEMPERATURE: f64 = 1e-6;
pub const DEFAULT_MAX_EPOCHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    Stochastic,
    OneShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningConfig {
    /// Fraction of hidden units to remove overall.
    pub target: f64,
    /// Fraction of a layer's alive units considered per epoch.
    pub batch_fraction: f64,
    pub weights: EnergyWeights,
    pub seed: u64,
    pub max_epochs: usize,
    pub mode: PruneMode,
    pub saliency_norm: SaliencyNorm,
}

impl PruningConfig {
    pub fn new(target: f64, batch_fraction: f64, weights: EnergyWeights, seed: u64) -> Self {
        Self {
            target,
            batch_fraction,
            weights,
            seed,
            max_epochs: DEFAULT_MAX_EPOCHS,
            mode: PruneMode::Stochastic,
            saliency_norm: SaliencyNorm::Count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::Config(format!(
                "target must lie in (0, 1), got {}",
                self.target
            )));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "batch fraction must lie in (0, 1], got {}",
                self.batch_fraction
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventDecision {
    Accepted,
    Rejected,
    SkippedDead,
}

impl EventDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            EventDecision::Accepted => "accepted",
            EventDecision::Rejected => "rejected",
            EventDecision::SkippedDead => "skipped_dead",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub epoch: usize,
    pub layer: usize,
    pub nominee: usize,
    pub delegate: usize,
    pub saliency: f64,
    pub energy_prev: Option<f64>,
    pub energy_new: Option<f64>,
    pub temperature: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub random_draw: Option<f64>,
    pub decision: EventDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub pruned: usize,
    pub sparsity: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrace {
    pub config: PruningConfig,
    pub events: Vec<PruneEvent>,
    pub epochs: Vec<EpochSummary>,
    /// False when the run stopped before reaching the target.
    pub target_reached: bool,
}

pub const TRACE_HEADER: &str =
    "epoch,layer,nominee,delegate,saliency,energy_prev,energy_new,temperature,acceptance_rate,random_draw,decision";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl PruneTrace {
    pub fn new(config: PruningConfig) -> Self {
        Self {
            config,
            events: Vec::new(),
            epochs: Vec::new(),
            target_reached: false,
        }
    }

    pub fn accepted(&self) -> impl Iterator<Item = &PruneEvent> {
        self.events
            .iter()
            .filter(|e| e.decision == EventDecision::Accepted)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.events.len() + 1));
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for e in &self.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.layer,
                e.nominee,
                e.delegate,
                e.saliency,
                opt(e.energy_prev),
                opt(e.energy_new),
                opt(e.temperature),
                opt(e.acceptance_rate),
                opt(e.random_draw),
                e.decision.as_str()
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::format::write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    /// Re-applies the accepted prunings to a copy of `original`.
    pub fn replay(&self, original: &Network) -> Result<Network> {
        let mut net = original.clone();
        for e in self.accepted() {
            prune_pair(&mut net, e.layer, e.nominee, e.delegate)?;
        }
        Ok(net)
    }
}

/// Removes nominee `i` at layer `l` and folds its outgoing weights into
/// delegate `j`.
pub fn prune_pair(net: &mut Network, l: usize, i: usize, j: usize) -> Result<()> {
    if l + 1 >= net.layers.len() {
        return Err(Error::InvalidLayer {
            layer: l,
            reason: "the output layer cannot be pruned",
        });
    }
    let width = net.layers[l].fan_out();
    for unit in [i, j] {
        if unit >= width {
            return Err(Error::InvalidUnit {
                layer: l,
                unit,
                reason: "index out of range",
            });
        }
        if !net.layers[l].alive[unit] {
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

    let layer = &mut net.layers[l];
    for r in 0..layer.fan_in() {
        layer.weights.set(r, i, 0.0);
    }
    layer.bias[i] = 0.0;
    layer.alive[i] = false;
    layer.touch();

    let next = &mut net.layers[l + 1];
    let moved: Vec<f32> = next.weights.row(i).to_vec();
    for (w, m) in next.weights.row_mut(j).iter_mut().zip(&moved) {
        *w += m;
    }
    next.weights.row_mut(i).fill(0.0);
    next.touch();
    Ok(())
}

/// Number of units to remove from a layer of `width` units at fraction `target`.
/// At least one unit always survives.
pub fn layer_target(width: usize, target: f64) -> usize {
    let want = (target * width as f64 - 1e-9).ceil().max(0.0) as usize;
    want.min(width.saturating_sub(1))
}

/// Units needed to reach `target` over `total` hidden units.
fn global_target(total: usize, target: f64) -> usize {
    (target * total as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Stateful stochastic pruning run; one call to [`Pruner::run_epoch`] per epoch.
pub struct Pruner {
    net: Network,
    bounds: BoundsMap,
    state: AnnealState,
    cfg: PruningConfig,
    layer_targets: Vec<usize>,
    global_target: usize,
    initial_dead: usize,
    epoch: usize,
    trace: PruneTrace,
}

impl Pruner {
    pub fn new(net: Network, cfg: PruningConfig) -> Result<Self> {
        cfg.validate()?;
        net.validate()?;
        let bounds = BoundsMap::build(&net)?;
        let state = AnnealState::new(net.output_dim(), cfg.seed);
        let layer_targets = net
            .hidden_layers()
            .map(|l| layer_target(net.layers[l].fan_out(), cfg.target))
            .collect();
        let global_target = global_target(net.hidden_unit_count(), cfg.target);
        let initial_dead = net.dead_hidden_count();
        let mut pruner = Self {
            net,
            bounds,
            state,
            cfg,
            layer_targets,
            global_target,
            initial_dead,
            epoch: 0,
            trace: PruneTrace::new(cfg),
        };
        pruner.trace.target_reached = pruner.target_met();
        Ok(pruner)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn bounds(&self) -> &BoundsMap {
        &self.bounds
    }

    pub fn state(&self) -> &AnnealState {
        &self.state
    }

    pub fn trace(&self) -> &PruneTrace {
        &self.trace
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn into_parts(self) -> (Network, PruneTrace) {
        (self.net, self.trace)
    }

    pub fn target_met(&self) -> bool {
        self.net.dead_hidden_count() >= self.global_target
    }

    fn layer_dead(&self, l: usize) -> usize {
        let layer = &self.net.layers[l];
        layer.fan_out() - layer.alive_count()
    }

    fn layers_exhausted(&self) -> bool {
        self.net
            .hidden_layers()
            .all(|l| self.layer_dead(l) >= self.layer_targets[l])
    }

    /// True once the target is met, no layer can make progress, or the epoch
    /// cap is reached.
    pub fn is_finished(&self) -> bool {
        self.target_met() || self.layers_exhausted() || self.epoch >= self.cfg.max_epochs
    }

    fn update_temperature(&mut self) {
        let targeted = self.global_target.saturating_sub(self.initial_dead);
        let pruned = self.net.dead_hidden_count().saturating_sub(self.initial_dead);
        let t = if targeted == 0 {
            0.0
        } else {
            1.0 - pruned as f64 / targeted as f64
        };
        self.state.temperature = t.max(MIN_TEMPERATURE);
    }

    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        self.epoch += 1;
        let epoch = self.epoch;
        let mut pruned = 0usize;
        for l in self.net.hidden_layers() {
            if self.target_met() {
                break;
            }
            let budget = self.layer_targets[l].saturating_sub(self.layer_dead(l));
            if budget == 0 || self.net.layers[l].alive_count() < 2 {
                continue;
            }
            let list = saliency_list(&self.net, l, self.cfg.saliency_norm)?;
            self.state.energy_prev = 0.0;
            let k = (self.cfg.batch_fraction * self.net.layers[l].alive_count() as f64 - 1e-9)
                .ceil()
                .max(1.0) as usize;
            let (mut considered, mut accepted) = (0usize, 0usize);
            for cand in list.iter() {
                if considered == k || accepted == budget || self.target_met() {
                    break;
                }
                let (i, j) = (cand.nominee, cand.delegate);
                let alive = &self.net.layers[l].alive;
                if !alive[i] || !alive[j] {
                    self.trace.events.push(PruneEvent {
                        epoch,
                        layer: l,
                        nominee: i,
                        delegate: j,
                        saliency: cand.saliency,
                        energy_prev: None,
                        energy_new: None,
                        temperature: Some(self.state.temperature),
                        acceptance_rate: None,
                        random_draw: None,
                        decision: EventDecision::SkippedDead,
                    });
                    continue;
                }
                considered += 1;
                let impact = output_impact(&self.net, &self.bounds, l, i, j)?;
                let candidate_total = self.state.cumulative_impact.add(&impact)?;
                let e = energy(&candidate_total, &self.cfg.weights)?;
                let energy_prev = self.state.energy_prev;
                let d = self.state.decide(e)?;
                self.trace.events.push(PruneEvent {
                    epoch,
                    layer: l,
                    nominee: i,
                    delegate: j,
                    saliency: cand.saliency,
                    energy_prev: Some(energy_prev),
                    energy_new: Some(e),
                    temperature: Some(self.state.temperature),
                    acceptance_rate: Some(d.acceptance_rate),
                    random_draw: d.random_draw,
                    decision: if d.accepted {
                        EventDecision::Accepted
                    } else {
                        EventDecision::Rejected
                    },
                });
                if d.accepted {
                    prune_pair(&mut self.net, l, i, j)?;
                    self.state.cumulative_impact = candidate_total;
                    accepted += 1;
                }
            }
            if accepted > 0 {
                self.bounds.refresh(&self.net, l)?;
            }
            pruned += accepted;
            self.update_temperature();
        }
        self.trace.target_reached = self.target_met();
        let summary = EpochSummary {
            epoch,
            pruned,
            sparsity: self.net.sparsity(),
            temperature: self.state.temperature,
        };
        self.trace.epochs.push(summary.clone());
        Ok(summary)
    }

    /// Runs epochs until [`Pruner::is_finished`].
    pub fn run_to_completion(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(())
    }
}

/// Prunes `net` according to `cfg.mode`.
pub fn run(net: &Network, cfg: &PruningConfig) -> Result<(Network, PruneTrace)> {
    match cfg.mode {
        PruneMode::Stochastic => {
            let mut p = Pruner::new(net.clone(), *cfg)?;
            p.run_to_completion()?;
            Ok(p.into_parts())
        }
        PruneMode::OneShot => {
            let (pruned, mut trace) = one_shot_baseline(net, cfg.target)?;
            trace.config = *cfg;
            Ok((pruned, trace))
        }
    }
}

/// Greedy single-pass pruning of the lowest-saliency pairs in every layer.
pub fn one_shot_baseline(net: &Network, target: f64) -> Result<(Network, PruneTrace)> {
    let mut cfg = PruningConfig::new(target.max(f64::MIN_POSITIVE), 1.0, EnergyWeights::default(), 0);
    cfg.mode = PruneMode::OneShot;
    cfg.max_epochs = 1;
    let mut out = net.clone();
    let mut trace = PruneTrace::new(cfg);
    if target <= 0.0 {
        trace.target_reached = true;
        return Ok((out, trace));
    }
    for l in net.hidden_layers() {
        let want = layer_target(out.layers[l].fan_out(), target);
        let mut dead = out.layers[l].fan_out() - out.layers[l].alive_count();
        if dead >= want || out.layers[l].alive_count() < 2 {
            continue;
        }
        let list = saliency_list(&out, l, SaliencyNorm::Count)?;
        for cand in list.iter() {
            if dead >= want {
                break;
            }
            let alive = &out.layers[l].alive;
            if !alive[cand.nominee] || !alive[cand.delegate] {
                continue;
            }
            prune_pair(&mut out, l, cand.nominee, cand.delegate)?;
            dead += 1;
            trace.events.push(PruneEvent {
                epoch: 1,
                layer: l,
                nominee: cand.nominee,
                delegate: cand.delegate,
                saliency: cand.saliency,
                energy_prev: None,
                energy_new: None,
                temperature: None,
                acceptance_rate: None,
                random_draw: None,
                decision: EventDecision::Accepted,
            });
        }
    }
    trace.target_reached = out.sparsity() + 1e-12 >= target;
    trace.epochs.push(EpochSummary {
        epoch: 1,
        pruned: trace.events.len(),
        sparsity: out.sparsity(),
        temperature: 0.0,
    });
    Ok((out, trace))
}
