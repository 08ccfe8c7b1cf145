//! Desk-scale experiments: stochastic pruning against the one-shot baseline
//! on the bundled fixtures, scored by FGSM robustness and clean accuracy.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use dfprune::anneal::EnergyWeights;
use dfprune::eval::{evaluate_pair, AttackConfig, EvalReport};
use dfprune::prune::{one_shot_baseline, run, PruningConfig};
use dfprune::{LabeledDataset, Network, Result};

/// Directory holding the fixture models and datasets.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// `None` for the deterministic baseline.
    pub seed: Option<u64>,
    pub sparsity: f64,
    pub report: EvalReport,
    pub elapsed: Duration,
}

impl Outcome {
    /// Pruned accuracy as a fraction of the original accuracy.
    pub fn accuracy_retention(&self) -> f64 {
        if self.report.accuracy_orig == 0.0 {
            0.0
        } else {
            self.report.accuracy_pruned / self.report.accuracy_orig
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Experiment {
    pub target: f64,
    pub batch: f64,
    pub weights: EnergyWeights,
    pub attack: AttackConfig,
}

impl Experiment {
    pub fn stochastic(&self, net: &Network, ds: &LabeledDataset, seed: u64) -> Result<Outcome> {
        let start = Instant::now();
        let cfg = PruningConfig::new(self.target, self.batch, self.weights, seed);
        let (pruned, _) = run(net, &cfg)?;
        let report = evaluate_pair(net, &pruned, ds, &self.attack, None)?;
        Ok(Outcome {
            seed: Some(seed),
            sparsity: pruned.sparsity(),
            report,
            elapsed: start.elapsed(),
        })
    }

    pub fn one_shot(&self, net: &Network, ds: &LabeledDataset) -> Result<Outcome> {
        let start = Instant::now();
        let (pruned, _) = one_shot_baseline(net, self.target)?;
        let report = evaluate_pair(net, &pruned, ds, &self.attack, None)?;
        Ok(Outcome {
            seed: None,
            sparsity: pruned.sparsity(),
            report,
            elapsed: start.elapsed(),
        })
    }

    pub fn over_seeds(&self, net: &Network, ds: &LabeledDataset, seeds: &[u64]) -> Result<Vec<Outcome>> {
        seeds.iter().map(|&s| self.stochastic(net, ds, s)).collect()
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
