//! Accuracy, FGSM and robustness-preservation metrics.
//!
//! A sample `(x, y)` is a robust instance of model `g` when
//! `argmax g(x_adv) == argmax g(x) == y`, with `x_adv` an FGSM perturbation of
//! `x` crafted against either the original or the pruned model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{argmax, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CraftOn {
    Original,
    #[default]
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L∞ budget.
    pub epsilon: f64,
    /// Clip adversarial inputs to the network's input bounds.
    pub clip: bool,
    pub craft_on: CraftOn,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            clip: true,
            craft_on: CraftOn::Pruned,
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        let widest = net
            .input_bounds
            .lower
            .iter()
            .zip(&net.input_bounds.upper)
            .map(|(&l, &u)| (u - l) as f64)
            .fold(0.0, f64::max);
        if self.epsilon > widest {
            return Err(Error::Config(format!(
                "epsilon {} exceeds the widest input range {widest}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Forward pass in f64, keeping pre-activations for backprop.
fn forward_f64(net: &Network, x: &[f32]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            found: x.len(),
        });
    }
    let mut pres = Vec::with_capacity(net.layers.len());
    let mut a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    for layer in &net.layers {
        let mut z: Vec<f64> = layer.bias.iter().map(|&b| b as f64).collect();
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (zj, &w) in z.iter_mut().zip(layer.weights.row(i)) {
                *zj += ai * w as f64;
            }
        }
        a = z
            .iter()
            .zip(&layer.alive)
            .map(|(&v, &alive)| if alive { layer.activation.apply_f64(v) } else { 0.0 })
            .collect();
        pres.push(z);
    }
    Ok((pres, a))
}

/// Softmax cross-entropy of the logits against label `y`.
pub fn loss(net: &Network, x: &[f32], y: u32) -> Result<f64> {
    let (_, logits) = forward_f64(net, x)?;
    let y = y as usize;
    if y >= logits.len() {
        return Err(Error::Dimension {
            expected: logits.len(),
            found: y,
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[y])
}

/// Reverse-mode gradient of [`loss`] with respect to the input.
pub fn loss_gradient_wrt_input(net: &Network, x: &[f32], y: u32) -> Result<Vec<f64>> {
    let (pres, logits) = forward_f64(net, x)?;
    let y = y as usize;
    if y >= logits.len() {
        return Err(Error::Dimension {
            expected: logits.len(),
            found: y,
        });
    }
    // dL/d(post) at the output
    let mut grad = softmax(&logits);
    grad[y] -= 1.0;
    for (m, layer) in net.layers.iter().enumerate().rev() {
        // through the activation
        for ((g, &z), &alive) in grad.iter_mut().zip(&pres[m]).zip(&layer.alive) {
            *g = if alive {
                *g * layer.activation.derivative_f64(z)
            } else {
                0.0
            };
        }
        // through the weights
        grad = (0..layer.fan_in())
            .map(|i| {
                layer
                    .weights
                    .row(i)
                    .iter()
                    .zip(&grad)
                    .map(|(&w, &g)| w as f64 * g)
                    .sum()
            })
            .collect();
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("input gradient".into()));
    }
    Ok(grad)
}

/// `x + ε·sign(∇x loss)`, optionally clipped to the input box. `sign(0) = 0`.
pub fn fgsm(net: &Network, x: &[f32], y: u32, cfg: &AttackConfig) -> Result<Vec<f32>> {
    if cfg.epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let grad = loss_gradient_wrt_input(net, x, y)?;
    let eps = cfg.epsilon as f32;
    let mut adv: Vec<f32> = x
        .iter()
        .zip(&grad)
        .map(|(&v, &g)| {
            if g > 0.0 {
                v + eps
            } else if g < 0.0 {
                v - eps
            } else {
                v
            }
        })
        .collect();
    if cfg.clip {
        net.input_bounds.clip(&mut adv);
    }
    Ok(adv)
}

fn check_compatible(f: &Network, g: &Network, ds: &LabeledDataset) -> Result<()> {
    if f.input_dim() != g.input_dim() {
        return Err(Error::Dimension {
            expected: f.input_dim(),
            found: g.input_dim(),
        });
    }
    if f.output_dim() != g.output_dim() {
        return Err(Error::Dimension {
            expected: f.output_dim(),
            found: g.output_dim(),
        });
    }
    if ds.n_features() != f.input_dim() {
        return Err(Error::Dimension {
            expected: f.input_dim(),
            found: ds.n_features(),
        });
    }
    if ds.n_classes() > f.output_dim() {
        return Err(Error::Dimension {
            expected: f.output_dim(),
            found: ds.n_classes(),
        });
    }
    Ok(())
}

/// Whether sample `(x, y)` is a robust instance of `g`.
pub fn is_robust(f: &Network, g: &Network, x: &[f32], y: u32, cfg: &AttackConfig) -> Result<bool> {
    let clean = argmax(&g.forward(x)?);
    if clean != y as usize {
        return Ok(false);
    }
    let attacked = match cfg.craft_on {
        CraftOn::Original => f,
        CraftOn::Pruned => g,
    };
    let adv = fgsm(attacked, x, y, cfg)?;
    Ok(argmax(&g.forward(&adv)?) == clean)
}

/// Number of robust instances of `g` in `ds`.
pub fn robust_count(f: &Network, g: &Network, ds: &LabeledDataset, cfg: &AttackConfig) -> Result<usize> {
    check_compatible(f, g, ds)?;
    let flags: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| is_robust(f, g, ds.sample(i), ds.label(i), cfg))
        .collect::<Result<_>>()?;
    Ok(flags.into_iter().filter(|&r| r).count())
}

pub fn predictions(net: &Network, ds: &LabeledDataset) -> Result<Vec<usize>> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| net.forward(ds.sample(i)).map(|o| argmax(&o)))
        .collect()
}

/// Fraction of samples whose argmax matches the label.
pub fn accuracy(net: &Network, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let preds = predictions(net, ds)?;
    let correct = preds
        .iter()
        .zip(ds.labels())
        .filter(|(&p, &y)| p == y as usize)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Indices of the `k` largest logits (ties to the lower index), sorted.
pub fn top_k(logits: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Fraction of samples whose top-`k` class set is the same under `f` and `g`.
pub fn topk_preservation(f: &Network, g: &Network, ds: &LabeledDataset, k: usize) -> Result<f64> {
    check_compatible(f, g, ds)?;
    if k == 0 || k > f.output_dim() {
        return Err(Error::Config(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            f.output_dim()
        )));
    }
    if ds.is_empty() {
        return Ok(1.0);
    }
    let same: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = ds.sample(i);
            Ok(top_k(&f.forward(x)?, k) == top_k(&g.forward(x)?, k))
        })
        .collect::<Result<_>>()?;
    Ok(same.iter().filter(|&&s| s).count() as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy_orig: f64,
    pub accuracy_pruned: f64,
    pub robust_count_orig: usize,
    pub robust_count_pruned: usize,
    /// `robust_count_pruned / max(robust_count_orig, 1)`.
    pub robustness_preservation_ratio: f64,
    pub topk_preservation: Option<f64>,
    pub n_samples: usize,
    pub epsilon: f64,
    /// The pruned model predicts the same class for every sample.
    pub degenerate: bool,
}

pub const REPORT_HEADER: &str =
    "model,sparsity,epsilon,acc_orig,acc_pruned,robust_orig,robust_pruned,preservation,topk,n";

impl EvalReport {
    /// One CSV line (no terminator) matching [`REPORT_HEADER`]; the model
    /// label is quoted when needed.
    pub fn csv_row(&self, model: &str, sparsity: f64) -> String {
        let fields = [
            model.to_string(),
            sparsity.to_string(),
            self.epsilon.to_string(),
            self.accuracy_orig.to_string(),
            self.accuracy_pruned.to_string(),
            self.robust_count_orig.to_string(),
            self.robust_count_pruned.to_string(),
            self.robustness_preservation_ratio.to_string(),
            self.topk_preservation.map(|t| t.to_string()).unwrap_or_default(),
            self.n_samples.to_string(),
        ];
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&fields).expect("writing to memory cannot fail");
        let mut bytes = w.into_inner().expect("flushing to memory cannot fail");
        bytes.pop();
        String::from_utf8(bytes).expect("fields are UTF-8")
    }
}

/// Compares original `f` against pruned `g` on `ds`.
pub fn evaluate_pair(
    f: &Network,
    g: &Network,
    ds: &LabeledDataset,
    cfg: &AttackConfig,
    topk: Option<usize>,
) -> Result<EvalReport> {
    check_compatible(f, g, ds)?;
    cfg.validate(f)?;
    let original_cfg = AttackConfig {
        craft_on: CraftOn::Original,
        ..*cfg
    };
    let robust_orig = robust_count(f, f, ds, &original_cfg)?;
    let robust_pruned = robust_count(f, g, ds, cfg)?;
    let preds = predictions(g, ds)?;
    let degenerate = ds.len() > 1 && preds.iter().all(|&p| p == preds[0]);
    Ok(EvalReport {
        accuracy_orig: accuracy(f, ds)?,
        accuracy_pruned: accuracy(g, ds)?,
        robust_count_orig: robust_orig,
        robust_count_pruned: robust_pruned,
        robustness_preservation_ratio: robust_pruned as f64 / robust_orig.max(1) as f64,
        topk_preservation: topk.map(|k| topk_preservation(f, g, ds, k)).transpose()?,
        n_samples: ds.len(),
        epsilon: cfg.epsilon,
        degenerate,
    })
}
