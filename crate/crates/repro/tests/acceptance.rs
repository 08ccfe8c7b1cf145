//! Acceptance gate. Every criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any of them fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dfprune::anneal::{acceptance_rate, density, energy, entropy_metric, norm_metric, similarity, EnergyWeights};
use dfprune::dataset::load_dataset;
use dfprune::eval::{loss, loss_gradient_wrt_input, AttackConfig};
use dfprune::format::load_network;
use dfprune::interval::output_impact;
use dfprune::prune::prune_pair;
use dfprune::{ActivationKind, BoundsMap, DenseLayer, IntervalVector, LabeledDataset, Matrix, Network};
use dfprune_repro::{fixtures_dir, median, Experiment, Outcome};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
// per-layer batch from the paper's efficiency table
const PAPER_BATCH: f64 = 0.0156;

fn fixture_net(name: &str) -> Network {
    load_network(fixtures_dir().join(format!("{name}.json"))).unwrap()
}

fn digits() -> (Network, LabeledDataset) {
    (
        fixture_net("mlp_8x8digits"),
        load_dataset(fixtures_dir().join("digits_test.nnds")).unwrap(),
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_net(r: &mut ChaCha8Rng, widths: &[usize], hidden: ActivationKind) -> Network {
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let data = (0..w[0] * w[1]).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let bias = (0..w[1]).map(|_| r.gen_range(-0.5f32..0.5)).collect();
            let act = if k + 2 == widths.len() { ActivationKind::Identity } else { hidden };
            DenseLayer::new(Matrix::from_vec(w[0], w[1], data).unwrap(), bias, act).unwrap()
        })
        .collect();
    Network::new("random", layers).unwrap()
}

fn random_input(r: &mut ChaCha8Rng, net: &Network) -> Vec<f32> {
    let b = &net.input_bounds;
    b.lower.iter().zip(&b.upper).map(|(&l, &u)| r.gen_range(l..=u)).collect()
}

// f32 forward passes round; the f64 bounds are exact for the stored parameters.
fn slack(magnitude: f64) -> f64 {
    1e-4 * (1.0 + magnitude)
}

fn interval_soundness() -> Verdict {
    let start = Instant::now();
    let mut violations = 0usize;
    let mut checked = 0usize;
    for name in ["mlp_8x8digits", "mlp_8x8digits_sigmoid", "mlp_synth_binary"] {
        let net = fixture_net(name);
        let bounds = BoundsMap::build(&net).unwrap();
        let mut r = rng(100);
        for _ in 0..1000 {
            let x = random_input(&mut r, &net);
            for (m, act) in net.activations(&x).unwrap().iter().enumerate() {
                let lb = bounds.layer(m);
                for u in 0..act.pre.len() {
                    checked += 2;
                    if !lb.pre[u].contains_within(act.pre[u] as f64, slack(lb.pre[u].magnitude())) {
                        violations += 1;
                    }
                    if !lb.post[u].contains_within(act.post[u] as f64, slack(lb.post[u].magnitude())) {
                        violations += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    (
        violations == 0 && t < Duration::from_secs(60),
        format!("{violations} violations in {checked} activations, {:.2}s (limit 60s)", t.as_secs_f64()),
    )
}

fn impact_containment() -> Verdict {
    let mut r = rng(200);
    let mut violations = 0usize;
    for _ in 0..20 {
        let net = random_net(&mut r, &[2, 3, 2], ActivationKind::Relu);
        let bounds = BoundsMap::build(&net).unwrap();
        let i = r.gen_range(0..3);
        let j = (i + r.gen_range(1..3)) % 3;
        let impact = output_impact(&net, &bounds, 0, i, j).unwrap();
        let mut pruned = net.clone();
        prune_pair(&mut pruned, 0, i, j).unwrap();
        for _ in 0..1000 {
            let x = random_input(&mut r, &net);
            let (a, b) = (net.forward(&x).unwrap(), pruned.forward(&x).unwrap());
            for k in 0..2 {
                let d = b[k] as f64 - a[k] as f64;
                if !impact[k].contains_within(d, slack(impact[k].magnitude())) {
                    violations += 1;
                }
            }
        }
    }
    (violations == 0, format!("{violations} violations over 20 prunings x 1000 inputs"))
}

fn exact_delegate() -> Verdict {
    let mut r = rng(300);
    let mut worst = 0.0f32;
    for act in [ActivationKind::Relu, ActivationKind::Sigmoid] {
        let mut net = random_net(&mut r, &[6, 8, 5, 3], act);
        for row in 0..6 {
            let v = net.layers[0].weights.get(row, 2);
            net.layers[0].weights.set(row, 6, v);
        }
        net.layers[0].bias[6] = net.layers[0].bias[2];
        let mut pruned = net.clone();
        prune_pair(&mut pruned, 0, 6, 2).unwrap();
        for _ in 0..100 {
            let x = random_input(&mut r, &net);
            let (a, b) = (net.forward(&x).unwrap(), pruned.forward(&x).unwrap());
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    (worst <= 1e-6, format!("max output change {worst:e} (limit 1e-6)"))
}

mod oracle {
    pub fn range(u: &[(f64, f64)]) -> (f64, f64) {
        let lo = u.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = u.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
    pub fn sim(a: (f64, f64), b: (f64, f64), m: (f64, f64)) -> f64 {
        if m.1 == m.0 {
            1.0
        } else {
            1.0 - 0.5 * ((a.0 - b.0).abs() + (a.1 - b.1).abs()) / (m.1 - m.0)
        }
    }
    pub fn density(u: &[(f64, f64)], i: usize, phi: f64) -> f64 {
        let m = range(u);
        let similar = (0..u.len()).filter(|&j| j != i && sim(u[i], u[j], m) >= phi).count();
        similar as f64 / u.len() as f64
    }
    pub fn entropy(u: &[(f64, f64)], phi: f64) -> f64 {
        (0..u.len())
            .map(|i| density(u, i, phi))
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }
    pub fn energy(u: &[(f64, f64)], alpha: f64, phi: f64) -> f64 {
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let norm: f64 = u.iter().map(|p| p.1 - p.0).sum();
        alpha * s(norm) + (1.0 - alpha) * s(entropy(u, phi))
    }
}

fn metric_oracles() -> Verdict {
    let mut r = rng(400);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(2..=10);
        let raw: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let lo = (r.gen_range(-4.0..4.0f64)).round() * 0.25 + r.gen_range(-0.02..0.02);
                (lo, lo + r.gen_range(0.0..1.5))
            })
            .collect();
        let u = IntervalVector::from_pairs(&raw).unwrap();
        let (alpha, phi) = (r.gen_range(0.0..=1.0), r.gen_range(0.5..0.99));
        let m = oracle::range(&raw);
        let mut err = |a: f64, b: f64| worst = worst.max((a - b).abs());
        err(norm_metric(&u), raw.iter().map(|p| p.1 - p.0).sum());
        for a in 0..n {
            for b in 0..n {
                err(similarity(u[a], u[b], m.0, m.1), oracle::sim(raw[a], raw[b], m));
            }
            err(density(&u, a, phi).unwrap(), oracle::density(&raw, a, phi));
        }
        err(entropy_metric(&u, phi).unwrap(), oracle::entropy(&raw, phi));
        let e = energy(&u, &EnergyWeights::new(alpha, phi).unwrap()).unwrap();
        err(e, oracle::energy(&raw, alpha, phi));
        let (prev, t) = (r.gen_range(0.0..1.0), r.gen_range(0.01..1.0));
        err(acceptance_rate(e, prev, t).unwrap(), (-(e - prev) / t).exp().min(1.0));
    }
    (worst <= 1e-9, format!("max abs deviation {worst:e} over 100 vectors (limit 1e-9)"))
}

/// True when moving from `a` to `b` flips the sign of some hidden
/// pre-activation, i.e. the segment crosses a relu kink.
fn crosses_kink(net: &Network, a: &[f32], b: &[f32]) -> bool {
    let (pa, pb) = (net.activations(a).unwrap(), net.activations(b).unwrap());
    net.hidden_layers().any(|l| {
        net.layers[l].activation == ActivationKind::Relu
            && pa[l].pre.iter().zip(&pb[l].pre).any(|(u, v)| (*u > 0.0) != (*v > 0.0))
    })
}

fn gradient_check() -> Verdict {
    let mut r = rng(500);
    let mut worst = 0.0f64;
    let (mut probes, mut redrawn) = (0usize, 0usize);
    for act in [ActivationKind::Relu, ActivationKind::Sigmoid] {
        for _ in 0..10 {
            let net = random_net(&mut r, &[8, 10, 6, 3], act);
            assert!(net.param_count() <= 200);
            let y = r.gen_range(0..3);
            let mut done = 0;
            while done < 8 {
                let x: Vec<f32> = (0..8).map(|_| r.gen_range(0.05f32..0.95)).collect();
                let k = done;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += 1e-3;
                xm[k] -= 1e-3;
                if crosses_kink(&net, &xm, &xp) {
                    redrawn += 1;
                    continue;
                }
                let g = loss_gradient_wrt_input(&net, &x, y).unwrap();
                let fd = (loss(&net, &xp, y).unwrap() - loss(&net, &xm, y).unwrap()) / (xp[k] as f64 - xm[k] as f64);
                // floor keeps near-zero components from inflating the ratio
                let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
                probes += 1;
                done += 1;
            }
        }
    }
    (
        worst < 1e-3,
        format!("max relative error {worst:e} over {probes} probes, {redrawn} redrawn at relu kinks (limit 1e-3)"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let model = fixtures_dir().join("mlp_8x8digits.json");
    let mut traces = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.json"));
        let trace = dir.path().join(format!("run{k}.csv"));
        let args = [
            "dfprune", "prune", "--model", p(&model), "--target", "0.8", "--batch", "0.1", "--alpha", "0.75",
            "--phi", "0.9", "--seed", "42", "--out", p(&out), "--trace", p(&trace),
        ];
        assert_eq!(dfprune_cli::run(args), 0);
        traces.push(std::fs::read(&trace).unwrap());
    }
    let rows = traces[0].iter().filter(|&&b| b == b'\n').count() - 1;
    (traces[0] == traces[1], format!("two seeded runs, {rows} trace rows each, byte-identical: {}", traces[0] == traces[1]))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn desk_experiment(target: f64) -> Experiment {
    Experiment {
        target,
        batch: PAPER_BATCH,
        weights: EnergyWeights::new(0.75, 0.9).unwrap(),
        attack: AttackConfig::new(0.05),
    }
}

fn list(outcomes: &[Outcome], f: impl Fn(&Outcome) -> f64) -> String {
    outcomes.iter().map(|o| format!("{:.3}", f(o))).collect::<Vec<_>>().join(", ")
}

fn robustness_preservation() -> Verdict {
    let (net, ds) = digits();
    let start = Instant::now();
    let outcomes = desk_experiment(0.6).over_seeds(&net, &ds, &DESK_SEEDS).unwrap();
    let t = start.elapsed();
    let ratios: Vec<f64> = outcomes.iter().map(|o| o.report.robustness_preservation_ratio).collect();
    let med = median(&ratios);
    (
        med >= 0.5 && t < Duration::from_secs(300),
        format!(
            "median preservation {med:.3} (need >= 0.5) at sparsity {:.3}; per seed [{}]; {:.1}s (limit 300s)",
            outcomes[0].sparsity,
            list(&outcomes, |o| o.report.robustness_preservation_ratio),
            t.as_secs_f64()
        ),
    )
}

fn baseline_comparison() -> Verdict {
    let (net, ds) = digits();
    let mut pass = true;
    let mut parts = Vec::new();
    for target in [0.5, 0.6] {
        let exp = desk_experiment(target);
        let outcomes = exp.over_seeds(&net, &ds, &DESK_SEEDS).unwrap();
        let counts: Vec<f64> = outcomes.iter().map(|o| o.report.robust_count_pruned as f64).collect();
        let stochastic = median(&counts);
        let baseline = exp.one_shot(&net, &ds).unwrap().report.robust_count_pruned as f64;
        pass &= stochastic >= baseline;
        parts.push(format!("{:.0}%: stochastic median {stochastic} vs one-shot {baseline}", target * 100.0));
    }
    (pass, parts.join("; "))
}

fn accuracy_retention() -> Verdict {
    let (net, ds) = digits();
    let outcomes = desk_experiment(0.6).over_seeds(&net, &ds, &DESK_SEEDS).unwrap();
    let retention: Vec<f64> = outcomes.iter().map(Outcome::accuracy_retention).collect();
    let med = median(&retention);
    (
        med >= 0.5,
        format!(
            "median retention {med:.3} (need >= 0.5); accuracy {:.3} -> [{}]",
            outcomes[0].report.accuracy_orig,
            list(&outcomes, |o| o.report.accuracy_pruned)
        ),
    )
}

fn efficiency() -> Verdict {
    let (net, _) = digits();
    let start = Instant::now();
    let cfg = dfprune::prune::PruningConfig::new(0.8, PAPER_BATCH, EnergyWeights::new(0.75, 0.9).unwrap(), 42);
    let (pruned, trace) = dfprune::prune::run(&net, &cfg).unwrap();
    let t = start.elapsed();
    (
        trace.target_reached && t < Duration::from_secs(60),
        format!(
            "{} params to sparsity {:.3} in {} epochs, {:.3}s (limit 60s)",
            net.param_count(),
            pruned.sparsity(),
            trace.epochs.len(),
            t.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("interval soundness", interval_soundness),
        ("impact containment", impact_containment),
        ("exact-delegate invariance", exact_delegate),
        ("metric oracles", metric_oracles),
        ("gradient check", gradient_check),
        ("determinism", determinism),
        ("robustness preservation", robustness_preservation),
        ("baseline comparison", baseline_comparison),
        ("accuracy retention", accuracy_retention),
        ("efficiency", efficiency),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!ok);
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
