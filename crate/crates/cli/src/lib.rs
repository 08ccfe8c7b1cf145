//! `dfprune` command line: `prune`, `eval` and `sweep`.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when interval
//! bounds explode during pruning.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfprune::anneal::{EnergyWeights, DEFAULT_PHI};
use dfprune::dataset::load_dataset;
use dfprune::eval::{evaluate_pair, AttackConfig, CraftOn, EvalReport, REPORT_HEADER};
use dfprune::format::{load_network, save_network, write_atomic};
use dfprune::prune::{one_shot_baseline, run as run_pruning, PruneMode, PruneTrace, Pruner, PruningConfig};
use dfprune::saliency::SaliencyNorm;
use dfprune::{ActivationKind, Error, LabeledDataset, Network, Result};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_EXPLOSION: i32 = 2;

/// α picked by `--alpha auto` for relu-dominated networks.
pub const AUTO_ALPHA_RELU: f64 = 0.75;
/// α picked by `--alpha auto` for sigmoid-dominated networks.
pub const AUTO_ALPHA_SIGMOID: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "dfprune", version, about = "Data-free pruning of dense neural networks")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "DFPRUNE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune a model to a target sparsity.
    Prune(PruneArgs),
    /// Compare a pruned model against its original under FGSM.
    Eval(EvalArgs),
    /// Prune while evaluating every few epochs.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Auto,
    Fixed(f64),
}

fn parse_alpha(s: &str) -> std::result::Result<Alpha, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Alpha::Auto);
    }
    let v: f64 = s.parse().map_err(|_| format!("expected a number or `auto`, got `{s}`"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("alpha must lie in [0, 1], got {v}"));
    }
    Ok(Alpha::Fixed(v))
}

impl Alpha {
    pub fn resolve(self, net: &Network) -> f64 {
        match self {
            Alpha::Fixed(a) => a,
            Alpha::Auto => match net.dominant_hidden_activation() {
                ActivationKind::Sigmoid => AUTO_ALPHA_SIGMOID,
                _ => AUTO_ALPHA_RELU,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Stochastic,
    OneShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Count,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CraftArg {
    Pruned,
    Original,
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    /// Model to prune.
    #[arg(long)]
    pub model: PathBuf,
    /// Fraction of hidden units to remove.
    #[arg(long)]
    pub target: f64,
    /// Fraction of each layer's alive units considered per epoch.
    #[arg(long, default_value_t = 0.0156)]
    pub batch: f64,
    /// Weight of the impact norm in the energy, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_alpha)]
    pub alpha: Alpha,
    /// Similarity threshold for the entropy term.
    #[arg(long, default_value_t = DEFAULT_PHI)]
    pub phi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Stochastic)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = dfprune::prune::DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    /// Denominator of the mean outgoing weight in the saliency.
    #[arg(long, value_enum, default_value_t = NormArg::Count)]
    pub saliency_norm: NormArg,
    /// Where the pruned model is written.
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV (default: next to `--out`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Run manifest (default: next to `--out`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Keep pruned units as masked zeros instead of removing them.
    #[arg(long)]
    pub keep_masked: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    /// Labelled test set.
    #[arg(long)]
    pub dataset: PathBuf,
    /// One or more FGSM budgets, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub epsilon: Vec<f64>,
    #[arg(long, value_enum, default_value_t = CraftArg::Pruned)]
    pub craft_on: CraftArg,
    /// Also report top-k class-set agreement.
    #[arg(long)]
    pub topk: Option<usize>,
    /// Do not clip adversarial inputs to the model's input bounds.
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub pruned: PathBuf,
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub prune: PruneArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Evaluate after every N pruning epochs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_every: u64,
    /// Long-form metrics CSV, one row per evaluation and epsilon.
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub duration_secs: f64,
    pub engine_version: String,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Maps an engine error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Explosion { .. } => EXIT_EXPLOSION,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap reports usage errors with 2, which is reserved for explosions
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    configure_threads(cli.threads);
    let result = match &cli.command {
        Command::Prune(a) => cmd_prune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("dfprune: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn model_label(net: &Network, path: &Path) -> String {
    if net.name.is_empty() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        net.name.clone()
    }
}

/// Fraction of `original`'s hidden units missing from `pruned`, whether they
/// were masked or physically removed.
pub fn relative_sparsity(original: &Network, pruned: &Network) -> f64 {
    let total = original.hidden_unit_count();
    if total == 0 {
        return 0.0;
    }
    let alive = pruned.hidden_unit_count() - pruned.dead_hidden_count();
    1.0 - alive as f64 / total as f64
}

fn pruning_config(a: &PruneArgs, net: &Network) -> Result<PruningConfig> {
    let weights = EnergyWeights::new(a.alpha.resolve(net), a.phi)?;
    let mut cfg = PruningConfig::new(a.target, a.batch, weights, a.seed);
    cfg.max_epochs = a.max_epochs;
    cfg.mode = match a.mode {
        ModeArg::Stochastic => PruneMode::Stochastic,
        ModeArg::OneShot => PruneMode::OneShot,
    };
    cfg.saliency_norm = match a.saliency_norm {
        NormArg::Count => SaliencyNorm::Count,
        NormArg::L1 => SaliencyNorm::L1,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn attack_configs(a: &AttackArgs) -> Vec<AttackConfig> {
    a.epsilon
        .iter()
        .map(|&eps| AttackConfig {
            epsilon: eps,
            clip: !a.no_clip,
            craft_on: match a.craft_on {
                CraftArg::Pruned => CraftOn::Pruned,
                CraftArg::Original => CraftOn::Original,
            },
        })
        .collect()
}

fn write_model(net: &Network, a: &PruneArgs) -> Result<()> {
    if a.keep_masked {
        save_network(net, &a.out)
    } else {
        save_network(&net.compact(), &a.out)
    }
}

fn finish_prune(
    command: &str,
    a: &PruneArgs,
    cfg: &PruningConfig,
    (pruned, trace): (&Network, &PruneTrace),
    extra_inputs: &[(&str, &Path)],
    extra_outputs: &[(&str, &Path)],
    started: Instant,
) -> Result<()> {
    write_model(pruned, a)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| sibling(&a.out, ".trace.csv"));
    trace.write_csv(&trace_path)?;
    let manifest_path = a.manifest.clone().unwrap_or_else(|| sibling(&a.out, ".manifest.json"));

    let mut inputs = BTreeMap::from([("model".to_string(), display(&a.model))]);
    inputs.extend(extra_inputs.iter().map(|(k, p)| (k.to_string(), display(p))));
    let mut outputs = BTreeMap::from([
        ("model".to_string(), display(&a.out)),
        ("trace".to_string(), display(&trace_path)),
    ]);
    outputs.extend(extra_outputs.iter().map(|(k, p)| (k.to_string(), display(p))));
    let mut config = serde_json::to_value(cfg)?;
    config["target_reached"] = trace.target_reached.into();
    config["compacted"] = (!a.keep_masked).into();
    RunManifest {
        command: command.into(),
        config,
        inputs,
        outputs,
        seed: Some(cfg.seed),
        duration_secs: started.elapsed().as_secs_f64(),
        engine_version: dfprune::VERSION.into(),
    }
    .write(&manifest_path)?;

    if !trace.target_reached {
        eprintln!(
            "dfprune: warning: stopped at sparsity {:.4} before reaching target {}",
            pruned.sparsity(),
            cfg.target
        );
    }
    println!(
        "pruned {} of {} hidden units (sparsity {:.4}) in {} epoch(s), {:.3}s",
        pruned.dead_hidden_count(),
        pruned.hidden_unit_count(),
        pruned.sparsity(),
        trace.epochs.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn cmd_prune(a: &PruneArgs) -> Result<()> {
    let started = Instant::now();
    let net = load_network(&a.model)?;
    let cfg = pruning_config(a, &net)?;
    let (pruned, trace) = run_pruning(&net, &cfg)?;
    finish_prune("prune", a, &cfg, (&pruned, &trace), &[], &[], started)
}

fn warn_degenerate(report: &EvalReport) {
    if report.degenerate {
        eprintln!("dfprune: warning: pruned model predicts a single class for every sample");
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let f = load_network(&a.original)?;
    let g = load_network(&a.pruned)?;
    let ds = load_dataset(&a.attack.dataset)?;
    let label = model_label(&g, &a.pruned);
    let sparsity = relative_sparsity(&f, &g);
    let mut csv = format!("{REPORT_HEADER}\n");
    let attacks = attack_configs(&a.attack);
    for atk in &attacks {
        let report = evaluate_pair(&f, &g, &ds, atk, a.attack.topk)?;
        warn_degenerate(&report);
        csv.push_str(&report.csv_row(&label, sparsity));
        csv.push('\n');
    }
    write_atomic(&a.out, csv.as_bytes())?;

    let manifest_path = a.manifest.clone().unwrap_or_else(|| sibling(&a.out, ".manifest.json"));
    RunManifest {
        command: "eval".into(),
        config: serde_json::json!({ "attacks": attacks, "topk": a.attack.topk }),
        inputs: BTreeMap::from([
            ("original".to_string(), display(&a.original)),
            ("pruned".to_string(), display(&a.pruned)),
            ("dataset".to_string(), display(&a.attack.dataset)),
        ]),
        outputs: BTreeMap::from([("report".to_string(), display(&a.out))]),
        seed: None,
        duration_secs: started.elapsed().as_secs_f64(),
        engine_version: dfprune::VERSION.into(),
    }
    .write(&manifest_path)
}

pub const SWEEP_HEADER_PREFIX: &str = "epoch,";

/// Appends sweep rows, flushing after each so an interrupted run leaves a
/// valid prefix.
struct SweepWriter<'a> {
    file: File,
    original: &'a Network,
    data: &'a LabeledDataset,
    attacks: Vec<AttackConfig>,
    topk: Option<usize>,
    label: String,
}

impl SweepWriter<'_> {
    fn record(&mut self, epoch: usize, net: &Network) -> Result<()> {
        let sparsity = relative_sparsity(self.original, net);
        for atk in &self.attacks {
            let report = evaluate_pair(self.original, net, self.data, atk, self.topk)?;
            writeln!(self.file, "{epoch},{}", report.csv_row(&self.label, sparsity))?;
            self.file.flush()?;
        }
        Ok(())
    }
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let started = Instant::now();
    let p = &a.prune;
    let net = load_network(&p.model)?;
    let ds = load_dataset(&a.attack.dataset)?;
    let cfg = pruning_config(p, &net)?;
    let attacks = attack_configs(&a.attack);
    for atk in &attacks {
        atk.validate(&net)?;
    }

    let mut file = File::create(&a.csv)?;
    writeln!(file, "{SWEEP_HEADER_PREFIX}{REPORT_HEADER}")?;
    let mut writer = SweepWriter {
        file,
        original: &net,
        data: &ds,
        attacks,
        topk: a.attack.topk,
        label: model_label(&net, &p.model),
    };
    writer.record(0, &net)?;

    let every = a.eval_every as usize;
    let (pruned, trace) = match cfg.mode {
        PruneMode::OneShot => {
            let (pruned, mut trace) = one_shot_baseline(&net, cfg.target)?;
            trace.config = cfg;
            writer.record(1, &pruned)?;
            (pruned, trace)
        }
        PruneMode::Stochastic => {
            let mut pruner = Pruner::new(net.clone(), cfg)?;
            while !pruner.is_finished() {
                let summary = pruner.run_epoch()?;
                if summary.epoch % every == 0 || pruner.is_finished() {
                    writer.record(summary.epoch, pruner.network())?;
                }
            }
            pruner.into_parts()
        }
    };
    finish_prune(
        "sweep",
        p,
        &cfg,
        (&pruned, &trace),
        &[("dataset", &a.attack.dataset)],
        &[("csv", &a.csv)],
        started,
    )
}
