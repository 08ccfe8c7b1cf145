//! Data-free pruning of dense feed-forward networks.
//!
//! Hidden units are removed in nominee/delegate pairs: the nominee is zeroed out
//! and its outgoing weights are folded into the delegate. Candidate pairs are
//! ranked by saliency, and a simulated-annealing sampler decides which of them
//! to accept using interval estimates of how each pruning perturbs the output
//! layer. The [`eval`] module measures what survives: clean accuracy and the
//! number of inputs that stay correctly classified under an FGSM attack.

pub mod anneal;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod format;
pub mod interval;
pub mod model;
pub mod prune;
pub mod saliency;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use interval::{BoundsMap, Interval, IntervalVector};
pub use model::{ActivationKind, DenseLayer, Matrix, Network};

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
