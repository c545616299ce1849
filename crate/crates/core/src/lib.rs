//! Rank-list stability for sequential recommenders.
//!
//! The crate measures how much a next-item recommender's rank lists move
//! when a handful of training interactions are perturbed, and implements
//! rank-preserving fine-tuning (FINEST) that reduces that movement:
//!
//! * [`dataio`]: interaction logs, chronological splits, instances, synthetic data
//! * [`models`]: recurrent and causal-attention scorers trained on next-item CE
//! * [`perturbation`]: delete/insert/replace edits and target selectors,
//!   including cascading-score selection over an interaction graph
//! * [`metrics`]: RBO, top-k Jaccard, RLS, MRR, Recall@k
//! * [`finest`]: reference rank lists, pseudo-perturbation and the
//!   rank-preserving hinge regularizer
//! * [`baselines`]: random-pool and adversarial-noise fine-tuning comparators
//! * [`harness`]: twin-retraining experiments, ablations, sweeps and reports
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod baselines;
pub mod dataio;
mod engine;
pub mod error;
pub mod finest;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod perturbation;

pub use engine::{FineTuneEpoch, FineTuneLog};
pub use error::{Error, Result};
