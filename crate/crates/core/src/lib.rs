//! Neural-collapse guided active learning.
//!
//! Acquisition scores unlabeled candidates by how much they would perturb
//! the alignment of class means ([`acquisition::cmap_closed_form`]) and by
//! how often their predicted label flips across late-training checkpoints
//! ([`acquisition::feature_fluctuation`]). The two are z-scored, averaged,
//! and the top-k candidates are queried.
//!
//! Around that core sit collapse diagnostics ([`collapse`]), a small MLP
//! trainer with synthetic data ([`trainer`]), a pool-based simulator
//! ([`al_loop`]), and the file formats and CLI ([`io`], [`cli`]).

pub mod acquisition;
pub mod al_loop;
pub mod cli;
pub mod collapse;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pool;
pub mod trainer;

pub use error::{Error, Result};
pub use pool::{compute_class_stats, ClassStats, FeatureMatrix, PoolState, SampleId};
