//! Experiment plumbing: configuration, manifests, the synthetic corpus and
//! the data-budget sweeps.

pub mod config;
pub mod manifest;
pub mod sweep;
pub mod synth;

pub use config::{ExperimentConfig, KeyValues};
pub use manifest::{DatasetManifest, Entry, ManifestEntry, Split};
pub use sweep::{
    derive_seed, prepare, run_nonparallel_sweep, run_parallel_sweep, select, test_mcd, train_method, Corpus, Method,
    PreparedData, ResultRow, Selection, SweepResults, SweepSpec, TrainedModel,
};
pub use synth::{generate_synthetic_corpus, SynthSpec, SyntheticCorpus};
