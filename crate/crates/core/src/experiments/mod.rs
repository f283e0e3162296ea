//! Evaluation protocol: out-of-sample and out-of-time splits, the
//! topological-feature ablation against a ridge baseline, and random
//! hyperparameter search.

mod ablation;
mod baseline;
mod full;
mod search;
mod splits;

pub use ablation::{
    fold_mean, run_ablation, Arm, ArmAverage, ArmResult, AuditItem, EnvironmentStamp, ExperimentConfig,
    ExperimentReport, FoldResult, LeakageCheck, PredictionRow,
};
pub use baseline::RidgeModel;
pub use full::{fit_full, model_inputs, FittedModel};
pub use search::{random_search, sample_config, SearchResult, TrialLog};
pub use splits::{
    oos_splits, oot_splits, Fold, SplitKind, SplitPlan, DEFAULT_FOLDS, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("split: {0}")]
    Split(String),
    #[error("baseline: {0}")]
    Baseline(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Model(#[from] crate::rgcn::RgcnError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Mixes a base seed with job coordinates (splitmix64 finalizer), so
/// every fold, arm and trial gets an independent stream.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed;
    for &p in parts {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}
