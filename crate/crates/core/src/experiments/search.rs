use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ablation::{prepare_fold, run_rgcn, test_r2_of};
use super::{derive_seed, ExperimentConfig, ExperimentError, Result, SplitPlan};
use crate::ingest::ContractRecord;
use crate::rgcn::{Activation, OptimizerKind, TrainConfig, HIDDEN_CHOICES, LR_RANGE};

/// Draws one configuration from the search space. Epoch budget, patience
/// and seed come from `base`.
pub fn sample_config<R: Rng>(rng: &mut R, base: &TrainConfig) -> TrainConfig {
    let (lo, hi) = (LR_RANGE.0.ln(), LR_RANGE.1.ln());
    TrainConfig {
        learning_rate: rng.random_range(lo..=hi).exp().clamp(LR_RANGE.0, LR_RANGE.1),
        hidden: *HIDDEN_CHOICES.choose(rng).expect("nonempty"),
        dropout: rng.random_range(0.0..=0.5),
        optimizer: *OptimizerKind::SEARCH.choose(rng).expect("nonempty"),
        activation: *Activation::SEARCH.choose(rng).expect("nonempty"),
        layers: rng.random_range(1..=5),
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trial: usize,
    pub config: TrainConfig,
    pub best_val_loss: Option<f64>,
    pub test_r2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub trials: Vec<TrialLog>,
    /// Trial with the lowest validation loss.
    pub best: Option<usize>,
}

impl SearchResult {
    pub fn best_config(&self) -> Option<&TrainConfig> {
        self.best.map(|i| &self.trials[i].config)
    }
}

/// Seeded random search scored on the first fold of `plan` (with
/// topological features). Configurations are drawn up front, so the trial
/// sequence depends on `seed` only.
pub fn random_search(
    records: &[ContractRecord],
    plan: &SplitPlan,
    n_trials: usize,
    seed: u64,
    base: &ExperimentConfig,
) -> Result<SearchResult> {
    let fold = plan.folds.first().ok_or_else(|| ExperimentError::Split("plan has no folds".into()))?;
    let prepared = prepare_fold(records, plan.kind, fold, base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = (0..n_trials)
        .map(|t| TrainConfig { seed: derive_seed(seed, &[t as u64]), ..sample_config(&mut rng, &base.train) })
        .collect();
    let trials: Vec<TrialLog> = configs
        .into_par_iter()
        .enumerate()
        .map(|(trial, config)| {
            let cfg = ExperimentConfig { train: config.clone(), ..base.clone() };
            let outcome = run_rgcn(&prepared, true, &cfg, config.seed)
                .and_then(|(rows, h)| Ok((test_r2_of(&rows)?, h.best_loss)));
            match outcome {
                Ok((r2, loss)) => TrialLog { trial, config, best_val_loss: Some(loss), test_r2: Some(r2), error: None },
                Err(e) => TrialLog { trial, config, best_val_loss: None, test_r2: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.best_val_loss.map(|l| (t.trial, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    Ok(SearchResult { trials, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_the_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = TrainConfig::default();
        for _ in 0..2000 {
            let c = sample_config(&mut rng, &base);
            assert!(c.validate().is_ok(), "{c:?}");
            assert!((1e-6..=1e-2).contains(&c.learning_rate));
            assert!((1..=5).contains(&c.layers));
        }
        let a: Vec<_> = (0..5).map(|_| sample_config(&mut ChaCha8Rng::seed_from_u64(1), &base)).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn log_uniform_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = TrainConfig::default();
        let below_1e4 = (0..4000).filter(|_| sample_config(&mut rng, &base).learning_rate < 1e-4).count();
        // half the log range lies below 1e-4
        assert!((below_1e4 as f64 / 4000.0 - 0.5).abs() < 0.05);
    }
}
