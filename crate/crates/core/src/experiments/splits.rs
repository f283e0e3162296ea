use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Oos,
    Oot,
}

/// Contract ids of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Year of the test contracts for out-of-time folds.
    pub test_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_TEST_FRAC: f64 = 0.2;
pub const DEFAULT_VAL_FRAC: f64 = 0.15;

fn check_frac(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(ExperimentError::Split(format!("{name} {f} outside (0, 1)")))
    }
}

/// Keeps `ids` in input order, restricted to `chosen`.
fn in_order(ids: &[String], chosen: &[usize]) -> Vec<String> {
    let set: BTreeSet<usize> = chosen.iter().copied().collect();
    set.into_iter().map(|i| ids[i].clone()).collect()
}

/// Independent seeded shuffles; each fold takes `test_frac` of the
/// contracts for testing and `val_frac` of the rest for validation.
pub fn oos_splits(
    contract_ids: &[String],
    n_folds: usize,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    check_frac("test fraction", test_frac)?;
    check_frac("validation fraction", val_frac)?;
    let n = contract_ids.len();
    if n < 10 {
        return Err(ExperimentError::Split(format!("need at least 10 contracts, got {n}")));
    }
    if n_folds == 0 {
        return Err(ExperimentError::Split("need at least one fold".into()));
    }
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 2);
    let n_val = (((n - n_test) as f64 * val_frac).round() as usize).clamp(1, n - n_test - 1);
    let folds = (0..n_folds)
        .map(|index| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index as u64])));
            Fold {
                index,
                test: in_order(contract_ids, &order[..n_test]),
                val: in_order(contract_ids, &order[n_test..n_test + n_val]),
                train: in_order(contract_ids, &order[n_test + n_val..]),
                test_year: None,
            }
        })
        .collect();
    Ok(SplitPlan { kind: SplitKind::Oos, seed, folds })
}

/// Year-forward folds: for every test year `y >= first_test_year`, train
/// on earlier years (less a seeded validation share) and test on `y`.
pub fn oot_splits(issue_years: &[(String, i32)], first_test_year: i32, val_frac: f64, seed: u64) -> Result<SplitPlan> {
    check_frac("validation fraction", val_frac)?;
    let years: BTreeSet<i32> = issue_years.iter().map(|&(_, y)| y).collect();
    if years.len() < 2 {
        return Err(ExperimentError::Split("need at least two distinct years".into()));
    }
    let ids: Vec<String> = issue_years.iter().map(|(id, _)| id.clone()).collect();
    let mut folds = Vec::new();
    for &y in years.range(first_test_year..) {
        let earlier: Vec<usize> = (0..ids.len()).filter(|&i| issue_years[i].1 < y).collect();
        let test: Vec<usize> = (0..ids.len()).filter(|&i| issue_years[i].1 == y).collect();
        if earlier.len() < 2 {
            continue;
        }
        let index = folds.len();
        let mut order = earlier.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index as u64])));
        let n_val = ((earlier.len() as f64 * val_frac).round() as usize).clamp(1, earlier.len() - 1);
        folds.push(Fold {
            index,
            train: in_order(&ids, &order[n_val..]),
            val: in_order(&ids, &order[..n_val]),
            test: in_order(&ids, &test),
            test_year: Some(y),
        });
    }
    if folds.is_empty() {
        return Err(ExperimentError::Split(format!("no test years from {first_test_year} on")));
    }
    Ok(SplitPlan { kind: SplitKind::Oot, seed, folds })
}
