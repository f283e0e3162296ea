use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};

/// Ridge regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub lambda: f64,
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl RidgeModel {
    /// Solves `(Xc^T Xc + lambda I) w = Xc^T yc` on centered data, then sets
    /// the intercept from the means.
    pub fn fit(rows: &[&[f64]], y: &[f64], lambda: f64) -> Result<Self> {
        if rows.is_empty() || rows.len() != y.len() {
            return Err(ExperimentError::Baseline(format!("{} rows and {} targets", rows.len(), y.len())));
        }
        if !(lambda >= 0.0) {
            return Err(ExperimentError::Baseline(format!("negative ridge lambda {lambda}")));
        }
        let n = rows.len();
        let p = rows[0].len();
        let x_mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| rows[i][j] - x_mean[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = xc.transpose() * &xc;
        for j in 0..p {
            gram[(j, j)] += lambda;
        }
        let rhs = xc.transpose() * yc;
        let singular = || ExperimentError::Baseline("normal equations are singular; use a ridge lambda > 0".into());
        let w = if lambda > 0.0 {
            gram.cholesky().ok_or_else(singular)?.solve(&rhs)
        } else {
            let scale = gram.diagonal().amax().max(1.0);
            let svd = gram.clone().svd(true, true);
            if svd.singular_values.min() <= 1e-12 * scale {
                return Err(singular());
            }
            svd.solve(&rhs, 0.0).map_err(|_| singular())?
        };
        let coef: Vec<f64> = w.iter().copied().collect();
        let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
        Ok(RidgeModel { lambda, intercept, coef })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_targets() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x[0] - 0.5 * x[1]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let m = RidgeModel::fit(&rows, &y, 0.0).unwrap();
        let pred: Vec<f64> = rows.iter().map(|r| m.predict(r)).collect();
        let r2 = crate::rgcn::r2_score(&pred, &y).unwrap();
        assert!((r2 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn three_point_hand_system() {
        // x = 0, 1, 2 and y = 1, 2, 4. Centered: x = -1, 0, 1; y = -4/3, -1/3, 5/3.
        // (sum x^2 + 1) w = sum x y  ->  3 w = 3  ->  w = 1, b = 7/3 - 1 = 4/3
        let xs = [[0.0], [1.0], [2.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let m = RidgeModel::fit(&rows, &[1.0, 2.0, 4.0], 1.0).unwrap();
        assert!((m.coef[0] - 1.0).abs() < 1e-12);
        assert!((m.intercept - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_shrinkage_predicts_the_mean() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = RidgeModel::fit(&rows, &y, 1e15).unwrap();
        assert!((m.predict(&[100.0]) - 4.5).abs() < 1e-6);
    }

    #[test]
    fn collinear_without_penalty_is_an_error() {
        let xs: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let err = RidgeModel::fit(&rows, &y, 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"));
        assert!(RidgeModel::fit(&rows, &y, 0.1).is_ok());
    }
}
