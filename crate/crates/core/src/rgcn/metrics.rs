use super::{Result, RgcnError};

/// Mean squared error over the entries where `mask` is true.
pub fn mse_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(RgcnError::Shape(format!(
            "mse over {} predictions, {} targets, {} mask entries",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            sum += (t - p).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(RgcnError::EmptyTrainSet);
    }
    Ok(sum / n as f64)
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(RgcnError::Shape(format!("r2 over {} predictions and {} targets", pred.len(), target.len())));
    }
    if target.len() < 2 {
        return Err(RgcnError::DegenerateTarget);
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(RgcnError::DegenerateTarget);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
