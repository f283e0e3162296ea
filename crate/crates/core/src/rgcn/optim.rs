use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    #[serde(rename = "SGD")]
    Sgd,
}

impl OptimizerKind {
    pub const SEARCH: [OptimizerKind; 2] = [OptimizerKind::Adam, OptimizerKind::Sgd];

    pub fn build(self, lr: f64, shapes: &[(usize, usize)]) -> Box<dyn Optimizer + Send> {
        match self {
            OptimizerKind::Adam => Box::new(Adam::new(lr, shapes)),
            OptimizerKind::Sgd => Box::new(Sgd { lr }),
        }
    }
}

pub trait Optimizer {
    /// Apply one update; `params` and `grads` are aligned.
    fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]);
}

/// Plain gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        for (p, g) in params.iter_mut().zip(grads) {
            p.axpy(-self.lr, g);
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| vec![0.0; r * c]).collect(),
            v: shapes.iter().map(|&(r, c)| vec![0.0; r * c]).collect(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias-corrected first step is lr * g / (|g| + eps)
        let mut p = Matrix::from_vec(1, 2, vec![1.0, -1.0]);
        let g = Matrix::from_vec(1, 2, vec![3.0, -0.5]);
        let mut adam = Adam::new(0.1, &[(1, 2)]);
        adam.step(&mut [&mut p], &[g]);
        assert!((p.get(0, 0) - 0.9).abs() < 1e-8);
        assert!((p.get(0, 1) + 0.9).abs() < 1e-8);
    }

    #[test]
    fn sgd_on_quadratic_converges() {
        let mut p = Matrix::from_vec(1, 1, vec![5.0]);
        let mut sgd = Sgd { lr: 0.1 };
        for _ in 0..200 {
            let g = Matrix::from_vec(1, 1, vec![2.0 * p.get(0, 0)]);
            sgd.step(&mut [&mut p], &[g]);
        }
        assert!(p.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&OptimizerKind::Sgd).unwrap(), "\"SGD\"");
        assert_eq!(serde_json::to_string(&OptimizerKind::Adam).unwrap(), "\"Adam\"");
    }
}
