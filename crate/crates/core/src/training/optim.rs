use crate::error::{DeqError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::ADAM
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = DeqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::ADAM),
            other => Err(DeqError::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DeqError::shape(
                "Optimizer::step",
                (params.len(), grads.len()),
                (self.m.len(), self.m.len()),
            ));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for k in 0..params.len() {
                    let g = grads[k];
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[k] / c1;
                    let v_hat = self.v[k] / c2;
                    params[k] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::ADAM, 0.1, 2);
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0];
        Optimizer::new(OptimizerKind::Sgd, 0.5, 1).step(&mut p, &[4.0]).unwrap();
        assert_eq!(p, vec![-1.0]);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let init = vec![0.3, -1.7, 2.5e-9];
        let mut p = init.clone();
        let mut opt = Optimizer::new(OptimizerKind::ADAM, 0.0, 3);
        for _ in 0..5 {
            opt.step(&mut p, &[1.0, -3.0, 1e6]).unwrap();
        }
        assert_eq!(p, init);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = Optimizer::new(OptimizerKind::ADAM, 0.05, 2);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 8.0 * p[1]];
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }
}
