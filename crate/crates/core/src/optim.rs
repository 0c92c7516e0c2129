//! Adaptive-moment optimizer with decoupled weight decay and linear warmup.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            weight_decay: 0.01,
            warmup_steps: 100,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: usize) -> Self {
        Adam {
            cfg,
            step: 0,
            first: vec![0.0; params],
            second: vec![0.0; params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate in effect for the next step.
    pub fn current_lr(&self) -> f64 {
        let t = self.step + 1;
        if self.cfg.warmup_steps == 0 {
            self.cfg.learning_rate
        } else {
            self.cfg.learning_rate * (t as f64 / self.cfg.warmup_steps as f64).min(1.0)
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.first.len());
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}
