//! Adam with bias correction. No weight decay, schedule or clipping.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::Matrix;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    /// Zeroed moment buffers shaped like the tensors of `params`.
    pub fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        let m: Vec<Matrix> = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.zeros_like())
            .collect();
        Self {
            lr: config.lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` along `grads` (same layout as `params`).
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let grads = grads.named_tensors();
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                tensors.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (_, g)) in grads.iter().enumerate() {
            let p = &mut tensors[i];
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
