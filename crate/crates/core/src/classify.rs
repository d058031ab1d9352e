//! Linear softmax classifier head and the cross-entropy objective.

use crate::error::{Error, Result};
use crate::numeric::{init_xavier, log_sum_exp, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `m × d`.
    pub w_c: Matrix,
    /// `1 × m`.
    pub b_c: Matrix,
    pub category_names: Vec<String>,
}

impl ClassifierParams {
    pub fn init(rng: &mut Rng, d: usize, category_names: Vec<String>) -> Self {
        let m = category_names.len();
        Self {
            w_c: init_xavier(rng, m, d),
            b_c: Matrix::zeros(1, m),
            category_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w_c.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_c: self.w_c.zeros_like(),
            b_c: self.b_c.zeros_like(),
            category_names: self.category_names.clone(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("classifier.w_c".to_string(), &self.w_c),
            ("classifier.b_c".to_string(), &self.b_c),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_c, &mut self.b_c]
    }

    /// `W_c z + b_c`.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.w_c.cols() {
            return Err(Error::Shape {
                op: "logits",
                left: self.w_c.shape(),
                right: (z.len(), 1),
            });
        }
        Ok((0..self.num_classes())
            .map(|c| {
                self.w_c
                    .row(c)
                    .iter()
                    .zip(z)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.b_c.data()[c]
            })
            .collect())
    }

    /// Adds the gradients of `W_c z + b_c` into `grads` and returns `dL/dz`.
    pub fn backward(&self, z: &[f64], d_logits: &[f64], grads: &mut ClassifierParams) -> Vec<f64> {
        let mut d_z = vec![0.0; z.len()];
        for (c, &g) in d_logits.iter().enumerate() {
            grads.b_c.data_mut()[c] += g;
            for ((gw, &x), (dz, &w)) in grads
                .w_c
                .row_mut(c)
                .iter_mut()
                .zip(z)
                .zip(d_z.iter_mut().zip(self.w_c.row(c)))
            {
                *gw += g * x;
                *dz += g * w;
            }
        }
        d_z
    }
}

/// Softmax via log-sum-exp: `p_c = exp(l_c − lse(l))`.
pub fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Class probabilities for a text vector.
pub fn predict_proba(z: &[f64], params: &ClassifierParams) -> Result<Vec<f64>> {
    Ok(softmax_from_logits(&params.logits(z)?))
}

/// `−ln p[label]` for an already-normalized distribution. The probability is
/// floored at the smallest positive double so the result stays finite.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

/// `lse(logits) − logits[label]`, never forming the probability. Rounding
/// below zero is clipped; NaN passes through.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    let l = log_sum_exp(logits) - logits[label];
    if l < 0.0 {
        0.0
    } else {
        l
    }
}

/// `∂L/∂logits = softmax(logits) − onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax_from_logits(logits);
    g[label] -= 1.0;
    g
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
