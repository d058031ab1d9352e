//! Hybrid pooling of hidden states into one text vector:
//! `z = α · mean_i(h_i) + (1 − α) · Σ_i β_i h_i` over valid positions.

use crate::config::BetaSource;
use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::numeric::{masked_row_softmax, softmax_backward, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    /// Fixed balance coefficient, used unless `learnable_alpha` is set.
    pub alpha: f64,
    pub learnable_alpha: bool,
    /// `1 × 1`; α = sigmoid(alpha_logit) in learnable mode.
    pub alpha_logit: Matrix,
    /// `1 × d` pooling query `u`.
    pub pooling_query: Matrix,
    pub beta_source: BetaSource,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AggregatorParams {
    /// Zero pooling query (uniform β at start); in learnable mode the logit
    /// starts at `logit(alpha)`.
    pub fn init(d: usize, alpha: f64, learnable_alpha: bool, beta_source: BetaSource) -> Self {
        let logit = if learnable_alpha {
            (alpha / (1.0 - alpha)).ln()
        } else {
            0.0
        };
        Self {
            alpha,
            learnable_alpha,
            alpha_logit: Matrix::filled(1, 1, logit),
            pooling_query: Matrix::zeros(1, d),
            beta_source,
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.learnable_alpha {
            sigmoid(self.alpha_logit.data()[0])
        } else {
            self.alpha
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            alpha_logit: self.alpha_logit.zeros_like(),
            pooling_query: self.pooling_query.zeros_like(),
            ..self.clone()
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("aggregator.pooling_query".to_string(), &self.pooling_query),
            ("aggregator.alpha_logit".to_string(), &self.alpha_logit),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.pooling_query, &mut self.alpha_logit]
    }
}

/// Pooling distribution over the valid positions, in position order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights {
    pub beta: Vec<f64>,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextVector {
    pub z: Vec<f64>,
}

fn valid_positions(valid: &[bool]) -> Result<Vec<usize>> {
    let positions: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    if positions.is_empty() {
        return Err(Error::EmptyMask { row: 0 });
    }
    Ok(positions)
}

/// `β = masked_softmax(H·u / √d)`.
pub fn query_pooling_weights(h: &Matrix, valid: &[bool], query: &Matrix) -> Result<PoolingWeights> {
    if query.shape() != (1, h.cols()) || valid.len() != h.rows() {
        return Err(Error::Shape {
            op: "pooling_weights",
            left: h.shape(),
            right: query.shape(),
        });
    }
    let positions = valid_positions(valid)?;
    let scale = 1.0 / (h.cols() as f64).sqrt();
    let scores: Vec<f64> = (0..h.rows())
        .map(|i| {
            h.row(i)
                .iter()
                .zip(query.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale
        })
        .collect();
    let probs = masked_row_softmax(&Matrix::row_vector(scores), valid)?;
    let beta = positions.iter().map(|&i| probs.data()[i]).collect();
    Ok(PoolingWeights { beta, positions })
}

/// β as the column means of an attention matrix over the valid query rows.
pub fn attention_pooling_weights(attention: &Matrix, valid: &[bool]) -> Result<PoolingWeights> {
    if attention.shape() != (valid.len(), valid.len()) {
        return Err(Error::Shape {
            op: "attention_pooling_weights",
            left: attention.shape(),
            right: (valid.len(), valid.len()),
        });
    }
    let positions = valid_positions(valid)?;
    let n = positions.len() as f64;
    let beta = positions
        .iter()
        .map(|&j| positions.iter().map(|&i| attention.get(i, j)).sum::<f64>() / n)
        .collect();
    Ok(PoolingWeights { beta, positions })
}

/// Pooling weights according to `params.beta_source`.
pub fn pooling_weights(hs: &HiddenStates, params: &AggregatorParams) -> Result<PoolingWeights> {
    match params.beta_source {
        BetaSource::Query => query_pooling_weights(&hs.h, &hs.valid, &params.pooling_query),
        BetaSource::AttnRowmean => {
            let last = hs.attention.last().ok_or_else(|| {
                Error::Config("attn_rowmean pooling needs at least one attention block".into())
            })?;
            attention_pooling_weights(last, &hs.valid)
        }
    }
}

/// Evaluates the hybrid pooling over valid rows; the mean divides by the
/// number of valid positions.
pub fn aggregate(hs: &HiddenStates, beta: &PoolingWeights, alpha: f64) -> Result<TextVector> {
    aggregate_rows(&hs.h, beta, alpha)
}

pub(crate) fn aggregate_rows(h: &Matrix, beta: &PoolingWeights, alpha: f64) -> Result<TextVector> {
    if beta.beta.len() != beta.positions.len() || beta.positions.iter().any(|&p| p >= h.rows()) {
        return Err(Error::Dimension(format!(
            "pooling weights over {} positions do not fit {} hidden rows",
            beta.positions.len(),
            h.rows()
        )));
    }
    let n = beta.positions.len() as f64;
    let d = h.cols();
    let mut mean = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for (&p, &b) in beta.positions.iter().zip(&beta.beta) {
        for (k, &x) in h.row(p).iter().enumerate() {
            mean[k] += x;
            weighted[k] += b * x;
        }
    }
    let z = mean
        .iter()
        .zip(&weighted)
        .map(|(m, w)| alpha * (m / n) + (1.0 - alpha) * w)
        .collect();
    Ok(TextVector { z })
}

/// Gradients of [`aggregate`] w.r.t. its inputs.
#[derive(Debug, Clone)]
pub struct AggregateGrads {
    pub d_h: Matrix,
    pub d_beta: Vec<f64>,
    pub d_alpha: f64,
}

pub fn aggregate_backward(
    h: &Matrix,
    beta: &PoolingWeights,
    alpha: f64,
    d_z: &[f64],
) -> Result<AggregateGrads> {
    if d_z.len() != h.cols() {
        return Err(Error::Dimension(format!(
            "upstream gradient of length {} for d = {}",
            d_z.len(),
            h.cols()
        )));
    }
    let n = beta.positions.len() as f64;
    let mut d_h = h.zeros_like();
    let mut d_beta = Vec::with_capacity(beta.beta.len());
    let mut d_alpha = 0.0;
    for (&p, &b) in beta.positions.iter().zip(&beta.beta) {
        let row = h.row(p);
        let coef = alpha / n + (1.0 - alpha) * b;
        let mut dot = 0.0;
        for (k, (&x, &g)) in row.iter().zip(d_z).enumerate() {
            d_h.set(p, k, coef * g);
            dot += g * x;
            // ∂z/∂α = mean − Σβh, accumulated per row.
            d_alpha += g * x * (1.0 / n - b);
        }
        d_beta.push((1.0 - alpha) * dot);
    }
    Ok(AggregateGrads {
        d_h,
        d_beta,
        d_alpha,
    })
}

/// Backward of [`query_pooling_weights`]. Returns `(d_h, d_query)`.
pub fn query_pooling_backward(
    h: &Matrix,
    beta: &PoolingWeights,
    query: &Matrix,
    d_beta: &[f64],
) -> Result<(Matrix, Matrix)> {
    let b = Matrix::row_vector(beta.beta.clone());
    let d_scores = softmax_backward(&b, &Matrix::row_vector(d_beta.to_vec()))?;
    let scale = 1.0 / (h.cols() as f64).sqrt();
    let mut d_h = h.zeros_like();
    let mut d_query = query.zeros_like();
    for (&p, &ds) in beta.positions.iter().zip(d_scores.data()) {
        let g = ds * scale;
        for (k, (&x, &u)) in h.row(p).iter().zip(query.data()).enumerate() {
            d_h.set(p, k, g * u);
            d_query.data_mut()[k] += g * x;
        }
    }
    Ok((d_h, d_query))
}

/// Backward of [`attention_pooling_weights`]: gradient on the attention matrix.
pub fn attention_pooling_backward(
    shape: (usize, usize),
    beta: &PoolingWeights,
    d_beta: &[f64],
) -> Matrix {
    let n = beta.positions.len() as f64;
    let mut d_attn = Matrix::zeros(shape.0, shape.1);
    for &i in &beta.positions {
        for (&j, &g) in beta.positions.iter().zip(d_beta) {
            d_attn.set(i, j, g / n);
        }
    }
    d_attn
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn mean_rows(h: &Matrix, n: usize) -> Vec<f64> {
        (0..h.cols())
            .map(|k| (0..n).map(|i| h.get(i, k)).sum::<f64>() / n as f64)
            .collect()
    }

    #[test]
    fn single_position_has_unit_weight() {
        let mut rng = Rng::new(1);
        let h = random(&mut rng, 1, 3);
        let q = random(&mut rng, 1, 3);
        let w = query_pooling_weights(&h, &[true], &q).unwrap();
        assert_eq!(w.beta, [1.0]);
    }

    #[test]
    fn zero_query_is_uniform() {
        let mut rng = Rng::new(2);
        let h = random(&mut rng, 5, 3);
        let w = query_pooling_weights(&h, &[true, true, true, true, false], &Matrix::zeros(1, 3))
            .unwrap();
        assert_eq!(w.beta, [0.25; 4]);
        assert_eq!(w.positions, [0, 1, 2, 3]);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn query_weights_match_high_precision_values() {
        // H, u fixed; softmax(H u / √3) computed with 50-digit arithmetic (mpmath).
        let h = Matrix::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![1.5, 0.25, -0.5],
            vec![-2.0, 1.0, 0.0],
            vec![0.0, 0.75, 1.25],
        ]);
        let u = Matrix::row_vector(vec![0.3, -0.7, 1.1]);
        let expected = [
            0.662_872_933_347_230_955_57,
            0.097_211_952_565_361_546_567,
            0.053_791_187_184_288_599_96,
            0.186_123_926_903_118_897_9,
        ];
        let w = query_pooling_weights(&h, &[true; 4], &u).unwrap();
        for (a, b) in w.beta.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn no_valid_positions_is_an_error() {
        let h = Matrix::zeros(2, 3);
        assert!(query_pooling_weights(&h, &[false, false], &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn alpha_boundaries_and_uniform_beta() {
        let mut rng = Rng::new(3);
        let h = random(&mut rng, 6, 4);
        let valid = [true, true, true, true, false, false];
        let u = random(&mut rng, 1, 4);
        let hs = HiddenStates {
            h: h.clone(),
            valid: valid.to_vec(),
            attention: vec![],
        };
        let w = query_pooling_weights(&h, &valid, &u).unwrap();
        let mean = mean_rows(&h, 4);

        let z1 = aggregate(&hs, &w, 1.0).unwrap();
        for (a, b) in z1.z.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        let z0 = aggregate(&hs, &w, 0.0).unwrap();
        for k in 0..4 {
            let s: f64 = (0..4).map(|i| w.beta[i] * h.get(i, k)).sum();
            assert!((z0.z[k] - s).abs() < 1e-12);
        }
        let uniform = PoolingWeights {
            beta: vec![0.25; 4],
            positions: vec![0, 1, 2, 3],
        };
        let zu = aggregate(&hs, &uniform, 0.37).unwrap();
        for (a, b) in zu.z.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rowmean_is_a_distribution() {
        let a = Matrix::from_rows(&[
            vec![0.2, 0.8, 0.0],
            vec![0.6, 0.4, 0.0],
            vec![0.5, 0.5, 0.0],
        ]);
        let w = attention_pooling_weights(&a, &[true, true, false]).unwrap();
        assert!((w.beta[0] - 0.4).abs() < 1e-15 && (w.beta[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn learnable_alpha_starts_at_configured_value() {
        let p = AggregatorParams::init(4, 0.3, true, BetaSource::Query);
        assert!((p.effective_alpha() - 0.3).abs() < 1e-15);
        let p = AggregatorParams::init(4, 0.3, false, BetaSource::Query);
        assert_eq!(p.effective_alpha(), 0.3);
    }
}
