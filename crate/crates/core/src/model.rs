//! End-to-end model: encoder → hybrid pooling → softmax head.

use crate::aggregate::{
    aggregate_backward, aggregate_rows, attention_pooling_backward, attention_pooling_weights,
    query_pooling_backward, query_pooling_weights, AggregatorParams, PoolingWeights, TextVector,
};
use crate::classify::{
    cross_entropy_from_logits, cross_entropy_grad, softmax_from_logits, ClassifierParams,
};
use crate::config::{BetaSource, ModelDims, TrainConfig};
use crate::encoder::{
    encoder_backward, encoder_forward, EncoderCache, EncoderParams, HiddenStates,
};
use crate::error::{Error, Result};
use crate::ingest::EncodedExample;
use crate::numeric::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub aggregator: AggregatorParams,
    pub classifier: ClassifierParams,
}

/// Everything computed by one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub hidden: HiddenStates,
    pub encoder_cache: EncoderCache,
    pub beta: PoolingWeights,
    pub alpha: f64,
    pub z: TextVector,
    pub logits: Vec<f64>,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax_from_logits(&self.logits)
    }
}

impl ModelParams {
    /// Fresh parameters drawn from an RNG seeded with `config.seed`.
    pub fn init(config: &TrainConfig, dims: ModelDims, categories: Vec<String>) -> Result<Self> {
        Self::init_with_rng(config, dims, categories, &mut Rng::new(config.seed))
    }

    /// Draw order: token embeddings, positions, blocks in order, classifier.
    pub fn init_with_rng(
        config: &TrainConfig,
        dims: ModelDims,
        categories: Vec<String>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if categories.len() != dims.num_classes || dims.num_classes < 2 {
            return Err(Error::Config(format!(
                "need >= 2 categories matching num_classes = {}, got {}",
                dims.num_classes,
                categories.len()
            )));
        }
        if dims.vocab_size < 2 || dims.max_len == 0 {
            return Err(Error::Config(
                "vocab_size must be >= 2 and max_len >= 1".into(),
            ));
        }
        let d = config.d_model;
        let encoder = EncoderParams::init(
            rng,
            dims.vocab_size,
            dims.max_len,
            d,
            config.d_k(),
            config.d_ff(),
            config.layers,
        );
        let aggregator =
            AggregatorParams::init(d, config.alpha, config.learnable_alpha, config.beta_source);
        let classifier = ClassifierParams::init(rng, d, categories);
        Ok(Self {
            config: config.clone(),
            dims,
            encoder,
            aggregator,
            classifier,
        })
    }

    /// Gradient accumulator with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            dims: self.dims,
            encoder: self.encoder.zeros_like(),
            aggregator: self.aggregator.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// All learnable tensors with stable names, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.aggregator.named_tensors());
        out.extend(self.classifier.named_tensors());
        out
    }

    /// Same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.aggregator.tensors_mut());
        out.extend(self.classifier.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn d_model(&self) -> usize {
        self.encoder.d_model()
    }

    /// Forward pass over explicit ids and key-validity flags.
    pub fn forward(&self, ids: &[u32], valid: &[bool]) -> Result<ForwardPass> {
        let (h, encoder_cache) = encoder_forward(ids, valid, &self.encoder)?;
        let beta = match self.aggregator.beta_source {
            BetaSource::Query => query_pooling_weights(&h, valid, &self.aggregator.pooling_query)?,
            BetaSource::AttnRowmean => {
                let last = encoder_cache.blocks.last().ok_or_else(|| {
                    Error::Config("attn_rowmean pooling needs at least one attention block".into())
                })?;
                attention_pooling_weights(&last.attn.weights, valid)?
            }
        };
        let alpha = self.aggregator.effective_alpha();
        let z = aggregate_rows(&h, &beta, alpha)?;
        let logits = self.classifier.logits(&z.z)?;
        let hidden = HiddenStates {
            h,
            valid: valid.to_vec(),
            attention: encoder_cache.attention(),
        };
        Ok(ForwardPass {
            hidden,
            encoder_cache,
            beta,
            alpha,
            z,
            logits,
        })
    }

    /// Forward over the valid prefix only. Padded positions never influence
    /// valid ones, so this equals [`ModelParams::forward_padded`] on every
    /// output that is read downstream.
    pub fn forward_example(&self, example: &EncodedExample) -> Result<ForwardPass> {
        self.check_example(example)?;
        let ids = example.valid_ids();
        self.forward(ids, &vec![true; ids.len()])
    }

    /// Forward over the full padded sequence with a key mask.
    pub fn forward_padded(&self, example: &EncodedExample) -> Result<ForwardPass> {
        self.check_example(example)?;
        self.forward(&example.ids, &example.valid_mask())
    }

    fn check_example(&self, example: &EncodedExample) -> Result<()> {
        if example.true_len == 0 || example.true_len > example.ids.len() {
            return Err(Error::Dimension(format!(
                "true_len {} outside 1..={}",
                example.true_len,
                example.ids.len()
            )));
        }
        if example.label >= self.classifier.num_classes() {
            return Err(Error::Dimension(format!(
                "label {} but the model has {} classes",
                example.label,
                self.classifier.num_classes()
            )));
        }
        Ok(())
    }

    pub fn predict_proba(&self, example: &EncodedExample) -> Result<Vec<f64>> {
        Ok(self.forward_example(example)?.probabilities())
    }

    pub fn loss(&self, example: &EncodedExample) -> Result<f64> {
        let fwd = self.forward_example(example)?;
        Ok(cross_entropy_from_logits(&fwd.logits, example.label))
    }

    /// Cross-entropy of one example; its gradient is added into `grads`.
    pub fn loss_and_backward(
        &self,
        example: &EncodedExample,
        grads: &mut ModelParams,
    ) -> Result<f64> {
        let fwd = self.forward_example(example)?;
        let loss = cross_entropy_from_logits(&fwd.logits, example.label);
        let d_logits = cross_entropy_grad(&fwd.logits, example.label);
        self.backward(&fwd, &d_logits, grads)?;
        Ok(loss)
    }

    /// Backpropagates `d_logits` through the cached forward pass.
    pub fn backward(
        &self,
        fwd: &ForwardPass,
        d_logits: &[f64],
        grads: &mut ModelParams,
    ) -> Result<()> {
        let d_z = self
            .classifier
            .backward(&fwd.z.z, d_logits, &mut grads.classifier);
        let h = &fwd.hidden.h;
        let agg = aggregate_backward(h, &fwd.beta, fwd.alpha, &d_z)?;
        if self.aggregator.learnable_alpha {
            grads.aggregator.alpha_logit.data_mut()[0] +=
                agg.d_alpha * fwd.alpha * (1.0 - fwd.alpha);
        }
        let mut d_h = agg.d_h;
        let mut d_attention = None;
        match self.aggregator.beta_source {
            BetaSource::Query => {
                let (d_h_pool, d_query) = query_pooling_backward(
                    h,
                    &fwd.beta,
                    &self.aggregator.pooling_query,
                    &agg.d_beta,
                )?;
                d_h.add_assign(&d_h_pool)?;
                grads.aggregator.pooling_query.add_assign(&d_query)?;
            }
            BetaSource::AttnRowmean => {
                let n = h.rows();
                d_attention = Some(attention_pooling_backward((n, n), &fwd.beta, &agg.d_beta));
            }
        }
        encoder_backward(
            &fwd.encoder_cache,
            &self.encoder,
            &d_h,
            d_attention.as_ref(),
            &mut grads.encoder,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 12,
            max_len: 8,
            num_classes: 3,
        }
    }

    fn config(source: BetaSource) -> TrainConfig {
        TrainConfig {
            d_model: 4,
            d_k: Some(3),
            d_ff: Some(6),
            layers: 2,
            beta_source: source,
            seed: 11,
            ..Default::default()
        }
    }

    fn categories() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    #[test]
    fn prefix_route_matches_padded_route() {
        for source in [BetaSource::Query, BetaSource::AttnRowmean] {
            let mut params = ModelParams::init(&config(source), dims(), categories()).unwrap();
            params.aggregator.pooling_query = Matrix::row_vector(vec![0.5, -0.3, 0.8, 0.1]);
            let ex = EncodedExample {
                ids: vec![3, 9, 4, 2, 11, 0, 0, 0],
                true_len: 5,
                label: 1,
            };
            let a = params.forward_example(&ex).unwrap();
            let b = params.forward_padded(&ex).unwrap();
            for (x, y) in a.logits.iter().zip(&b.logits) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a.beta.beta.len(), b.beta.beta.len());
        }
    }

    #[test]
    fn tensor_listing_is_aligned() {
        let mut params =
            ModelParams::init(&config(BetaSource::Query), dims(), categories()).unwrap();
        let shapes: Vec<_> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| t.shape())
            .collect();
        let mut_shapes: Vec<_> = params.tensors_mut().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(params.named_tensors().len(), 2 + 2 * 12 + 2 + 2);
    }

    #[test]
    fn label_out_of_range_is_a_dimension_error() {
        let params = ModelParams::init(&config(BetaSource::Query), dims(), categories()).unwrap();
        let ex = EncodedExample {
            ids: vec![3, 0],
            true_len: 1,
            label: 7,
        };
        assert!(matches!(params.loss(&ex), Err(Error::Dimension(_))));
    }

    #[test]
    fn logits_gradient_is_p_minus_onehot() {
        let logits = [0.3, -1.2, 2.0];
        let g = cross_entropy_grad(&logits, 2);
        let p = softmax_from_logits(&logits);
        assert_eq!(g, [p[0], p[1], p[2] - 1.0]);
    }
}
