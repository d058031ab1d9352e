//! Mini-batch training loop.

use log::{debug, info};

use crate::config::{ModelDims, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::DatasetSplit;
use crate::model::ModelParams;
use crate::numeric::Rng;
use crate::optim::Adam;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a fresh model on `data`.
///
/// One RNG seeded with `config.seed` draws the initial parameters and then
/// the example order of every epoch, so the result depends on nothing else.
pub fn train(data: &DatasetSplit, vocab_size: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dims = ModelDims {
        vocab_size,
        max_len: data.max_len().unwrap_or(1),
        num_classes: data.num_classes(),
    };
    let mut rng = Rng::new(config.seed);
    let params = ModelParams::init_with_rng(config, dims, data.categories.clone(), &mut rng)?;
    info!(
        "training {} parameters on {} examples for {} epochs",
        params.num_parameters(),
        data.len(),
        config.epochs
    );
    train_from(params, data, config, &mut rng)
}

/// Continues training `params`, drawing example orders from `rng`.
pub fn train_from(
    mut params: ModelParams,
    data: &DatasetSplit,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut adam = Adam::new(config, &params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in idx {
                batch_loss += params.loss_and_backward(&data.examples[i], &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let scale = 1.0 / idx.len() as f64;
            grads
                .tensors_mut()
                .into_iter()
                .for_each(|g| g.scale_in_place(scale));
            adam.step(&mut params, &grads)?;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / data.len() as f64;
        debug!("epoch {epoch}: mean loss {mean:.6}");
        loss_history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}
