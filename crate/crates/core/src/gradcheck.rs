//! Central finite-difference verification of the analytic gradients.
//!
//! The finite-difference side only ever calls forward passes, so it stays
//! independent of the backward code it checks.

use serde::Serialize;

use crate::config::{BetaSource, ModelDims, TrainConfig};
use crate::error::Result;
use crate::ingest::EncodedExample;
use crate::model::ModelParams;
use crate::numeric::{Matrix, Rng};

/// Maximum allowed relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// Step for the entry `x`: `1e-6 · max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// `|analytic − fd| / max(1e-8, |analytic| + |fd|)`.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-8)
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn numerical_gradient(x: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = fd_step(orig);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest entrywise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &Matrix, fd: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub case: String,
    pub group: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Entry attaining `max_rel_error`, with both gradient values there.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupReport::passed)
    }

    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !g.passed())
    }
}

fn mean_loss(params: &ModelParams, examples: &[EncodedExample]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += params.loss(e)?;
    }
    Ok(total / examples.len() as f64)
}

/// Checks every parameter tensor of `params` on the mean loss over `examples`.
pub fn check_model(
    case: &str,
    params: &ModelParams,
    examples: &[EncodedExample],
) -> Result<Vec<GroupReport>> {
    check_model_with_step(case, params, examples, fd_step)
}

/// [`check_model`] with a caller-chosen step rule.
pub fn check_model_with_step(
    case: &str,
    params: &ModelParams,
    examples: &[EncodedExample],
    step: impl Fn(f64) -> f64,
) -> Result<Vec<GroupReport>> {
    let mut grads = params.zeros_like();
    for e in examples {
        params.loss_and_backward(e, &mut grads)?;
    }
    let scale = 1.0 / examples.len() as f64;
    let analytic: Vec<(String, Matrix)> = grads
        .named_tensors()
        .into_iter()
        .map(|(name, g)| (name, g.scale(scale)))
        .collect();

    let mut probe = params.clone();
    let mut reports = Vec::with_capacity(analytic.len());
    for (idx, (name, grad)) in analytic.iter().enumerate() {
        let mut fd = grad.zeros_like();
        for i in 0..grad.len() {
            let orig = probe.tensors_mut()[idx].data()[i];
            let h = step(orig);
            probe.tensors_mut()[idx].data_mut()[i] = orig + h;
            let up = mean_loss(&probe, examples)?;
            probe.tensors_mut()[idx].data_mut()[i] = orig - h;
            let down = mean_loss(&probe, examples)?;
            probe.tensors_mut()[idx].data_mut()[i] = orig;
            fd.data_mut()[i] = (up - down) / (2.0 * h);
        }
        let mut worst = (0, 0.0);
        for (i, (&a, &n)) in grad.data().iter().zip(fd.data()).enumerate() {
            let r = relative_error(a, n);
            if r > worst.1 {
                worst = (i, r);
            }
        }
        reports.push(GroupReport {
            case: case.to_string(),
            group: name.clone(),
            entries: grad.len(),
            max_rel_error: worst.1,
            worst_entry: worst.0,
            analytic: grad.data()[worst.0],
            numeric: fd.data()[worst.0],
        });
    }
    Ok(reports)
}

/// Replaces every parameter with random values so no gradient group is
/// trivially zero: gains in `[0.5, 1.5)`, everything else in `[-1, 1)`.
pub fn randomize(params: &mut ModelParams, rng: &mut Rng) {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let (lo, hi) = if name.ends_with("_gain") {
            (0.5, 1.5)
        } else {
            (-1.0, 1.0)
        };
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.uniform(lo, hi));
    }
}

/// Random examples over `vocab_size` ids, padded to `max_len`, with the given
/// true lengths.
pub fn random_examples(
    rng: &mut Rng,
    vocab_size: usize,
    max_len: usize,
    num_classes: usize,
    lengths: &[usize],
) -> Vec<EncodedExample> {
    lengths
        .iter()
        .map(|&n| {
            let mut ids: Vec<u32> = (0..n)
                .map(|_| 2 + rng.below(vocab_size - 2) as u32)
                .collect();
            ids.resize(max_len, 0);
            EncodedExample {
                ids,
                true_len: n,
                label: rng.below(num_classes),
            }
        })
        .collect()
}

/// One model configuration exercised by [`run_suite`].
#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub name: &'static str,
    pub config: TrainConfig,
    pub dims: ModelDims,
}

/// Small configurations covering every parameter group and pooling variant.
pub fn standard_cases() -> Vec<GradcheckCase> {
    let base = TrainConfig {
        d_model: 4,
        d_k: Some(3),
        d_ff: Some(8),
        ..Default::default()
    };
    vec![
        GradcheckCase {
            name: "pipeline_L1",
            config: TrainConfig {
                layers: 1,
                ..base.clone()
            },
            dims: ModelDims {
                vocab_size: 12,
                max_len: 5,
                num_classes: 3,
            },
        },
        GradcheckCase {
            name: "encoder_L2",
            config: TrainConfig {
                layers: 2,
                ..base.clone()
            },
            dims: ModelDims {
                vocab_size: 10,
                max_len: 5,
                num_classes: 3,
            },
        },
        GradcheckCase {
            name: "attn_rowmean_learnable_alpha",
            config: TrainConfig {
                layers: 2,
                beta_source: BetaSource::AttnRowmean,
                learnable_alpha: true,
                alpha: 0.3,
                ..base
            },
            dims: ModelDims {
                vocab_size: 10,
                max_len: 5,
                num_classes: 3,
            },
        },
    ]
}

/// Full suite: every standard case at every seed.
pub fn run_suite(seeds: &[u64]) -> Result<GradcheckReport> {
    let mut groups = Vec::new();
    for case in standard_cases() {
        for &seed in seeds {
            let mut rng = Rng::new(Rng::derive_seed(&[seed, case.name.len() as u64]));
            let categories = (0..case.dims.num_classes)
                .map(|c| format!("c{c}"))
                .collect();
            let mut params =
                ModelParams::init_with_rng(&case.config, case.dims, categories, &mut rng)?;
            randomize(&mut params, &mut rng);
            let examples = random_examples(
                &mut rng,
                case.dims.vocab_size,
                case.dims.max_len,
                case.dims.num_classes,
                &[5, 3],
            );
            let label = format!("{}/seed{}", case.name, seed);
            groups.extend(check_model(&label, &params, &examples)?);
        }
    }
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        groups,
    })
}
