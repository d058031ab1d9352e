//! Evaluation, the synthetic keyword corpus and the two sensitivity sweeps.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::ingest::{DatasetSplit, EncodedExample, RawExample, Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::metrics::MetricsReport;
use crate::model::ModelParams;
use crate::numeric::Rng;
use crate::train::train;

/// Runs the model over every example of `test` and scores the predictions.
pub fn evaluate_model(params: &ModelParams, test: &DatasetSplit) -> Result<MetricsReport> {
    let m = params.classifier.num_classes();
    if test.num_classes() != m {
        return Err(Error::Dimension(format!(
            "model has {m} classes, data has {}",
            test.num_classes()
        )));
    }
    if let Some(len) = test.max_len() {
        if len > params.dims.max_len {
            return Err(Error::Dimension(format!(
                "sequences of length {len} exceed the model's {} positions",
                params.dims.max_len
            )));
        }
    }
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for e in &test.examples {
        scores.push(params.predict_proba(e)?);
        labels.push(e.label);
    }
    MetricsReport::from_scores(&scores, &labels, m)
}

// ---------------------------------------------------------------------------
// Synthetic keyword corpus

const POOL_SIZE: usize = 10;
const CLASS_WORDS: usize = 5;
const NEUTRAL_WORDS: usize = 3;

fn class_word(class: usize, i: usize) -> String {
    format!("c{class}w{i}")
}

fn neutral_word(i: usize) -> String {
    format!("n{i}")
}

/// Fixed vocabulary over every pool word, shared by all synthetic splits.
pub fn synthetic_vocabulary(classes: usize) -> Vocabulary {
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    for c in 0..classes {
        tokens.extend((0..POOL_SIZE).map(|i| class_word(c, i)));
    }
    tokens.extend((0..POOL_SIZE).map(neutral_word));
    Vocabulary::from_tokens(tokens).expect("pool words are distinct")
}

/// Raw synthetic texts: each class owns a disjoint pool of 10 keywords; an
/// example is 5 words from its class pool and 3 from a shared neutral pool,
/// in random order. Examples come out shuffled.
pub fn synthetic_raw(classes: usize, n_per_class: usize, seed: u64) -> Vec<RawExample> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for c in 0..classes {
            let mut words: Vec<String> = (0..CLASS_WORDS)
                .map(|_| class_word(c, rng.below(POOL_SIZE)))
                .collect();
            words.extend((0..NEUTRAL_WORDS).map(|_| neutral_word(rng.below(POOL_SIZE))));
            rng.shuffle(&mut words);
            out.push(RawExample {
                label: c,
                title: words.join(" "),
                description: String::new(),
            });
        }
    }
    rng.shuffle(&mut out);
    out
}

/// Encoded synthetic split (sequence length 8) over [`synthetic_vocabulary`].
pub fn make_synthetic(classes: usize, n_per_class: usize, seed: u64) -> (DatasetSplit, Vocabulary) {
    assert!(classes >= 2 && n_per_class >= 1);
    let vocab = synthetic_vocabulary(classes);
    let categories = (0..classes).map(|c| format!("class{c}")).collect();
    let raw = synthetic_raw(classes, n_per_class, seed);
    let split = DatasetSplit::encode_all(&raw, &vocab, CLASS_WORDS + NEUTRAL_WORDS, categories);
    (split, vocab)
}

// ---------------------------------------------------------------------------
// Sweeps

/// One cell of a sweep. Failed cells keep their error and report NaN scores.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub setting: u64,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    /// Rows sorted by `(setting, seed)`.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by_key(|r| (r.setting, r.seed));
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,seed,precision,recall,f1,auc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.setting, r.seed, r.precision, r.recall, r.f1, r.auc
            ));
        }
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

fn failed_row(setting: u64, seed: u64, err: &Error) -> SweepRow {
    warn!("sweep cell setting={setting} seed={seed} failed: {err}");
    SweepRow {
        setting,
        seed,
        precision: f64::NAN,
        recall: f64::NAN,
        f1: f64::NAN,
        auc: f64::NAN,
        report: None,
        error: Some(err.to_string()),
    }
}

/// Seed owned by one sweep cell.
pub fn cell_seed(setting: u64, seed: u64) -> u64 {
    Rng::derive_seed(&[setting, seed])
}

/// Runs `f` on every cell using up to `workers` threads. Cells own their
/// RNGs, so the result does not depend on scheduling.
fn run_cells<F>(cells: &[(u64, u64)], workers: usize, f: F) -> Vec<SweepRow>
where
    F: Fn(u64, u64) -> SweepRow + Sync,
{
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(setting, seed)) = cells.get(i) else {
                    break;
                };
                let row = f(setting, seed);
                rows.lock().expect("no worker panicked").push(row);
            });
        }
    });
    rows.into_inner().expect("no worker panicked")
}

/// Shared inputs of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub train: &'a DatasetSplit,
    pub test: &'a DatasetSplit,
    pub vocab_size: usize,
    /// Worker threads; 1 runs the cells in order on the calling thread.
    pub workers: usize,
}

/// Trains one model per `(d, seed)` with `d_k = d` and `d_ff = 4d`, reporting
/// macro precision, recall, F1 and one-vs-rest AUC.
pub fn sweep_hidden(
    dims: &[usize],
    base: &TrainConfig,
    data: SweepData<'_>,
    seeds: &[u64],
) -> Result<SweepResult> {
    if dims.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one setting and one seed".into(),
        ));
    }
    let cells: Vec<(u64, u64)> = dims
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d as u64, s)))
        .collect();
    let rows = run_cells(&cells, data.workers, |d, seed| {
        let config = TrainConfig {
            seed: cell_seed(d, seed),
            ..base.with_hidden(d as usize)
        };
        info!("hidden sweep cell d={d} seed={seed}");
        let run = || -> Result<SweepRow> {
            let out = train(data.train, data.vocab_size, &config)?;
            let report = evaluate_model(&out.params, data.test)?;
            Ok(SweepRow {
                setting: d,
                seed,
                precision: report.macro_precision,
                recall: report.macro_recall,
                f1: report.macro_f1,
                auc: report.macro_auc_ovr,
                report: Some(report),
                error: None,
            })
        };
        run().unwrap_or_else(|e| failed_row(d, seed, &e))
    });
    Ok(SweepResult::from_rows(rows))
}

/// Positive class and the `k` of each `1:k` training ratio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImbalanceSpec {
    pub positive_class: usize,
    pub ratios: Vec<usize>,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios[0] < 1 {
            return Err(Error::Config("imbalance ratios must be >= 1".into()));
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "imbalance ratios must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Label of the positive class in a binarized split; negatives are 0.
pub const BINARY_POSITIVE: usize = 1;

/// Balanced binary split: every example of `positive_class` (label 1) plus
/// an equal number of examples drawn uniformly from the other classes
/// (label 0).
pub fn binarize_balanced(
    data: &DatasetSplit,
    positive_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if positive_class >= data.num_classes() {
        return Err(Error::Config(format!(
            "positive class {positive_class} out of range for {} classes",
            data.num_classes()
        )));
    }
    let (mut pos, mut neg): (Vec<EncodedExample>, Vec<EncodedExample>) = data
        .examples
        .iter()
        .cloned()
        .partition(|e| e.label == positive_class);
    if pos.is_empty() || neg.len() < pos.len() {
        return Err(Error::InsufficientPositives {
            required: 1.max(pos.len()),
            available: pos.len().min(neg.len()),
        });
    }
    Rng::new(seed).shuffle(&mut neg);
    neg.truncate(pos.len());
    let name = &data.categories[positive_class];
    let mut examples = Vec::with_capacity(2 * pos.len());
    for (mut e, label) in neg
        .into_iter()
        .map(|e| (e, 0))
        .chain(pos.drain(..).map(|e| (e, BINARY_POSITIVE)))
    {
        e.label = label;
        examples.push(e);
    }
    Ok(DatasetSplit::from_encoded(
        examples,
        vec![format!("not {name}"), name.clone()],
    ))
}

/// Indices of a binary split kept for ratio `1:k`: all negatives plus
/// `floor(N_neg / k)` positives sampled without replacement, in original
/// order.
pub fn subsample_positives(data: &DatasetSplit, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("imbalance ratio must be >= 1".into()));
    }
    let (mut pos, neg): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| data.examples[i].label == BINARY_POSITIVE);
    let required = neg.len() / k;
    if required > pos.len() {
        return Err(Error::InsufficientPositives {
            required,
            available: pos.len(),
        });
    }
    rng.shuffle(&mut pos);
    pos.truncate(required);
    let mut keep = neg;
    keep.extend(pos);
    keep.sort_unstable();
    Ok(keep)
}

/// Seed used to balance the training and test splits before the imbalance
/// sweep.
pub const BALANCE_SEED: u64 = 0x1B;

/// Binary positive-vs-rest sweep over training ratios `1:k`. Both splits are
/// first balanced; the test split stays balanced, the training split keeps
/// its negatives and loses positives. Reports positive-class precision,
/// recall, F1 and AUC.
pub fn sweep_imbalance(
    spec: &ImbalanceSpec,
    base: &TrainConfig,
    data: SweepData<'_>,
    seeds: &[u64],
) -> Result<SweepResult> {
    spec.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let train_bin = binarize_balanced(data.train, spec.positive_class, BALANCE_SEED)?;
    let test_bin = binarize_balanced(data.test, spec.positive_class, BALANCE_SEED + 1)?;
    let cells: Vec<(u64, u64)> = spec
        .ratios
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k as u64, s)))
        .collect();
    let rows = run_cells(&cells, data.workers, |k, seed| {
        let cs = cell_seed(k, seed);
        let config = TrainConfig {
            seed: cs,
            ..base.clone()
        };
        info!("imbalance sweep cell 1:{k} seed={seed}");
        let run = || -> Result<SweepRow> {
            let keep = subsample_positives(&train_bin, k as usize, &mut Rng::new(cs))?;
            let subset = DatasetSplit::from_encoded(
                keep.iter()
                    .map(|&i| train_bin.examples[i].clone())
                    .collect(),
                train_bin.categories.clone(),
            );
            let out = train(&subset, data.vocab_size, &config)?;
            let report = evaluate_model(&out.params, &test_bin)?;
            let p = BINARY_POSITIVE;
            Ok(SweepRow {
                setting: k,
                seed,
                precision: report.precision[p],
                recall: report.recall[p],
                f1: report.f1[p],
                auc: report.per_class_auc[p].unwrap_or(f64::NAN),
                report: Some(report),
                error: None,
            })
        };
        run().unwrap_or_else(|e| failed_row(k, seed, &e))
    });
    Ok(SweepResult::from_rows(rows))
}

/// Median of the finite recalls recorded for `setting`.
pub fn median_recall(result: &SweepResult, setting: u64) -> Option<f64> {
    let mut v: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.setting == setting && r.recall.is_finite())
        .map(|r| r.recall)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(labels: &[usize]) -> DatasetSplit {
        let examples = labels
            .iter()
            .map(|&label| EncodedExample {
                ids: vec![2],
                true_len: 1,
                label,
            })
            .collect();
        DatasetSplit::from_encoded(examples, vec!["neg".into(), "pos".into()])
    }

    #[test]
    fn synthetic_vocabulary_is_bounded() {
        let (split, vocab) = make_synthetic(2, 20, 1);
        assert!(vocab.len() <= 32);
        assert_eq!(split.len(), 40);
        assert_eq!(split.class_counts, vec![20, 20]);
        assert!(split.examples.iter().all(|e| e.true_len == 8));
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(synthetic_raw(2, 10, 4), synthetic_raw(2, 10, 4));
        assert_ne!(synthetic_raw(2, 10, 4), synthetic_raw(2, 10, 5));
    }

    #[test]
    fn synthetic_class_words_stay_in_their_pool() {
        for e in synthetic_raw(2, 30, 9) {
            let own = format!("c{}w", e.label);
            let words: Vec<&str> = e.title.split(' ').collect();
            assert_eq!(words.len(), 8);
            assert_eq!(words.iter().filter(|w| w.starts_with(&own)).count(), 5);
            assert_eq!(words.iter().filter(|w| w.starts_with('n')).count(), 3);
        }
    }

    #[test]
    fn identity_ratio_keeps_everything() {
        let data = binary(&[0, 1, 0, 1, 1, 0]);
        let keep = subsample_positives(&data, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(keep, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn floor_arithmetic() {
        let mut labels = vec![0; 600];
        labels.extend(vec![1; 600]);
        let data = binary(&labels);
        let keep = subsample_positives(&data, 4, &mut Rng::new(0)).unwrap();
        let pos = keep
            .iter()
            .filter(|&&i| data.examples[i].label == 1)
            .count();
        assert_eq!(pos, 150);
        assert_eq!(keep.len(), 750);
    }

    #[test]
    fn insufficient_positives_names_the_count() {
        let data = binary(&[0, 0, 0, 1]);
        match subsample_positives(&data, 1, &mut Rng::new(0)) {
            Err(Error::InsufficientPositives {
                required,
                available,
            }) => {
                assert_eq!((required, available), (3, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn balanced_binarization() {
        let examples = (0..40)
            .map(|i| EncodedExample {
                ids: vec![2],
                true_len: 1,
                label: i % 4,
            })
            .collect();
        let data = DatasetSplit::from_encoded(examples, (0..4).map(|c| c.to_string()).collect());
        let bin = binarize_balanced(&data, 2, 7).unwrap();
        assert_eq!(bin.class_counts, vec![10, 10]);
        assert_eq!(bin.categories, vec!["not 2".to_string(), "2".to_string()]);
    }

    #[test]
    fn ratios_must_increase() {
        let spec = ImbalanceSpec {
            positive_class: 0,
            ratios: vec![1, 3, 2],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn csv_layout_and_nan_cells() {
        let err = Error::EmptyCorpus;
        let ok = SweepRow {
            setting: 16,
            seed: 0,
            precision: 0.5,
            recall: 0.25,
            f1: 1.0 / 3.0,
            auc: 0.75,
            report: None,
            error: None,
        };
        let result = SweepResult::from_rows(vec![failed_row(32, 1, &err), ok]);
        assert_eq!(
            result.to_csv(),
            "setting,seed,precision,recall,f1,auc\n16,0,0.500000,0.250000,0.333333,0.750000\n32,1,NaN,NaN,NaN,NaN\n"
        );
        assert_eq!(result.failures().count(), 1);
    }

    #[test]
    fn median_of_even_count() {
        let row = |recall| SweepRow {
            setting: 1,
            seed: 0,
            precision: 0.0,
            recall,
            f1: 0.0,
            auc: 0.0,
            report: None,
            error: None,
        };
        let r = SweepResult::from_rows(vec![row(0.2), row(0.8), row(0.4), row(f64::NAN)]);
        assert_eq!(median_recall(&r, 1), Some(0.4));
        assert_eq!(median_recall(&r, 2), None);
    }
}
