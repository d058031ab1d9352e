//! Precision, recall, F1 (per class and macro), one-vs-rest AUC and the
//! confusion matrix.
//!
//! Conventions: any `0/0` in precision, recall or F1 is reported as `0`;
//! all averages are unweighted (macro) means; AUC uses midranks for tied
//! scores, which makes it equal to the pairwise probability
//! `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.

use serde::{Deserialize, Serialize};

use crate::classify::argmax;
use crate::error::{Error, Result};

/// `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(labels: &[usize], preds: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != preds.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in labels.iter().zip(preds) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Dimension(format!(
                "class index {} outside 0..{num_classes}",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn prf(cm: &ConfusionMatrix) -> PrfReport {
    let m = cm.num_classes();
    let mut precision = Vec::with_capacity(m);
    let mut recall = Vec::with_capacity(m);
    let mut f1 = Vec::with_capacity(m);
    for c in 0..m {
        let tp = cm.counts[c][c] as f64;
        let predicted: u64 = (0..m).map(|t| cm.counts[t][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted as f64);
        let r = ratio(tp, actual as f64);
        precision.push(p);
        recall.push(r);
        f1.push(ratio(2.0 * p * r, p + r));
    }
    PrfReport {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

/// Binary ROC AUC via the Mann–Whitney rank statistic with midranks.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group occupying sorted slots start..end shares
    // the rank (start + 1 + end) / 2. Twice the rank sum stays integral.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_rank = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| positive[i]).count() as u64;
        twice_rank_sum_pos += twice_rank * pos_in_group;
        start = end;
    }
    let n_pos = n_pos as u64;
    // 2U = 2R − n⁺(n⁺ + 1)
    let twice_u = twice_rank_sum_pos - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg as u64) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
}

/// Macro one-vs-rest AUC of `scores[i][c]` for `labels[i] == c`. Classes
/// without both positives and negatives are skipped with a warning.
pub fn auc_ovr(scores: &[Vec<f64>], labels: &[usize]) -> Result<AucReport> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} score vectors but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let m = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|s| s.len() != m) || labels.iter().any(|&l| l >= m) {
        return Err(Error::Dimension(
            "score vectors and labels disagree on class count".into(),
        ));
    }
    let mut per_class = Vec::with_capacity(m);
    for c in 0..m {
        let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let auc = binary_auc(&column, &positive);
        if auc.is_none() {
            log::warn!("class {c} has no positives or no negatives; skipped from macro AUC");
        }
        per_class.push(auc);
    }
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::AucUndefined);
    }
    Ok(AucReport {
        macro_auc: mean(&included),
        per_class,
    })
}

/// Everything reported for one evaluation pass; serializes to one JSON
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc_ovr: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Builds the report from per-example probability vectors; predictions
    /// are argmax with ties to the lowest class index.
    pub fn from_scores(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
        let cm = confusion(labels, &preds, num_classes)?;
        let p = prf(&cm);
        let auc = auc_ovr(scores, labels)?;
        Ok(Self {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            macro_precision: p.macro_precision,
            macro_recall: p.macro_recall,
            macro_f1: p.macro_f1,
            macro_auc_ovr: auc.macro_auc,
            per_class_auc: auc.per_class,
            accuracy: ratio(cm.correct() as f64, cm.total() as f64),
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
