//! Confusion matrices and the accuracy statistics derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Square count matrix, rows indexed by true class and columns by predicted
/// class (0-based; class `c` lives at index `c − 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>")]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Contract("confusion matrix needs at least one class".into()));
        }
        Ok(Self { classes, counts: vec![0; classes * classes] })
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let classes = rows.len();
        let mut cm = Self::new(classes)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::Contract(format!("row {t} has {} entries, expected {classes}", row.len())));
            }
            cm.counts[t * classes..(t + 1) * classes].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks_exact(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    /// Element-wise sum, e.g. pooling folds.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Contract(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.classes, self.classes
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

impl TryFrom<Vec<Vec<u64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<u64>> {
    fn from(cm: ConfusionMatrix) -> Self {
        cm.rows()
    }
}

/// Tallies `(truth, predicted)` pairs; labels are 1-based class ids.
pub fn confusion(truth: &[u16], predicted: &[u16], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Contract(format!("{} true labels but {} predictions", truth.len(), predicted.len())));
    }
    let mut cm = ConfusionMatrix::new(classes)?;
    for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        for (what, l) in [("true", t), ("predicted", p)] {
            if l == 0 || l as usize > classes {
                return Err(Error::Contract(format!("sample {i}: {what} label {l} outside 1..={classes}")));
            }
        }
        cm.counts[(t as usize - 1) * classes + p as usize - 1] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub per_class: Vec<ClassScores>,
    /// Unweighted means over all classes.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per class. Empty denominators give 0.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> PrfSummary {
    let per_class: Vec<ClassScores> = (0..cm.classes())
        .map(|i| {
            let tp = cm.get(i, i);
            let support = cm.row_sum(i);
            let precision = ratio(tp, cm.col_sum(i));
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassScores { precision, recall, f1, support }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    PrfSummary {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
    }
}

fn check_nonempty(cm: &ConfusionMatrix) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::Contract("confusion matrix is empty".into())),
        n => Ok(n),
    }
}

/// Overall accuracy and the mean recall over classes present in the truth.
pub fn overall_average_accuracy(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    let total = check_nonempty(cm)?;
    let recalls: Vec<f64> =
        (0..cm.classes()).filter(|&i| cm.row_sum(i) > 0).map(|i| ratio(cm.get(i, i), cm.row_sum(i))).collect();
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok((ratio(cm.trace(), total), aa))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1 (all mass in one cell); `value` is then 0.
    pub degenerate: bool,
}

/// Cohen's kappa with chance agreement from the row and column marginals.
pub fn kappa(cm: &ConfusionMatrix) -> Result<Kappa> {
    let total = check_nonempty(cm)? as f64;
    let observed = cm.trace() as f64 / total;
    let chance: f64 = (0..cm.classes()).map(|i| (cm.row_sum(i) as f64 / total) * (cm.col_sum(i) as f64 / total)).sum();
    if chance >= 1.0 {
        return Ok(Kappa { value: 0.0, degenerate: true });
    }
    Ok(Kappa { value: (observed - chance) / (1.0 - chance), degenerate: false })
}

/// `mean ± 1.96·sd/√k` over per-fold scores, with the sample standard
/// deviation.
pub fn fold_interval(scores: &[f64]) -> Result<[f64; 2]> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::Contract(format!("an interval over folds needs at least 2 scores, got {k}")));
    }
    let mean = scores.iter().sum::<f64>() / k as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let half = Z95 * var.sqrt() / (k as f64).sqrt();
    Ok([mean - half, mean + half])
}

/// Normal approximation to the binomial interval on one accuracy estimate
/// from `n` samples, clipped to `[0, 1]`.
pub fn binomial_interval(accuracy: f64, n: u64) -> [f64; 2] {
    let half = Z95 * (accuracy * (1.0 - accuracy) / n.max(1) as f64).sqrt();
    [(accuracy - half).max(0.0), (accuracy + half).min(1.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub kappa_degenerate: bool,
    pub ci95: [f64; 2],
    pub per_class: Vec<ClassReport>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Report for one evaluation; `ci95` is the binomial interval on OA.
    pub fn from_confusion(cm: ConfusionMatrix, names: &[String]) -> Result<Self> {
        if names.len() != cm.classes() {
            return Err(Error::Contract(format!("{} class names for {} classes", names.len(), cm.classes())));
        }
        let (oa, aa) = overall_average_accuracy(&cm)?;
        let k = kappa(&cm)?;
        let per_class = precision_recall_f1(&cm)
            .per_class
            .into_iter()
            .zip(names)
            .map(|(s, name)| ClassReport {
                name: name.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
            })
            .collect();
        Ok(Self {
            oa,
            aa,
            kappa: k.value,
            kappa_degenerate: k.degenerate,
            ci95: binomial_interval(oa, cm.total()),
            per_class,
            confusion: cm,
        })
    }

    pub fn from_labels(truth: &[u16], predicted: &[u16], names: &[String]) -> Result<Self> {
        Self::from_confusion(confusion(truth, predicted, names.len())?, names)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
