//! Agreement and classification metrics.
//!
//! Everything here is generic over the label type so the same code serves the
//! 4-class annotation scheme and the 3-class task labels. All arithmetic is
//! `f64`; rounding happens only when reports are rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display, Write as _};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label sequences are empty")]
    Empty,
    #[error("need at least two annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("no annotator pair shares an item")]
    NoOverlap,
    #[error("no item has at least two ratings")]
    NoMultiplyRatedItems,
    #[error("label `{0}` is not in the matrix label set")]
    UnknownLabel(String),
    #[error("item `{0}` has a prediction but no gold label")]
    MissingGold(String),
    #[error("counts must be a {0}x{0} matrix")]
    NotSquare(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Cohen's kappa with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_items: usize,
}

/// Cohen's kappa between two aligned label sequences.
///
/// When both raters use a single identical label throughout, the expected
/// agreement is 1 and kappa is defined as 1.
pub fn cohen_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<KappaResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let mut marg_a: BTreeMap<&L, usize> = BTreeMap::new();
    let mut marg_b: BTreeMap<&L, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .map(|(label, &ca)| {
            let cb = marg_b.get(label).copied().unwrap_or(0);
            (ca as f64 / n) * (cb as f64 / n)
        })
        .sum();
    let kappa = if p_e >= 1.0 {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(KappaResult {
        kappa,
        observed_agreement: p_o,
        expected_agreement: p_e,
        n_items: a.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairKappa {
    pub annotator_a: String,
    pub annotator_b: String,
    pub n_items: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseKappa {
    pub mean_kappa: f64,
    pub pairs: Vec<PairKappa>,
    /// Annotator pairs without any shared item.
    pub skipped_pairs: Vec<(String, String)>,
}

/// Unweighted mean of Cohen's kappa over all annotator pairs, each pair
/// evaluated on the items both annotated.
///
/// `ratings` maps annotator id → (item id → label).
pub fn mean_pairwise_kappa<L: Ord>(
    ratings: &BTreeMap<String, BTreeMap<String, L>>,
) -> Result<PairwiseKappa, MetricsError> {
    if ratings.len() < 2 {
        return Err(MetricsError::TooFewAnnotators(ratings.len()));
    }
    let annotators: Vec<(&String, &BTreeMap<String, L>)> = ratings.iter().collect();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (i, (name_a, items_a)) in annotators.iter().enumerate() {
        for (name_b, items_b) in &annotators[i + 1..] {
            let (xs, ys): (Vec<&L>, Vec<&L>) = items_a
                .iter()
                .filter_map(|(item, la)| items_b.get(item).map(|lb| (la, lb)))
                .unzip();
            if xs.is_empty() {
                skipped.push(((*name_a).clone(), (*name_b).clone()));
                continue;
            }
            let k = cohen_kappa(&xs, &ys)?;
            pairs.push(PairKappa {
                annotator_a: (*name_a).clone(),
                annotator_b: (*name_b).clone(),
                n_items: k.n_items,
                kappa: k.kappa,
            });
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let mean_kappa = pairs.iter().map(|p| p.kappa).sum::<f64>() / pairs.len() as f64;
    Ok(PairwiseKappa {
        mean_kappa,
        pairs,
        skipped_pairs: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FleissResult {
    pub kappa: f64,
    pub mean_item_agreement: f64,
    pub expected_agreement: f64,
    pub n_items: usize,
}

/// Fleiss' kappa allowing a variable number of raters per item. Items with
/// fewer than two ratings are ignored.
pub fn fleiss_kappa<L: Ord>(items: &BTreeMap<String, Vec<L>>) -> Result<FleissResult, MetricsError> {
    let mut item_agreement = Vec::new();
    let mut totals: BTreeMap<&L, usize> = BTreeMap::new();
    let mut n_ratings = 0usize;
    for labels in items.values() {
        let n_i = labels.len();
        if n_i < 2 {
            continue;
        }
        let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l).or_default() += 1;
            *totals.entry(l).or_default() += 1;
        }
        n_ratings += n_i;
        let same: usize = counts.values().map(|&c| c * (c - 1)).sum();
        item_agreement.push(same as f64 / (n_i * (n_i - 1)) as f64);
    }
    if item_agreement.is_empty() {
        return Err(MetricsError::NoMultiplyRatedItems);
    }
    let p_bar = item_agreement.iter().sum::<f64>() / item_agreement.len() as f64;
    let p_e: f64 = totals
        .values()
        .map(|&c| {
            let p = c as f64 / n_ratings as f64;
            p * p
        })
        .sum();
    let kappa = if p_e >= 1.0 {
        1.0
    } else {
        (p_bar - p_e) / (1.0 - p_e)
    };
    Ok(FleissResult {
        kappa,
        mean_item_agreement: p_bar,
        expected_agreement: p_e,
        n_items: item_agreement.len(),
    })
}

/// Rows are gold labels, columns are predictions, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix<L> {
    labels: Vec<L>,
    counts: Vec<Vec<u64>>,
}

impl<L: Ord + Clone + Display> ConfusionMatrix<L> {
    pub fn new(labels: Vec<L>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(labels: Vec<L>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(MetricsError::NotSquare(k));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    fn index_of(&self, label: &L) -> Result<usize, MetricsError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))
    }

    pub fn add(&mut self, gold: &L, predicted: &L) -> Result<(), MetricsError> {
        let g = self.index_of(gold)?;
        let p = self.index_of(predicted)?;
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn get(&self, gold: &L, predicted: &L) -> Result<u64, MetricsError> {
        Ok(self.counts[self.index_of(gold)?][self.index_of(predicted)?])
    }

    pub fn labels(&self) -> &[L] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// CSV with a `gold\pred` header row and one row per gold label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let _ = write!(out, "{l}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

impl<L: Display> Display for ConfusionMatrix<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "gold\\pred")?;
        for l in &self.labels {
            write!(f, "{:>7}", l.to_string())?;
        }
        writeln!(f)?;
        for (l, row) in self.labels.iter().zip(&self.counts) {
            write!(f, "{:>8}", l.to_string())?;
            for c in row {
                write!(f, "{c:>7}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Builds a confusion matrix from `(item id, predicted label)` pairs and a
/// gold mapping. Every predicted item must have a gold label.
pub fn confusion<L: Ord + Clone + Display>(
    predictions: &[(String, L)],
    gold: &BTreeMap<String, L>,
    labels: Vec<L>,
) -> Result<ConfusionMatrix<L>, MetricsError> {
    let mut m = ConfusionMatrix::new(labels);
    for (id, pred) in predictions {
        let g = gold.get(id).ok_or_else(|| MetricsError::MissingGold(id.clone()))?;
        m.add(g, pred)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold items of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n: u64,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn f1_of(&self, label: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.label == label).map(|c| c.f1)
    }
}

impl Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:>6} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(f, "macro-F1 {:.4}  accuracy {:.4}  n {}", self.macro_f1, self.accuracy, self.n)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 and their unweighted mean.
///
/// A class with no gold items gets F1 = 0 and a warning.
pub fn macro_f1<L: Ord + Clone + Display>(m: &ConfusionMatrix<L>) -> Result<MetricsReport, MetricsError> {
    let n = m.total();
    if m.labels.is_empty() || n == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(m.labels.len());
    for (i, label) in m.labels.iter().enumerate() {
        let tp = m.counts[i][i];
        let support = m.row_sum(i);
        let predicted = m.col_sum(i);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if support == 0 {
            warnings.push(format!("class {label} has no gold items; F1 set to 0"));
            log::warn!("class {label} has no gold items; F1 set to 0");
            0.0
        } else if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScores {
            label: label.to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let correct: u64 = (0..m.labels.len()).map(|i| m.counts[i][i]).sum();
    Ok(MetricsReport {
        per_class,
        macro_f1,
        accuracy: correct as f64 / n as f64,
        n,
        warnings,
    })
}

/// Distinct labels over both sequences, sorted.
pub fn label_universe<L: Ord + Clone>(a: &[L], b: &[L]) -> Vec<L> {
    a.iter().chain(b).cloned().collect::<BTreeSet<_>>().into_iter().collect()
}
