//! Metrics, ROC analysis, leave-one-subject-out cross-validation and
//! subject-level majority voting.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{
    ensemble_channel_relevance, fit_ensemble, labels_from_proba, ChannelRelevance, EnsembleConfig,
};
use crate::error::{Error, Result};

/// Counts with respect to a fixed positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8], positive: u8) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == positive, p == positive) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Rows are true (negative, positive), columns predicted.
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(c.tp + c.tn, c.total());
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        let precision = ratio(c.tp, c.tp + c.fp);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            degenerate = true;
            0.0
        };
        Self {
            accuracy,
            sensitivity,
            specificity,
            precision,
            f1,
            confusion: c,
            degenerate,
        }
    }
}

pub fn compute_metrics(y_true: &[u8], y_pred: &[u8], positive_class: u8) -> Result<Metrics> {
    if y_true.is_empty() {
        return Err(Error::InvalidData("cannot compute metrics on empty input".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.iter().chain(y_pred).chain([&positive_class]).any(|&l| l > 1) {
        return Err(Error::InvalidData("labels must be 0 or 1".into()));
    }
    Ok(Metrics::from_confusion(Confusion::from_labels(y_true, y_pred, positive_class)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Thresholds descending; a point predicts class 1 when `p >= threshold`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Just above 1 and just below 0.
const THRESHOLD_ABOVE: f64 = 1.0 + f64::EPSILON;
const THRESHOLD_BELOW: f64 = -5e-324;

fn check_scores(y_true: &[u8], prob_positive: &[f64]) -> Result<[usize; 2]> {
    if y_true.len() != prob_positive.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} probabilities",
            y_true.len(),
            prob_positive.len()
        )));
    }
    if prob_positive.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidData("probabilities must lie in [0, 1]".into()));
    }
    if y_true.iter().any(|&l| l > 1) {
        return Err(Error::InvalidData("labels must be 0 or 1".into()));
    }
    let pos = y_true.iter().filter(|&&l| l == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidData(
            "ROC needs both classes present in y_true".into(),
        ));
    }
    Ok([neg, pos])
}

pub fn roc(y_true: &[u8], prob_positive: &[f64]) -> Result<RocCurve> {
    let [neg, pos] = check_scores(y_true, prob_positive)?;
    let mut order: Vec<usize> = (0..y_true.len()).collect();
    order.sort_by(|&a, &b| prob_positive[b].total_cmp(&prob_positive[a]));

    let mut points = vec![RocPoint {
        threshold: THRESHOLD_ABOVE,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = prob_positive[order[k]];
        while k < order.len() && prob_positive[order[k]] == t {
            if y_true[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: THRESHOLD_BELOW,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn mann_whitney_auc(y_true: &[u8], prob_positive: &[f64]) -> Result<f64> {
    let [neg, pos] = check_scores(y_true, prob_positive)?;
    let mut score = 0.0;
    for (i, &pi) in prob_positive.iter().enumerate() {
        if y_true[i] != 1 {
            continue;
        }
        for (j, &pj) in prob_positive.iter().enumerate() {
            if y_true[j] == 0 {
                score += if pi > pj {
                    1.0
                } else if pi == pj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    Ok(score / (pos * neg) as f64)
}

/// Threshold on the curve with the best accuracy (class 1 positive). Ties go
/// to the threshold nearest 0.5, then to the lower one.
pub fn best_threshold(
    curve: &RocCurve,
    y_true: &[u8],
    prob_positive: &[f64],
) -> Result<(f64, Metrics)> {
    check_scores(y_true, prob_positive)?;
    let mut best: Option<(f64, Metrics)> = None;
    for point in &curve.points {
        let t = point.threshold;
        let pred: Vec<u8> = prob_positive.iter().map(|&p| u8::from(p >= t)).collect();
        let m = compute_metrics(y_true, &pred, 1)?;
        let better = match &best {
            None => true,
            Some((bt, bm)) => {
                let (d, bd) = ((t - 0.5).abs(), (bt - 0.5).abs());
                m.accuracy > bm.accuracy
                    || (m.accuracy == bm.accuracy && (d < bd || (d == bd && t < *bt)))
            }
        };
        if better {
            best = Some((t, m));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("ROC curve has no points".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosoOptions {
    /// Run folds concurrently; results do not depend on this.
    pub parallel_folds: bool,
    pub positive_class: u8,
}

impl Default for LosoOptions {
    fn default() -> Self {
        Self {
            parallel_folds: false,
            positive_class: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub subject: i64,
    pub test_indices: Vec<usize>,
    pub n_train: usize,
    pub metrics: Metrics,
    pub relevance: ChannelRelevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub subject: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldReport>,
    pub skipped: Vec<SkippedFold>,
    /// Sum of the fold confusions.
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Held-out probability of class 1 per instance; `None` in skipped folds.
    pub probabilities: Vec<Option<f64>>,
    /// Mean of the fold relevances.
    pub mean_relevance: Option<ChannelRelevance>,
}

enum FoldOutcome {
    Done(FoldReport, Vec<f64>),
    Skipped(SkippedFold),
}

/// Sorted distinct subject ids and the instance indices of each.
pub fn subject_groups(subject_ids: &[i64]) -> BTreeMap<i64, Vec<usize>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &s) in subject_ids.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    groups
}

/// One fold per subject: an ensemble trained on every other subject
/// predicts the held-out subject's trials.
pub fn loso_cv(dataset: &Dataset, config: &EnsembleConfig, options: &LosoOptions) -> Result<LosoReport> {
    config.validate()?;
    let subject_ids = dataset
        .subject_ids()
        .ok_or_else(|| Error::InvalidData("dataset has no subject ids".into()))?;
    let groups = subject_groups(subject_ids);
    if groups.len() < 2 {
        return Err(Error::InvalidData(
            "leave-one-subject-out needs at least two subjects".into(),
        ));
    }
    let run_fold = |(&subject, test): (&i64, &Vec<usize>)| -> Result<FoldOutcome> {
        let train_idx: Vec<usize> = (0..dataset.n_instances())
            .filter(|&i| subject_ids[i] != subject)
            .collect();
        if train_idx.iter().any(|&i| subject_ids[i] == subject) || test.iter().any(|i| train_idx.binary_search(i).is_ok()) {
            return Err(Error::Invariant(format!("subject {subject} leaked into training")));
        }
        let train = dataset.select(&train_idx);
        if !train.has_both_classes() {
            return Ok(FoldOutcome::Skipped(SkippedFold {
                subject,
                reason: "training part without this subject contains a single class".into(),
            }));
        }
        let held_out = dataset.select(test);
        let model = fit_ensemble(&train, config)?;
        let proba = model.predict_proba(&held_out)?;
        let pred = labels_from_proba(&proba, config.threshold);
        let metrics = compute_metrics(held_out.labels(), &pred, options.positive_class)?;
        Ok(FoldOutcome::Done(
            FoldReport {
                subject,
                test_indices: test.clone(),
                n_train: train_idx.len(),
                metrics,
                relevance: ensemble_channel_relevance(&model),
            },
            proba.iter().map(|p| p[1]).collect(),
        ))
    };
    let outcomes: Vec<FoldOutcome> = if options.parallel_folds {
        groups.par_iter().map(run_fold).collect::<Result<_>>()?
    } else {
        groups.iter().map(run_fold).collect::<Result<_>>()?
    };

    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    let mut confusion = Confusion::default();
    let mut probabilities = vec![None; dataset.n_instances()];
    for outcome in outcomes {
        match outcome {
            FoldOutcome::Done(fold, proba) => {
                for (&i, p) in fold.test_indices.iter().zip(proba) {
                    probabilities[i] = Some(p);
                }
                confusion.add(&fold.metrics.confusion);
                folds.push(fold);
            }
            FoldOutcome::Skipped(s) => skipped.push(s),
        }
    }
    let mean_relevance = (!folds.is_empty()).then(|| {
        let mut sum = vec![0.0; dataset.n_channels()];
        for f in &folds {
            for (s, v) in sum.iter_mut().zip(&f.relevance.values) {
                *s += v;
            }
        }
        ChannelRelevance::from_raw(sum)
    });
    Ok(LosoReport {
        folds,
        skipped,
        confusion,
        metrics: Metrics::from_confusion(confusion),
        probabilities,
        mean_relevance,
    })
}

/// Majority label of each subject's trials, ties to class 1, and the
/// fraction of subjects whose majority matches `y_true_subjects`.
pub fn subject_majority_vote(
    y_pred_trials: &[u8],
    subject_ids: &[i64],
    y_true_subjects: &BTreeMap<i64, u8>,
) -> Result<(BTreeMap<i64, u8>, f64)> {
    if y_pred_trials.len() != subject_ids.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} subject ids",
            y_pred_trials.len(),
            subject_ids.len()
        )));
    }
    let mut votes: BTreeMap<i64, [usize; 2]> = BTreeMap::new();
    for (&p, &s) in y_pred_trials.iter().zip(subject_ids) {
        votes.entry(s).or_default()[usize::from(p == 1)] += 1;
    }
    for s in y_true_subjects.keys() {
        if !votes.contains_key(s) {
            return Err(Error::InvalidData(format!("subject {s} has no trial predictions")));
        }
    }
    let predictions: BTreeMap<i64, u8> = votes
        .iter()
        .map(|(&s, v)| (s, u8::from(v[1] >= v[0])))
        .collect();
    if y_true_subjects.is_empty() {
        return Err(Error::InvalidData("no subject labels given".into()));
    }
    let hits = y_true_subjects
        .iter()
        .filter(|(s, l)| predictions[s] == **l)
        .count();
    Ok((predictions, hits as f64 / y_true_subjects.len() as f64))
}

/// Majority true label per subject (ties to class 1).
pub fn subject_labels(labels: &[u8], subject_ids: &[i64]) -> BTreeMap<i64, u8> {
    let mut counts: BTreeMap<i64, [usize; 2]> = BTreeMap::new();
    for (&l, &s) in labels.iter().zip(subject_ids) {
        counts.entry(s).or_default()[usize::from(l == 1)] += 1;
    }
    counts
        .into_iter()
        .map(|(s, c)| (s, u8::from(c[1] >= c[0])))
        .collect()
}

/// Distinct subjects, ascending.
pub fn subjects(subject_ids: &[i64]) -> Vec<i64> {
    subject_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}
