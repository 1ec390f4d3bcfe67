//! Sequential feature detachment and the pruned single-model classifier.
//!
//! [`sfd`] repeatedly fits the ridge classifier, records validation accuracy
//! and drops the features with the smallest coefficient magnitudes.
//! [`select_optimal`] picks a step on the resulting curve by trading
//! relative accuracy against model size, and [`fit_detach`] runs the whole
//! pipeline from a raw dataset.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Mat, Parallelism};
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, znormalize, Dataset, NormStats, SplitSpec};
use crate::error::{Error, Result};
use crate::io_util::{read_f64_block, read_json, write_f64_block, write_json};
use crate::ridge::{self, default_alphas, RidgeModel, Standardizer};
use crate::transform::{self, BankConfig, BiasOptions, FeatureMatrix, KernelBank};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetachConfig {
    pub num_features: usize,
    /// Weight of model-size reduction against relative accuracy.
    pub c: f64,
    /// Fraction of the current feature count removed per step.
    pub step_proportion: f64,
    pub val_fraction: f64,
    pub min_features: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
    /// Z-normalize each channel with training statistics before the transform.
    pub normalize: bool,
    /// Fit biases on a random subset of this many inner-training instances.
    pub bias_subset: Option<usize>,
    /// Re-select alpha at every pruning step instead of keeping the one
    /// chosen on the full feature set.
    pub per_step_alpha: bool,
}

impl Default for DetachConfig {
    fn default() -> Self {
        Self {
            num_features: 10_000,
            c: 0.1,
            step_proportion: 0.05,
            val_fraction: 0.25,
            min_features: 10,
            seed: 0,
            alphas: default_alphas(),
            normalize: true,
            bias_subset: None,
            per_step_alpha: false,
        }
    }
}

impl DetachConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.num_features == 0 {
            return bad("num_features must be positive");
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad("c must be finite and non-negative");
        }
        if !(self.step_proportion > 0.0 && self.step_proportion < 1.0) {
            return bad("step_proportion must lie in (0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.min_features == 0 {
            return bad("min_features must be at least 1");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alphas must be a non-empty list of finite non-negative values");
        }
        if self.bias_subset == Some(0) {
            return bad("bias_subset must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningStep {
    pub retained_fraction: f64,
    /// Ascending feature ids.
    pub retained_ids: Vec<usize>,
    pub val_accuracy: f64,
    /// Regularization chosen by leave-one-out at this step.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningCurve {
    pub steps: Vec<PruningStep>,
    /// Validation accuracy with every feature (step 0).
    pub full_accuracy: f64,
    pub total_features: usize,
}

impl PruningCurve {
    /// Index of the step whose retained fraction is closest to `fraction`
    /// (the smaller model on ties).
    pub fn step_nearest(&self, fraction: f64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, s) in self.steps.iter().enumerate() {
            let d = (s.retained_fraction - fraction).abs();
            if best.map_or(true, |b| d <= (self.steps[b].retained_fraction - fraction).abs()) {
                best = Some(k);
            }
        }
        best
    }
}

fn accuracy(pred: impl Iterator<Item = u8>, truth: &[u8]) -> f64 {
    let hits = pred.zip(truth).filter(|(p, t)| p == *t).count();
    hits as f64 / truth.len() as f64
}

/// Prunes features from the full set down to at most `min_features`,
/// refitting the classifier at every step. The regularization is chosen by
/// leave-one-out over `alphas` on the full feature set and then held fixed.
/// Each step removes `ceil(step_proportion * count)` features, never going
/// below `min_features`; ties in |coefficient| drop the lower id first.
pub fn sfd(
    train_features: &FeatureMatrix,
    train_labels: &[u8],
    val_features: &FeatureMatrix,
    val_labels: &[u8],
    step_proportion: f64,
    min_features: usize,
    alphas: &[f64],
) -> Result<PruningCurve> {
    sfd_with_options(
        train_features,
        train_labels,
        val_features,
        val_labels,
        step_proportion,
        min_features,
        alphas,
        false,
    )
}

/// [`sfd`], optionally re-selecting alpha by leave-one-out at every step.
#[allow(clippy::too_many_arguments)]
pub fn sfd_with_options(
    train_features: &FeatureMatrix,
    train_labels: &[u8],
    val_features: &FeatureMatrix,
    val_labels: &[u8],
    step_proportion: f64,
    min_features: usize,
    alphas: &[f64],
    per_step_alpha: bool,
) -> Result<PruningCurve> {
    if !(step_proportion > 0.0 && step_proportion < 1.0) {
        return Err(Error::InvalidArgument("step_proportion must lie in (0, 1)".into()));
    }
    if min_features == 0 {
        return Err(Error::InvalidArgument("min_features must be at least 1".into()));
    }
    if train_features.n_instances() != train_labels.len()
        || val_features.n_instances() != val_labels.len()
    {
        return Err(Error::Shape("feature rows and labels differ in length".into()));
    }
    if val_labels.is_empty() {
        return Err(Error::InvalidData("validation set is empty".into()));
    }
    if train_features.feature_ids() != val_features.feature_ids() {
        return Err(Error::Shape("train and validation feature columns differ".into()));
    }
    if !(train_labels.contains(&0) && train_labels.contains(&1)) {
        return Err(Error::InvalidData("training labels contain a single class".into()));
    }
    if train_features.n_features() == 0 {
        return Err(Error::InvalidData("feature matrix has no columns".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }

    let ids = train_features.feature_ids();
    let total = ids.len();
    let n = train_features.n_instances();
    let all: Vec<usize> = (0..total).collect();
    let standardizer = Standardizer::fit(train_features);
    let x = standardizer.apply(train_features, &all);
    let xv = standardizer.apply(val_features, &all);
    let y = ridge::targets(train_labels);

    // Column positions still in play, ascending.
    let mut active = all;
    let mut gram: Option<Mat<f64>> = None;
    let mut gram_base = 0;
    let mut steps = Vec::new();
    let mut grid = alphas.to_vec();
    loop {
        let p = active.len();
        let sub = columns(&x, &active);
        if p > n {
            if gram.is_none() || 2 * p < gram_base {
                gram = Some(ridge::gram_rows(sub.as_ref()));
                gram_base = p;
            }
        } else {
            gram = None;
        }
        let sol = ridge::solve_path(sub.as_ref(), &y, &grid, gram.as_ref().map(|g| g.as_ref()))?;
        let alpha = grid[sol.alpha_index];
        if !per_step_alpha {
            grid = vec![alpha];
        }
        let scores = (0..xv.nrows()).map(|i| {
            let mut s = sol.intercept;
            for (k, &j) in active.iter().enumerate() {
                s += sol.coefficients[k] * xv.read(i, j);
            }
            s
        });
        let val_accuracy = accuracy(scores.map(|s| u8::from(s >= 0.0)), val_labels);
        let mut retained_ids: Vec<usize> = active.iter().map(|&j| ids[j]).collect();
        retained_ids.sort_unstable();
        steps.push(PruningStep {
            retained_fraction: p as f64 / total as f64,
            retained_ids,
            val_accuracy,
            alpha,
        });
        if p <= min_features {
            break;
        }

        let remove = ((step_proportion * p as f64).ceil() as usize).clamp(1, p - min_features);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            sol.coefficients[a]
                .abs()
                .total_cmp(&sol.coefficients[b].abs())
                .then(ids[active[a]].cmp(&ids[active[b]]))
        });
        let mut dropped: Vec<usize> = order[..remove].to_vec();
        dropped.sort_unstable();
        if let Some(g) = gram.as_mut() {
            let removed_cols: Vec<usize> = dropped.iter().map(|&k| active[k]).collect();
            let r = columns(&x, &removed_cols);
            matmul(g.as_mut(), r.as_ref(), r.transpose(), Some(1.0), -1.0, Parallelism::None);
        }
        let mut keep = vec![true; p];
        for k in dropped {
            keep[k] = false;
        }
        active = active
            .iter()
            .zip(&keep)
            .filter_map(|(&j, &k)| k.then_some(j))
            .collect();
    }
    let full_accuracy = steps[0].val_accuracy;
    Ok(PruningCurve {
        steps,
        full_accuracy,
        total_features: total,
    })
}

fn columns(x: &Mat<f64>, cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(x.nrows(), cols.len(), |i, k| x.read(i, cols[k]))
}

/// `val_accuracy / full_accuracy + c * (1 - retained_fraction)`. Raw accuracy
/// is used when the full model scores zero.
pub fn objective(curve: &PruningCurve, step: usize, c: f64) -> f64 {
    let s = &curve.steps[step];
    let rel = if curve.full_accuracy > 0.0 {
        s.val_accuracy / curve.full_accuracy
    } else {
        s.val_accuracy
    };
    rel + c * (1.0 - s.retained_fraction)
}

/// Index of the step maximizing [`objective`]; equal objectives go to the
/// smaller model.
pub fn select_optimal_step(curve: &PruningCurve, c: f64) -> Result<usize> {
    if curve.steps.is_empty() {
        return Err(Error::InvalidArgument("pruning curve is empty".into()));
    }
    let mut best = 0;
    let mut best_obj = objective(curve, 0, c);
    for k in 1..curve.steps.len() {
        let obj = objective(curve, k, c);
        let smaller = curve.steps[k].retained_fraction < curve.steps[best].retained_fraction;
        if obj > best_obj || (obj == best_obj && smaller) {
            best = k;
            best_obj = obj;
        }
    }
    Ok(best)
}

pub fn select_optimal(curve: &PruningCurve, c: f64) -> Result<Vec<usize>> {
    Ok(curve.steps[select_optimal_step(curve, c)?].retained_ids.clone())
}

/// A kernel bank restricted to its surviving features plus the ridge
/// classifier refit on them.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachModel {
    pub bank: KernelBank,
    /// Ascending; equal to `classifier.feature_ids`.
    pub retained_ids: Vec<usize>,
    pub classifier: RidgeModel,
    /// Inner-validation accuracy of the selected pruning step.
    pub val_accuracy: f64,
    pub c: f64,
    pub norm: Option<NormStats>,
    pub config: DetachConfig,
}

/// Seed for the inner train/validation split, decorrelated from the bank seed.
fn split_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fit_detach(train: &Dataset, config: &DetachConfig) -> Result<DetachModel> {
    Ok(fit_detach_with_curve(train, config)?.0)
}

/// [`fit_detach`] that also returns the pruning curve it selected from.
pub fn fit_detach_with_curve(
    train: &Dataset,
    config: &DetachConfig,
) -> Result<(DetachModel, PruningCurve)> {
    config.validate()?;
    if !train.has_both_classes() {
        return Err(Error::InvalidData("training set contains a single class".into()));
    }
    let (data, norm) = if config.normalize {
        let (d, s) = znormalize(train, None)?;
        (d, Some(s))
    } else {
        (train.clone(), None)
    };
    let spec = SplitSpec::stratified(config.val_fraction, split_seed(config.seed));
    let (inner_idx, val_idx) = split_indices(&data, &spec)?;
    let inner = data.select(&inner_idx);
    let val = data.select(&val_idx);
    if !inner.has_both_classes() {
        return Err(Error::InvalidData(
            "inner training split contains a single class".into(),
        ));
    }

    let bank_config = BankConfig {
        num_features: config.num_features,
        seed: config.seed,
        ..BankConfig::default()
    };
    let bank = KernelBank::build(&bank_config, data.n_channels(), data.n_timesteps())?;
    let (bank, inner_x) = match config.bias_subset {
        Some(m) if m < inner.n_instances() => {
            let opts = BiasOptions {
                subset: Some(m),
                seed: config.seed,
            };
            let fitted = transform::fit_biases(&bank, &inner, &opts)?;
            let x = transform::transform(&fitted, &inner)?;
            (fitted, x)
        }
        _ => transform::fit_biases_with_features(&bank, &inner)?,
    };
    let val_x = transform::transform(&bank, &val)?;

    let curve = sfd_with_options(
        &inner_x,
        inner.labels(),
        &val_x,
        val.labels(),
        config.step_proportion,
        config.min_features,
        &config.alphas,
        config.per_step_alpha,
    )?;
    let chosen = select_optimal_step(&curve, config.c)?;
    let retained_ids = curve.steps[chosen].retained_ids.clone();

    let mut rows = inner_x.select_features(&retained_ids)?.values().to_vec();
    rows.extend_from_slice(val_x.select_features(&retained_ids)?.values());
    let full_x = FeatureMatrix::new(data.n_instances(), retained_ids.clone(), rows)?;
    let mut labels = inner.labels().to_vec();
    labels.extend_from_slice(val.labels());
    let classifier = ridge::fit_ridge(&full_x, &labels, &config.alphas)?;

    let keep: BTreeSet<usize> = retained_ids.iter().copied().collect();
    let model = DetachModel {
        bank: bank.restrict(&keep),
        retained_ids,
        classifier,
        val_accuracy: curve.steps[chosen].val_accuracy,
        c: config.c,
        norm,
        config: config.clone(),
    };
    Ok((model, curve))
}

#[derive(Serialize, Deserialize)]
struct DetachManifest {
    format: String,
    version: u32,
    config: DetachConfig,
    retained_ids: Vec<usize>,
    total_features: usize,
    val_accuracy: f64,
    c: f64,
    alpha: f64,
    class_labels: [u8; 2],
    norm: Option<NormStats>,
}

const MODEL_FORMAT: &str = "dre-detach-model";

impl DetachModel {
    pub fn n_channels(&self) -> usize {
        self.bank.n_channels()
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_ids.len() as f64 / self.bank.total_features() as f64
    }

    /// Features of `dataset` for the retained columns, after the stored
    /// normalization.
    pub fn features(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        if dataset.n_channels() != self.n_channels() {
            return Err(Error::Shape(format!(
                "model expects {} channels, dataset has {}",
                self.n_channels(),
                dataset.n_channels()
            )));
        }
        match &self.norm {
            Some(stats) => transform::transform(&self.bank, &znormalize(dataset, Some(stats))?.0),
            None => transform::transform(&self.bank, dataset),
        }
    }

    pub fn decision_function(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.classifier.decision_function(&self.features(dataset)?)
    }

    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<u8>> {
        self.classifier.predict(&self.features(dataset)?)
    }

    /// Writes the bank, `model.json` and `classifier.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.bank.save(dir)?;
        let manifest = DetachManifest {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            retained_ids: self.retained_ids.clone(),
            total_features: self.bank.total_features(),
            val_accuracy: self.val_accuracy,
            c: self.c,
            alpha: self.classifier.alpha,
            class_labels: self.classifier.class_labels,
            norm: self.norm.clone(),
        };
        write_json(&dir.join("model.json"), &manifest)?;
        write_f64_block(&dir.join("classifier.bin"), &self.classifier.to_block())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let m: DetachManifest = read_json(&path)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_FORMAT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported model format {} v{}", m.format, m.version),
            ));
        }
        let bank = KernelBank::load(dir)?;
        if !bank.is_fitted() {
            return Err(Error::format(dir, "kernel bank is not fitted"));
        }
        let mut bank_ids = bank.feature_ids();
        bank_ids.sort_unstable();
        if bank_ids != m.retained_ids || bank.total_features() != m.total_features {
            return Err(Error::format(&path, "retained ids do not match the kernel bank"));
        }
        let p = m.retained_ids.len();
        let block = read_f64_block(&dir.join("classifier.bin"), 1 + 3 * p)?;
        let classifier =
            RidgeModel::from_block(&block, m.alpha, m.retained_ids.clone(), m.class_labels)?;
        if let Some(norm) = &m.norm {
            if norm.mean.len() != bank.n_channels() || norm.std.len() != bank.n_channels() {
                return Err(Error::format(&path, "normalization stats do not match channels"));
            }
        }
        Ok(Self {
            bank,
            retained_ids: m.retained_ids,
            classifier,
            val_accuracy: m.val_accuracy,
            c: m.c,
            norm: m.norm,
            config: m.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise_problem(n: usize, p: usize, seed: u64) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * p);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
            labels.push(u8::from(row[0] > 0.5));
            values.extend(row);
        }
        (FeatureMatrix::new(n, (0..p).collect(), values).unwrap(), labels)
    }

    fn curve_with(points: &[(f64, f64)]) -> PruningCurve {
        PruningCurve {
            steps: points
                .iter()
                .enumerate()
                .map(|(k, &(f, a))| PruningStep {
                    retained_fraction: f,
                    retained_ids: (0..(points.len() - k)).collect(),
                    val_accuracy: a,
                    alpha: 1.0,
                })
                .collect(),
            full_accuracy: points[0].1,
            total_features: points.len(),
        }
    }

    #[test]
    fn schedule_removes_ceiling_of_proportion() {
        let (x, y) = noise_problem(40, 10, 1);
        let curve = sfd(&x, &y, &x, &y, 0.5, 1, &default_alphas()).unwrap();
        let counts: Vec<usize> = curve.steps.iter().map(|s| s.retained_ids.len()).collect();
        assert_eq!(counts, vec![10, 5, 2, 1]);
    }

    #[test]
    fn floor_is_not_undershot() {
        let (x, y) = noise_problem(40, 30, 2);
        let curve = sfd(&x, &y, &x, &y, 0.4, 7, &default_alphas()).unwrap();
        let counts: Vec<usize> = curve.steps.iter().map(|s| s.retained_ids.len()).collect();
        assert_eq!(counts, vec![30, 18, 10, 7]);
    }

    #[test]
    fn curve_is_nested_and_decreasing() {
        let (x, y) = noise_problem(30, 60, 3);
        let curve = sfd(&x, &y, &x, &y, 0.1, 3, &default_alphas()).unwrap();
        for w in curve.steps.windows(2) {
            assert!(w[1].retained_fraction < w[0].retained_fraction);
            let a: BTreeSet<_> = w[0].retained_ids.iter().collect();
            assert!(w[1].retained_ids.iter().all(|i| a.contains(i)));
        }
        assert_eq!(curve.steps[0].retained_fraction, 1.0);
        assert_eq!(curve.full_accuracy, curve.steps[0].val_accuracy);
    }

    #[test]
    fn informative_feature_survives() {
        let (x, y) = noise_problem(80, 40, 4);
        let (xv, yv) = noise_problem(40, 40, 5);
        let curve = sfd(&x, &y, &xv, &yv, 0.2, 1, &default_alphas()).unwrap();
        assert_eq!(curve.steps.last().unwrap().retained_ids, vec![0]);
        assert!(curve.steps.last().unwrap().val_accuracy > 0.9);
    }

    #[test]
    fn steps_match_fresh_fits() {
        // More features than rows exercises the Gram downdate path.
        let (x, y) = noise_problem(12, 50, 6);
        let a = default_alphas();
        let per_step = sfd_with_options(&x, &y, &x, &y, 0.3, 5, &a, true).unwrap();
        for s in &per_step.steps {
            let sub = x.select_features(&s.retained_ids).unwrap();
            let m = ridge::fit_ridge(&sub, &y, &a).unwrap();
            assert_eq!(m.alpha, s.alpha);
            let acc = accuracy(m.predict(&sub).unwrap().into_iter(), &y);
            assert!((acc - s.val_accuracy).abs() < 1e-12);
        }
        let fixed = sfd(&x, &y, &x, &y, 0.3, 5, &a).unwrap();
        let alpha = fixed.steps[0].alpha;
        assert_eq!(alpha, per_step.steps[0].alpha);
        for s in &fixed.steps {
            assert_eq!(s.alpha, alpha);
            let sub = x.select_features(&s.retained_ids).unwrap();
            let m = ridge::fit_ridge(&sub, &y, &[alpha]).unwrap();
            let acc = accuracy(m.predict(&sub).unwrap().into_iter(), &y);
            assert!((acc - s.val_accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn sfd_rejects_bad_inputs() {
        let (x, y) = noise_problem(10, 5, 7);
        let a = default_alphas();
        assert!(sfd(&x, &y, &x, &y, 0.0, 1, &a).is_err());
        assert!(sfd(&x, &y, &x, &y, 1.0, 1, &a).is_err());
        assert!(sfd(&x, &y, &x, &y, 0.5, 0, &a).is_err());
        assert!(sfd(&x, &[1; 10], &x, &y, 0.5, 1, &a).is_err());
        let empty = x.select_rows(&[]);
        assert!(sfd(&x, &y, &empty, &[], 0.5, 1, &a).is_err());
        let fewer = x.select_features(&[0, 1]).unwrap();
        assert!(sfd(&x, &y, &fewer, &y, 0.5, 1, &a).is_err());
    }

    #[test]
    fn zero_tradeoff_picks_accuracy_maximum() {
        let curve = curve_with(&[(1.0, 0.8), (0.5, 0.82), (0.25, 0.9), (0.1, 0.85)]);
        assert_eq!(select_optimal_step(&curve, 0.0).unwrap(), 2);
    }

    #[test]
    fn ties_go_to_smaller_model() {
        let curve = curve_with(&[(1.0, 0.8), (0.5, 0.8), (0.25, 0.8)]);
        assert_eq!(select_optimal_step(&curve, 0.0).unwrap(), 2);
        assert_eq!(select_optimal(&curve, 0.0).unwrap(), vec![0]);
    }

    #[test]
    fn tradeoff_prefers_small_models() {
        let curve = curve_with(&[(1.0, 0.80), (0.5, 0.79), (0.05, 0.78)]);
        assert_eq!(select_optimal_step(&curve, 0.0).unwrap(), 0);
        assert_eq!(select_optimal_step(&curve, 0.1).unwrap(), 2);
        let k = select_optimal_step(&curve, 0.1).unwrap();
        for j in 0..3 {
            assert!(objective(&curve, k, 0.1) >= objective(&curve, j, 0.1));
        }
    }

    #[test]
    fn zero_full_accuracy_uses_raw_accuracy() {
        let curve = curve_with(&[(1.0, 0.0), (0.5, 0.2)]);
        assert_eq!(objective(&curve, 1, 0.0), 0.2);
        assert!(select_optimal_step(&PruningCurve { steps: vec![], ..curve }, 0.1).is_err());
    }

    #[test]
    fn nearest_step() {
        let curve = curve_with(&[(1.0, 0.8), (0.2, 0.8), (0.09, 0.8), (0.05, 0.8)]);
        assert_eq!(curve.step_nearest(0.1), Some(2));
        assert_eq!(curve.step_nearest(0.065), Some(3));
    }

    #[test]
    fn split_seed_differs_from_input() {
        assert_ne!(split_seed(0), 0);
        assert_ne!(split_seed(1), split_seed(2));
    }

    #[test]
    fn config_validation() {
        assert!(DetachConfig::default().validate().is_ok());
        for bad in [
            DetachConfig { num_features: 0, ..Default::default() },
            DetachConfig { c: -0.1, ..Default::default() },
            DetachConfig { step_proportion: 1.0, ..Default::default() },
            DetachConfig { val_fraction: 0.0, ..Default::default() },
            DetachConfig { min_features: 0, ..Default::default() },
            DetachConfig { alphas: vec![], ..Default::default() },
            DetachConfig { bias_subset: Some(0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
