//! Performance-weighted ensemble of pruned models.
//!
//! Members are trained independently with consecutive seeds. Each votes a
//! hard label; the probability of a class is the total weight of the members
//! voting for it. Channel relevance spreads each retained coefficient's
//! magnitude over the channels its kernel reads, then takes the per-channel
//! median across members.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::detach::{fit_detach, DetachConfig, DetachModel};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};

/// Floor on a member's weight before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const ENSEMBLE_FORMAT: &str = "dre-ensemble";
pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_estimators: usize,
    /// Settings shared by every member; member `i` uses `detach.seed + i`.
    pub detach: DetachConfig,
    pub threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_estimators: 25,
            detach: DetachConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::InvalidArgument("n_estimators must be at least 1".into()));
        }
        check_threshold(self.threshold)?;
        self.detach.validate()
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<DetachModel>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
    pub n_channels: usize,
    pub threshold: f64,
    pub config: EnsembleConfig,
    pub channel_names: Option<Vec<String>>,
}

/// Normalized per-channel importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRelevance {
    pub values: Vec<f64>,
}

impl ChannelRelevance {
    /// Scales `raw` to sum to one; an all-zero vector becomes uniform.
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        let values = if total > 0.0 && total.is_finite() {
            raw.into_iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        Self { values }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// `max(acc - 0.5, floor)` per member, normalized.
pub fn member_weights(val_accuracies: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = val_accuracies
        .iter()
        .map(|a| (a - 0.5).max(WEIGHT_FLOOR))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn fit_ensemble(train: &Dataset, config: &EnsembleConfig) -> Result<EnsembleModel> {
    config.validate()?;
    if !train.has_both_classes() {
        return Err(Error::InvalidData("training set contains a single class".into()));
    }
    let members = (0..config.n_estimators)
        .into_par_iter()
        .map(|i| {
            let member_config = DetachConfig {
                seed: config.detach.seed.wrapping_add(i as u64),
                ..config.detach.clone()
            };
            fit_detach(train, &member_config)
        })
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = members.iter().map(|m| m.val_accuracy).collect();
    Ok(EnsembleModel {
        weights: member_weights(&accs),
        members,
        n_channels: train.n_channels(),
        threshold: config.threshold,
        config: config.clone(),
        channel_names: train.channel_names().map(|n| n.to_vec()),
    })
}

/// Row `i` is `[P(class 0), P(class 1)]` given member votes and weights.
pub fn vote_proba(votes: &[Vec<u8>], weights: &[f64]) -> Vec<[f64; 2]> {
    let n = votes.first().map_or(0, |v| v.len());
    (0..n)
        .map(|i| {
            let mut mass = [0.0; 2];
            for (v, w) in votes.iter().zip(weights) {
                mass[usize::from(v[i] == 1)] += w;
            }
            let total = mass[0] + mass[1];
            if mass[0] == 0.0 {
                [0.0, 1.0]
            } else if mass[1] == 0.0 {
                [1.0, 0.0]
            } else {
                let p1 = mass[1] / total;
                [1.0 - p1, p1]
            }
        })
        .collect()
}

/// Class 1 whenever `P(class 1) >= threshold`.
pub fn labels_from_proba(proba: &[[f64; 2]], threshold: f64) -> Vec<u8> {
    proba.iter().map(|p| u8::from(p[1] >= threshold)).collect()
}

impl EnsembleModel {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    fn check_input(&self, dataset: &Dataset) -> Result<()> {
        if dataset.n_channels() != self.n_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, dataset has {}",
                self.n_channels,
                dataset.n_channels()
            )));
        }
        Ok(())
    }

    /// Hard labels of every member, in member order.
    pub fn member_votes(&self, dataset: &Dataset) -> Result<Vec<Vec<u8>>> {
        self.check_input(dataset)?;
        self.members.par_iter().map(|m| m.predict(dataset)).collect()
    }

    pub fn predict_proba(&self, dataset: &Dataset) -> Result<Vec<[f64; 2]>> {
        Ok(vote_proba(&self.member_votes(dataset)?, &self.weights))
    }

    pub fn predict_label(&self, dataset: &Dataset, threshold: f64) -> Result<Vec<u8>> {
        check_threshold(threshold)?;
        Ok(labels_from_proba(&self.predict_proba(dataset)?, threshold))
    }

    /// Labels at the model's stored threshold.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<u8>> {
        self.predict_label(dataset, self.threshold)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channel_names
            .clone()
            .unwrap_or_else(|| crate::data::default_channel_names(self.n_channels))
    }

    /// Writes `manifest.json` and one `member_XXX/` directory per member.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = EnsembleManifest {
            format: ENSEMBLE_FORMAT.into(),
            version: ENSEMBLE_FORMAT_VERSION,
            n_estimators: self.members.len(),
            weights: self.weights.clone(),
            n_channels: self.n_channels,
            threshold: self.threshold,
            channel_names: self.channel_names.clone(),
            config: self.config.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        for (i, m) in self.members.iter().enumerate() {
            m.save(&dir.join(member_dir(i)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let m: EnsembleManifest = read_json(&path)?;
        if m.format != ENSEMBLE_FORMAT || m.version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported ensemble format {} v{}", m.format, m.version),
            ));
        }
        if m.n_estimators == 0 || m.weights.len() != m.n_estimators {
            return Err(Error::format(&path, "weights do not match member count"));
        }
        let sum: f64 = m.weights.iter().sum();
        if m.weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::format(&path, "weights must be non-negative and sum to 1"));
        }
        check_threshold(m.threshold).map_err(|e| Error::format(&path, e.to_string()))?;
        let members = (0..m.n_estimators)
            .map(|i| DetachModel::load(&dir.join(member_dir(i))))
            .collect::<Result<Vec<_>>>()?;
        if members.iter().any(|mm| mm.n_channels() != m.n_channels) {
            return Err(Error::format(&path, "member channel count differs from manifest"));
        }
        Ok(Self {
            members,
            weights: m.weights,
            n_channels: m.n_channels,
            threshold: m.threshold,
            config: m.config,
            channel_names: m.channel_names,
        })
    }
}

fn member_dir(i: usize) -> String {
    format!("member_{i:03}")
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    version: u32,
    n_estimators: usize,
    weights: Vec<f64>,
    n_channels: usize,
    threshold: f64,
    channel_names: Option<Vec<String>>,
    config: EnsembleConfig,
}

/// Each retained feature adds `|coef| / |channels|` to every channel its
/// kernel reads; the totals are normalized.
pub fn member_channel_relevance(model: &DetachModel) -> ChannelRelevance {
    let coef: BTreeMap<usize, f64> = model
        .classifier
        .feature_ids
        .iter()
        .copied()
        .zip(model.classifier.coefficients.iter().copied())
        .collect();
    let mut raw = vec![0.0; model.n_channels()];
    for kernel in model.bank.kernels() {
        let share = 1.0 / kernel.channels.len() as f64;
        for f in &kernel.features {
            if let Some(c) = coef.get(&f.id) {
                for &ch in &kernel.channels {
                    raw[ch] += c.abs() * share;
                }
            }
        }
    }
    ChannelRelevance::from_raw(raw)
}

/// Per-channel median across member relevances, renormalized.
pub fn median_relevance(members: &[ChannelRelevance]) -> ChannelRelevance {
    let n_channels = members.first().map_or(0, |m| m.values.len());
    let raw = (0..n_channels)
        .map(|c| {
            let mut v: Vec<f64> = members.iter().map(|m| m.values[c]).collect();
            median(&mut v)
        })
        .collect();
    ChannelRelevance::from_raw(raw)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn ensemble_channel_relevance(model: &EnsembleModel) -> ChannelRelevance {
    let members: Vec<ChannelRelevance> = model.members.iter().map(member_channel_relevance).collect();
    median_relevance(&members)
}
