//! MiniRocket-style random convolutional feature extraction.
//!
//! A [`KernelBank`] holds kernel instances. Each instance combines one of the
//! 84 fixed length-9 weight patterns (six taps at -1, three at +2), a
//! dilation, a padding mode and a subset of input channels; it produces one
//! feature map per input series and one PPV feature per fitted bias.
//!
//! The multichannel convolution applies the same weights to every channel of
//! the subset and sums, so it equals the convolution of the channel sum. The
//! fast path exploits that and the pattern structure:
//! `conv[t] = 3 * (x[t+a] + x[t+b] + x[t+c]) - sum_{j<9} x[t+j']`, sharing the
//! 9-tap box sum between all patterns with the same subset and dilation.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io_util::{read_f64_block, read_json, write_f64_block, write_json};

pub const KERNEL_LENGTH: usize = 9;
pub const NUM_PATTERNS: usize = 84;
/// Largest channel subset a kernel may mix.
pub const MAX_CHANNELS_PER_KERNEL: usize = 9;

const HALF: usize = KERNEL_LENGTH / 2;
/// Kernels per bias-fitting pass; bounds the buffer of retained feature maps.
const FIT_CHUNK: usize = 32;

/// Tap positions (0..9) carrying weight +2 in pattern `index`, in
/// lexicographic order over all 3-subsets of the nine taps.
pub fn pattern_positions(index: usize) -> [usize; 3] {
    assert!(index < NUM_PATTERNS, "pattern index {index} out of range");
    let mut k = 0;
    for a in 0..KERNEL_LENGTH {
        for b in a + 1..KERNEL_LENGTH {
            for c in b + 1..KERNEL_LENGTH {
                if k == index {
                    return [a, b, c];
                }
                k += 1;
            }
        }
    }
    unreachable!()
}

pub fn pattern_weights(index: usize) -> [f64; KERNEL_LENGTH] {
    let mut w = [-1.0; KERNEL_LENGTH];
    for p in pattern_positions(index) {
        w[p] = 2.0;
    }
    w
}

/// Base-2 van der Corput radical inverse, used to spread bias quantiles over (0, 1).
pub fn van_der_corput(mut index: u64) -> f64 {
    let mut q = 0.0;
    let mut scale = 0.5;
    while index > 0 {
        if index & 1 == 1 {
            q += scale;
        }
        index >>= 1;
        scale *= 0.5;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding; the feature map is as long as the series.
    Same,
    /// Only positions where every tap lies inside the series.
    Valid,
}

#[derive(Debug, Clone)]
pub struct Feature {
    pub id: usize,
    pub quantile: f64,
    /// NaN until the bank is fitted.
    pub bias: f64,
}

// Bitwise on the floats so unfitted (NaN-biased) banks compare equal.
impl PartialEq for Feature {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.quantile.to_bits() == other.quantile.to_bits()
            && self.bias.to_bits() == other.bias.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub pattern: usize,
    pub dilation: usize,
    pub padding: Padding,
    /// Sorted, distinct channel indices.
    pub channels: Vec<usize>,
    pub features: Vec<Feature>,
}

impl Kernel {
    /// First output position and number of positions for a series of length `t`.
    pub fn output_range(&self, t: usize) -> (usize, usize) {
        match self.padding {
            Padding::Same => (0, t),
            Padding::Valid => {
                let reach = HALF * self.dilation;
                (reach, t - 2 * reach)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub num_features: usize,
    pub seed: u64,
    /// Cap on the dilation grid per pattern.
    pub max_dilations_per_pattern: usize,
    /// Channel-subset size k is drawn with probability proportional to
    /// `base^(-k)`.
    pub subset_decay_base: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            num_features: 10_000,
            seed: 0,
            max_dilations_per_pattern: 32,
            subset_decay_base: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    seed: u64,
    n_channels: usize,
    n_timesteps: usize,
    total_features: usize,
    kernels: Vec<Kernel>,
    fitted: bool,
}

/// Builds an unfitted bank of `num_features` features with default settings.
pub fn build_kernel_bank(
    num_features: usize,
    n_channels: usize,
    n_timesteps: usize,
    seed: u64,
) -> Result<KernelBank> {
    let config = BankConfig {
        num_features,
        seed,
        ..BankConfig::default()
    };
    KernelBank::build(&config, n_channels, n_timesteps)
}

/// Dilations for one pattern and the number of features each receives.
fn dilation_allocation(budget: usize, l_max: f64, max_dilations: usize) -> Vec<(usize, usize)> {
    let n_grid = budget.min(max_dilations).max(1);
    let exponent = l_max.log2();
    let cap = l_max.floor() as usize;
    let mut allocation: Vec<(usize, usize)> = Vec::new();
    for i in 0..n_grid {
        let x = if n_grid == 1 {
            0.0
        } else {
            i as f64 / (n_grid - 1) as f64
        };
        let d = (2f64.powf(x * exponent).floor() as usize).clamp(1, cap);
        match allocation.last_mut() {
            Some((last, count)) if *last == d => *count += 1,
            _ => allocation.push((d, 1)),
        }
    }
    let multiplier = budget as f64 / n_grid as f64;
    for (_, count) in allocation.iter_mut() {
        *count = (*count as f64 * multiplier).floor() as usize;
    }
    let mut remainder = budget - allocation.iter().map(|a| a.1).sum::<usize>();
    let mut i = 0;
    while remainder > 0 {
        allocation[i].1 += 1;
        remainder -= 1;
        i = (i + 1) % allocation.len();
    }
    allocation.retain(|a| a.1 > 0);
    allocation
}

impl KernelBank {
    pub fn build(config: &BankConfig, n_channels: usize, n_timesteps: usize) -> Result<Self> {
        if config.num_features < NUM_PATTERNS {
            return Err(Error::InvalidArgument(format!(
                "num_features must be at least {NUM_PATTERNS}, got {}",
                config.num_features
            )));
        }
        if n_timesteps < KERNEL_LENGTH {
            return Err(Error::InvalidArgument(format!(
                "receptive field of {KERNEL_LENGTH} cannot fit in series of length {n_timesteps}"
            )));
        }
        if n_channels == 0 {
            return Err(Error::InvalidArgument("bank needs at least one channel".into()));
        }
        if config.max_dilations_per_pattern == 0 || !(config.subset_decay_base > 1.0) {
            return Err(Error::InvalidArgument(
                "max_dilations_per_pattern must be positive and subset_decay_base > 1".into(),
            ));
        }

        let l_max = (n_timesteps - 1) as f64 / (KERNEL_LENGTH - 1) as f64;
        let base = config.num_features / NUM_PATTERNS;
        let extra = config.num_features % NUM_PATTERNS;
        let mut entries: Vec<(usize, usize, usize)> = Vec::new();
        let mut cache: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for pattern in 0..NUM_PATTERNS {
            let budget = base + usize::from(pattern < extra);
            let alloc = cache.entry(budget).or_insert_with(|| {
                dilation_allocation(budget, l_max, config.max_dilations_per_pattern)
            });
            for &(dilation, count) in alloc.iter() {
                entries.push((dilation, pattern, count));
            }
        }
        entries.sort_unstable();

        let max_k = n_channels.min(MAX_CHANNELS_PER_KERNEL);
        let weights: Vec<f64> = (1..=max_k)
            .map(|k| config.subset_decay_base.powi(-(k as i32)))
            .collect();
        let size_dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Invariant(format!("subset size distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut next_id = 0;
        let kernels = entries
            .into_iter()
            .enumerate()
            .map(|(index, (dilation, pattern, count))| {
                let k = size_dist.sample(&mut rng) + 1;
                let mut channels = rand::seq::index::sample(&mut rng, n_channels, k).into_vec();
                channels.sort_unstable();
                let features = (next_id..next_id + count)
                    .map(|id| Feature {
                        id,
                        quantile: van_der_corput(id as u64 + 1),
                        bias: f64::NAN,
                    })
                    .collect();
                next_id += count;
                Kernel {
                    pattern,
                    dilation,
                    padding: if index % 2 == 0 {
                        Padding::Same
                    } else {
                        Padding::Valid
                    },
                    channels,
                    features,
                }
            })
            .collect();

        Ok(Self {
            seed: config.seed,
            n_channels,
            n_timesteps,
            total_features: next_id,
            kernels,
            fitted: false,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_timesteps(&self) -> usize {
        self.n_timesteps
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Features in the bank this one was built as (before any restriction).
    pub fn total_features(&self) -> usize {
        self.total_features
    }

    pub fn num_features(&self) -> usize {
        self.kernels.iter().map(|k| k.features.len()).sum()
    }

    /// One convolution per kernel instance per input series.
    pub fn num_convolutions(&self) -> usize {
        self.kernels.len()
    }

    /// Feature ids in column order of [`transform`] output.
    pub fn feature_ids(&self) -> Vec<usize> {
        self.kernels
            .iter()
            .flat_map(|k| k.features.iter().map(|f| f.id))
            .collect()
    }

    pub fn biases(&self) -> Vec<f64> {
        self.kernels
            .iter()
            .flat_map(|k| k.features.iter().map(|f| f.bias))
            .collect()
    }

    /// Kernel instance producing feature `id`.
    pub fn kernel_of(&self, id: usize) -> Option<&Kernel> {
        self.kernels
            .iter()
            .find(|k| k.features.iter().any(|f| f.id == id))
    }

    /// Copy keeping only the listed features and dropping kernels left with none.
    pub fn restrict(&self, keep: &BTreeSet<usize>) -> KernelBank {
        let kernels = self
            .kernels
            .iter()
            .filter_map(|k| {
                let features: Vec<Feature> = k
                    .features
                    .iter()
                    .filter(|f| keep.contains(&f.id))
                    .cloned()
                    .collect();
                (!features.is_empty()).then(|| Kernel {
                    features,
                    ..k.clone()
                })
            })
            .collect();
        KernelBank {
            kernels,
            ..self.clone()
        }
    }

    /// Same bank acting on relabeled inputs: channel `c` becomes `mapping[c]`.
    pub fn relabel_channels(&self, mapping: &[usize]) -> Result<KernelBank> {
        if mapping.len() != self.n_channels {
            return Err(Error::Shape(format!(
                "channel mapping has {} entries, bank has {} channels",
                mapping.len(),
                self.n_channels
            )));
        }
        let mut out = self.clone();
        for k in &mut out.kernels {
            for c in &mut k.channels {
                *c = mapping[*c];
            }
            k.channels.sort_unstable();
        }
        Ok(out)
    }

    fn check_input(&self, dataset: &Dataset) -> Result<()> {
        if dataset.n_channels() != self.n_channels {
            return Err(Error::Shape(format!(
                "bank expects {} channels, dataset has {}",
                self.n_channels,
                dataset.n_channels()
            )));
        }
        if dataset.n_timesteps() != self.n_timesteps {
            return Err(Error::Shape(format!(
                "bank expects series of length {}, dataset has {}",
                self.n_timesteps,
                dataset.n_timesteps()
            )));
        }
        Ok(())
    }
}

/// PPV feature values, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    feature_ids: Vec<usize>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, feature_ids: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * feature_ids.len() {
            return Err(Error::Shape(format!(
                "{} values for {} rows x {} features",
                values.len(),
                n_rows,
                feature_ids.len()
            )));
        }
        Ok(Self {
            n_rows,
            feature_ids,
            values,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.feature_ids.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.feature_ids.len() + j]
    }

    /// Column positions of `ids`, failing on any id not present.
    pub fn column_positions(&self, ids: &[usize]) -> Result<Vec<usize>> {
        let lookup: HashMap<usize, usize> = self
            .feature_ids
            .iter()
            .enumerate()
            .map(|(j, &id)| (id, j))
            .collect();
        ids.iter()
            .map(|id| {
                lookup
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Shape(format!("feature {id} missing from matrix")))
            })
            .collect()
    }

    pub fn select_features(&self, ids: &[usize]) -> Result<FeatureMatrix> {
        let cols = self.column_positions(ids)?;
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureMatrix::new(self.n_rows, ids.to_vec(), values)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_features());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            feature_ids: self.feature_ids.clone(),
            values,
        }
    }
}

/// Options for [`fit_biases`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasOptions {
    /// Fit on a seeded random subset of this many training instances instead
    /// of the whole set. `None` keeps the result independent of instance order.
    pub subset: Option<usize>,
    pub seed: u64,
}

/// Sets every feature's bias to the type-7 quantile, at the feature's
/// quantile level, of its kernel's convolution outputs over the training set.
pub fn fit_biases(bank: &KernelBank, train: &Dataset, options: &BiasOptions) -> Result<KernelBank> {
    match options.subset {
        Some(m) if m < train.n_instances() => {
            if m == 0 {
                return Err(Error::InvalidArgument("bias subset must be non-empty".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut idx = rand::seq::index::sample(&mut rng, train.n_instances(), m).into_vec();
            idx.sort_unstable();
            Ok(fit_biases_with_features(bank, &train.select(&idx))?.0)
        }
        _ => Ok(fit_biases_with_features(bank, train)?.0),
    }
}

/// Fits biases on `train` and returns its features, sharing one pass over
/// the feature maps. Equivalent to `fit_biases` followed by `transform`.
pub fn fit_biases_with_features(
    bank: &KernelBank,
    train: &Dataset,
) -> Result<(KernelBank, FeatureMatrix)> {
    if bank.fitted {
        return Err(Error::InvalidArgument("bank is already fitted".into()));
    }
    if train.n_instances() == 0 {
        return Err(Error::InvalidData("cannot fit biases on an empty training set".into()));
    }
    bank.check_input(train)?;

    let n = train.n_instances();
    let t_len = bank.n_timesteps;
    let plan = ConvPlan::new(bank);
    let mut fitted = bank.clone();
    let feature_ids = bank.feature_ids();
    let mut offsets = Vec::with_capacity(bank.kernels.len());
    let mut acc = 0;
    for k in &bank.kernels {
        offsets.push(acc);
        acc += k.features.len();
    }
    let p = acc;
    let mut features = vec![0.0; n * p];

    for chunk in chunk_ranges(&bank.kernels) {
        let kernels = &bank.kernels[chunk.clone()];
        let width = kernels.len() * t_len;
        let mut maps = vec![0.0; n * width];
        maps.par_chunks_mut(width)
            .enumerate()
            .for_each_init(Workspace::default, |ws, (i, out)| {
                ws.load(&plan, train.instance(i), t_len, chunk.clone());
                for (slot, kernel_index) in chunk.clone().enumerate() {
                    let kernel = &bank.kernels[kernel_index];
                    let (_, len) = kernel.output_range(t_len);
                    ws.convolve(&plan, kernel_index, kernel, &mut out[slot * t_len..slot * t_len + len]);
                }
            });

        let results: Vec<(Vec<f64>, Vec<f64>)> = kernels
            .par_iter()
            .enumerate()
            .map(|(slot, kernel)| {
                let (_, len) = kernel.output_range(t_len);
                let mut pooled = Vec::with_capacity(n * len);
                for i in 0..n {
                    let start = i * width + slot * t_len;
                    pooled.extend_from_slice(&maps[start..start + len]);
                }
                let qs: Vec<f64> = kernel.features.iter().map(|f| f.quantile).collect();
                let biases = quantiles_type7(&mut pooled, &qs);
                let mut ppv = Vec::with_capacity(n * biases.len());
                for i in 0..n {
                    let start = i * width + slot * t_len;
                    let map = &maps[start..start + len];
                    ppv.extend(biases.iter().map(|&b| positive_fraction(map, b)));
                }
                (biases, ppv)
            })
            .collect();

        for (slot, (biases, ppv)) in results.into_iter().enumerate() {
            let kernel_index = chunk.start + slot;
            let m = biases.len();
            for (f, b) in fitted.kernels[kernel_index].features.iter_mut().zip(&biases) {
                f.bias = *b;
            }
            let offset = offsets[kernel_index];
            for i in 0..n {
                features[i * p + offset..i * p + offset + m].copy_from_slice(&ppv[i * m..(i + 1) * m]);
            }
        }
    }
    fitted.fitted = true;
    Ok((fitted, FeatureMatrix::new(n, feature_ids, features)?))
}

/// PPV features for every instance and every feature in the bank.
pub fn transform(bank: &KernelBank, dataset: &Dataset) -> Result<FeatureMatrix> {
    if !bank.fitted {
        return Err(Error::NotFitted);
    }
    bank.check_input(dataset)?;
    let t_len = bank.n_timesteps;
    let p = bank.num_features();
    let plan = ConvPlan::new(bank);
    let all = 0..bank.kernels.len();
    let mut values = vec![0.0; dataset.n_instances() * p];
    if p > 0 {
        values
            .par_chunks_mut(p)
            .enumerate()
            .for_each_init(
                || (Workspace::default(), vec![0.0; t_len]),
                |(ws, map), (i, row)| {
                    ws.load(&plan, dataset.instance(i), t_len, all.clone());
                    let mut col = 0;
                    for (kernel_index, kernel) in bank.kernels.iter().enumerate() {
                        let (_, len) = kernel.output_range(t_len);
                        ws.convolve(&plan, kernel_index, kernel, &mut map[..len]);
                        for f in &kernel.features {
                            row[col] = positive_fraction(&map[..len], f.bias);
                            col += 1;
                        }
                    }
                },
            );
    }
    FeatureMatrix::new(dataset.n_instances(), bank.feature_ids(), values)
}

/// Literal reference implementation of [`transform`]: for every instance,
/// feature and output position, evaluates the dilated multichannel dot
/// product tap by tap. Slow; meant for verification.
pub fn transform_oracle(bank: &KernelBank, dataset: &Dataset) -> Result<FeatureMatrix> {
    if !bank.fitted {
        return Err(Error::NotFitted);
    }
    bank.check_input(dataset)?;
    let t_len = bank.n_timesteps as isize;
    let mut values = Vec::with_capacity(dataset.n_instances() * bank.num_features());
    for i in 0..dataset.n_instances() {
        for kernel in &bank.kernels {
            let w = pattern_weights(kernel.pattern);
            let d = kernel.dilation as isize;
            let (start, len) = kernel.output_range(bank.n_timesteps);
            for f in &kernel.features {
                let mut positive = 0usize;
                for t in start..start + len {
                    let mut v = 0.0;
                    for &c in &kernel.channels {
                        let x = dataset.series(i, c);
                        for (j, wj) in w.iter().enumerate() {
                            let s = t as isize + (j as isize - HALF as isize) * d;
                            if s >= 0 && s < t_len {
                                v += wj * x[s as usize];
                            }
                        }
                    }
                    if v - f.bias > 0.0 {
                        positive += 1;
                    }
                }
                values.push(positive as f64 / len as f64);
            }
        }
    }
    FeatureMatrix::new(dataset.n_instances(), bank.feature_ids(), values)
}

fn positive_fraction(map: &[f64], bias: f64) -> f64 {
    map.iter().filter(|&&v| v > bias).count() as f64 / map.len() as f64
}

/// Kernel index ranges of at most `FIT_CHUNK` kernels sharing one dilation.
fn chunk_ranges(kernels: &[Kernel]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=kernels.len() {
        if i == kernels.len()
            || kernels[i].dilation != kernels[start].dilation
            || i - start == FIT_CHUNK
        {
            ranges.push(start..i);
            start = i;
        }
    }
    ranges
}

/// Type-7 (linear interpolation between order statistics) quantiles of
/// `values`, which is reordered in the process. Levels are resolved from the
/// highest down so each selection only partitions the unresolved prefix.
pub(crate) fn quantiles_type7(values: &mut [f64], levels: &[f64]) -> Vec<f64> {
    let n = values.len();
    assert!(n > 0, "quantile of empty sample");
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[b].total_cmp(&levels[a]));
    let mut out = vec![0.0; levels.len()];
    // values[hi..] dominate values[..hi] and values[hi] sits at its sorted rank.
    let mut hi = n;
    let mut above_hi = f64::NAN;
    for idx in order {
        let h = (n - 1) as f64 * levels[idx].clamp(0.0, 1.0);
        let lo = (h.floor() as usize).min(n - 1);
        let frac = h - lo as f64;
        let (v_lo, v_next) = if lo < hi {
            values[..hi].select_nth_unstable_by(lo, |a, b| a.total_cmp(b));
            let v_lo = values[lo];
            let v_next = if lo + 1 >= n {
                v_lo
            } else if lo + 1 < hi {
                values[lo + 1..hi].iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                values[hi]
            };
            hi = lo;
            above_hi = v_next;
            (v_lo, v_next)
        } else {
            (values[hi], if lo + 1 < n { above_hi } else { values[hi] })
        };
        out[idx] = v_lo + frac * (v_next - v_lo);
    }
    out
}

/// Shared-subset bookkeeping for the fast convolution.
struct ConvPlan {
    subsets: Vec<Vec<usize>>,
    kernel_subset: Vec<usize>,
    pad: usize,
}

impl ConvPlan {
    fn new(bank: &KernelBank) -> Self {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut subsets = Vec::new();
        let kernel_subset = bank
            .kernels
            .iter()
            .map(|k| {
                *index.entry(k.channels.as_slice()).or_insert_with(|| {
                    subsets.push(k.channels.clone());
                    subsets.len() - 1
                })
            })
            .collect();
        let max_dilation = bank.kernels.iter().map(|k| k.dilation).max().unwrap_or(1);
        Self {
            subsets,
            kernel_subset,
            pad: HALF * max_dilation,
        }
    }
}

/// Per-instance scratch: zero-padded channel sums and cached box sums.
#[derive(Default)]
struct Workspace {
    sums: Vec<Vec<f64>>,
    loaded: Vec<bool>,
    boxes: Vec<Vec<f64>>,
    box_dilation: Vec<usize>,
    t_len: usize,
    pad: usize,
}

impl Workspace {
    fn load(&mut self, plan: &ConvPlan, instance: &[f64], t_len: usize, kernels: std::ops::Range<usize>) {
        let n_sub = plan.subsets.len();
        self.t_len = t_len;
        self.pad = plan.pad;
        self.sums.resize_with(n_sub, Vec::new);
        self.boxes.resize_with(n_sub, Vec::new);
        self.loaded.clear();
        self.loaded.resize(n_sub, false);
        self.box_dilation.clear();
        self.box_dilation.resize(n_sub, 0);
        let width = t_len + 2 * plan.pad;
        for k in kernels {
            let s = plan.kernel_subset[k];
            if self.loaded[s] {
                continue;
            }
            let buf = &mut self.sums[s];
            buf.clear();
            buf.resize(width, 0.0);
            for &c in &plan.subsets[s] {
                let x = &instance[c * t_len..(c + 1) * t_len];
                for (dst, &v) in buf[plan.pad..plan.pad + t_len].iter_mut().zip(x) {
                    *dst += v;
                }
            }
            self.loaded[s] = true;
        }
    }

    /// Writes the kernel's feature map (output positions only) into `out`.
    fn convolve(&mut self, plan: &ConvPlan, kernel_index: usize, kernel: &Kernel, out: &mut [f64]) {
        let s = plan.kernel_subset[kernel_index];
        let d = kernel.dilation;
        let x = &self.sums[s];
        let t_len = self.t_len;
        let pad = self.pad;
        if self.box_dilation[s] != d {
            let b = &mut self.boxes[s];
            b.clear();
            b.extend((0..t_len).map(|t| {
                let base = pad + t - HALF * d;
                let mut acc = 0.0;
                for j in 0..KERNEL_LENGTH {
                    acc += x[base + j * d];
                }
                acc
            }));
            self.box_dilation[s] = d;
        }
        let boxes = &self.boxes[s];
        let [a, b, c] = pattern_positions_cached(kernel.pattern);
        let (start, len) = kernel.output_range(t_len);
        debug_assert_eq!(out.len(), len);
        for (k, o) in out.iter_mut().enumerate() {
            let t = start + k;
            let base = pad + t - HALF * d;
            let tri = x[base + a * d] + x[base + b * d] + x[base + c * d];
            *o = 3.0 * tri - boxes[t];
        }
    }
}

fn pattern_positions_cached(index: usize) -> [usize; 3] {
    static TABLE: std::sync::OnceLock<Vec<[usize; 3]>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| (0..NUM_PATTERNS).map(pattern_positions).collect())[index]
}

#[derive(Serialize, Deserialize)]
struct KernelRecord {
    pattern: usize,
    dilation: usize,
    padding: Padding,
    channels: Vec<usize>,
    feature_ids: Vec<usize>,
    quantiles: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    version: u32,
    seed: u64,
    n_channels: usize,
    n_timesteps: usize,
    total_features: usize,
    fitted: bool,
    kernels: Vec<KernelRecord>,
}

impl KernelBank {
    /// Writes `bank.json` (structure) and `biases.bin` (little-endian f64,
    /// one per feature in column order) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = BankManifest {
            version: 1,
            seed: self.seed,
            n_channels: self.n_channels,
            n_timesteps: self.n_timesteps,
            total_features: self.total_features,
            fitted: self.fitted,
            kernels: self
                .kernels
                .iter()
                .map(|k| KernelRecord {
                    pattern: k.pattern,
                    dilation: k.dilation,
                    padding: k.padding,
                    channels: k.channels.clone(),
                    feature_ids: k.features.iter().map(|f| f.id).collect(),
                    quantiles: k.features.iter().map(|f| f.quantile).collect(),
                })
                .collect(),
        };
        write_json(&dir.join("bank.json"), &manifest)?;
        write_f64_block(&dir.join("biases.bin"), &self.biases())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("bank.json");
        let manifest: BankManifest = read_json(&path)?;
        if manifest.version != 1 {
            return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
        }
        let count: usize = manifest.kernels.iter().map(|k| k.feature_ids.len()).sum();
        let biases = read_f64_block(&dir.join("biases.bin"), count)?;
        let mut biases = biases.into_iter();
        let mut kernels = Vec::with_capacity(manifest.kernels.len());
        for r in manifest.kernels {
            if r.pattern >= NUM_PATTERNS
                || r.dilation == 0
                || (KERNEL_LENGTH - 1) * r.dilation + 1 > manifest.n_timesteps
                || r.channels.is_empty()
                || r.channels.iter().any(|&c| c >= manifest.n_channels)
                || r.feature_ids.len() != r.quantiles.len()
            {
                return Err(Error::format(&path, "inconsistent kernel record"));
            }
            let features = r
                .feature_ids
                .iter()
                .zip(&r.quantiles)
                .map(|(&id, &quantile)| Feature {
                    id,
                    quantile,
                    bias: biases.next().unwrap(),
                })
                .collect();
            kernels.push(Kernel {
                pattern: r.pattern,
                dilation: r.dilation,
                padding: r.padding,
                channels: r.channels,
                features,
            });
        }
        Ok(Self {
            seed: manifest.seed,
            n_channels: manifest.n_channels,
            n_timesteps: manifest.n_timesteps,
            total_features: manifest.total_features,
            kernels,
            fitted: manifest.fitted,
        })
    }
}
