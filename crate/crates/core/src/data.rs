//! Labeled multivariate series tensors, their on-disk formats, splitting and
//! per-channel normalization.
//!
//! Two file formats are supported:
//!
//! * `dre-binary`: a JSON header `<name>.json` plus a raw little-endian payload
//!   `<name>.bin` laid out instance-major, channel-major within an instance.
//!   Values are written as `f32` when every value survives the round trip
//!   through `f32` exactly, otherwise as `f64` (recorded in the header's
//!   `dtype`), so a save/load cycle is always bit-exact.
//! * `csv-long`: one row per sample with columns
//!   `instance_id,channel,timestep,value,label[,subject_id]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest series length on which a length-9 kernel fits at dilation 1.
pub const MIN_TIMESTEPS: usize = 9;

/// Channels whose standard deviation falls below this are centered only.
pub const DEGENERATE_STD: f64 = 1e-12;

const ORDER: &str = "instance-major, channel-major within instance";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_instances: usize,
    n_channels: usize,
    n_timesteps: usize,
    labels: Vec<u8>,
    subject_ids: Option<Vec<i64>>,
    channel_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from a flat `[n_instances, n_channels, n_timesteps]`
    /// tensor. Labels must be binary (0/1).
    pub fn new(
        values: Vec<f64>,
        n_channels: usize,
        n_timesteps: usize,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let n_instances = labels.len();
        if n_channels == 0 {
            return Err(Error::InvalidData("dataset has no channels".into()));
        }
        if n_timesteps < MIN_TIMESTEPS {
            return Err(Error::InvalidData(format!(
                "series length {n_timesteps} is shorter than the minimum of {MIN_TIMESTEPS}"
            )));
        }
        if values.len() != n_instances * n_channels * n_timesteps {
            return Err(Error::Shape(format!(
                "{} values do not fill {} instances x {} channels x {} timesteps",
                values.len(),
                n_instances,
                n_channels,
                n_timesteps
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidData(format!(
                "label {bad} is not binary (expected 0 or 1)"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("values contain NaN or infinity".into()));
        }
        Ok(Self {
            values,
            n_instances,
            n_channels,
            n_timesteps,
            labels,
            subject_ids: None,
            channel_names: None,
        })
    }

    pub fn with_subject_ids(mut self, subject_ids: Vec<i64>) -> Result<Self> {
        if subject_ids.len() != self.n_instances {
            return Err(Error::Shape(format!(
                "{} subject ids for {} instances",
                subject_ids.len(),
                self.n_instances
            )));
        }
        self.subject_ids = Some(subject_ids);
        Ok(self)
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_channels {
            return Err(Error::Shape(format!(
                "{} channel names for {} channels",
                names.len(),
                self.n_channels
            )));
        }
        self.channel_names = Some(names);
        Ok(self)
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_timesteps(&self) -> usize {
        self.n_timesteps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subject_ids(&self) -> Option<&[i64]> {
        self.subject_ids.as_deref()
    }

    pub fn channel_names(&self) -> Option<&[String]> {
        self.channel_names.as_deref()
    }

    /// Channel names, falling back to `ch1`, `ch2`, ... when absent.
    pub fn channel_names_or_default(&self) -> Vec<String> {
        match &self.channel_names {
            Some(names) => names.clone(),
            None => default_channel_names(self.n_channels),
        }
    }

    /// All channels of one instance, channel-major.
    pub fn instance(&self, i: usize) -> &[f64] {
        let len = self.n_channels * self.n_timesteps;
        &self.values[i * len..(i + 1) * len]
    }

    pub fn series(&self, i: usize, channel: usize) -> &[f64] {
        let t = self.n_timesteps;
        let start = (i * self.n_channels + channel) * t;
        &self.values[start..start + t]
    }

    /// Number of instances per class, indexed by label.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn has_both_classes(&self) -> bool {
        let [a, b] = self.class_counts();
        a > 0 && b > 0
    }

    /// New dataset holding the given instances in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let len = self.n_channels * self.n_timesteps;
        let mut values = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            values.extend_from_slice(self.instance(i));
        }
        Dataset {
            values,
            n_instances: indices.len(),
            n_channels: self.n_channels,
            n_timesteps: self.n_timesteps,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: self
                .subject_ids
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            channel_names: self.channel_names.clone(),
        }
    }

    /// Same data with labels replaced.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.n_instances {
            return Err(Error::Shape(format!(
                "{} labels for {} instances",
                labels.len(),
                self.n_instances
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidData("labels must be 0 or 1".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Same data with channels reordered so that output channel `k` is input
    /// channel `order[k]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Dataset> {
        let mut seen = vec![false; self.n_channels];
        if order.len() != self.n_channels
            || order.iter().any(|&c| c >= self.n_channels || std::mem::replace(&mut seen[c], true))
        {
            return Err(Error::InvalidArgument(format!(
                "{order:?} is not a permutation of {} channels",
                self.n_channels
            )));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_instances {
            for &c in order {
                values.extend_from_slice(self.series(i, c));
            }
        }
        Ok(Dataset {
            values,
            channel_names: self
                .channel_names
                .as_ref()
                .map(|n| order.iter().map(|&c| n[c].clone()).collect()),
            ..self.clone()
        })
    }
}

pub(crate) fn default_channel_names(n: usize) -> Vec<String> {
    (1..=n).map(|c| format!("ch{c}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Binary,
    CsvLong,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dre-binary" | "binary" => Ok(Self::Binary),
            "csv-long" | "csv" => Ok(Self::CsvLong),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format {other:?} (expected dre-binary or csv-long)"
            ))),
        }
    }
}

impl DatasetFormat {
    /// `.csv` files are csv-long, anything else is dre-binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::CsvLong,
            _ => Self::Binary,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub version: u32,
    pub n_instances: usize,
    pub n_channels: usize,
    pub n_timesteps: usize,
    pub labels: Vec<i64>,
    pub subject_ids: Option<Vec<i64>>,
    pub channel_names: Option<Vec<String>>,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<serde_json::Value>,
}

/// Header and payload paths for a dre-binary dataset. `path` may name the
/// stem or either of the two files.
pub fn binary_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Binary => load_binary(path),
        DatasetFormat::CsvLong => load_csv_long(path),
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    save_dataset_with_origin(dataset, path, None)
}

/// Writes a dre-binary dataset, embedding `origin` (e.g. generator settings)
/// in the header.
pub fn save_dataset_with_origin(
    dataset: &Dataset,
    path: &Path,
    origin: Option<serde_json::Value>,
) -> Result<()> {
    let (json_path, bin_path) = binary_paths(path);
    let f32_exact = dataset
        .values
        .iter()
        .all(|&v| (v as f32) as f64 == v);
    let header = BinaryHeader {
        version: 1,
        n_instances: dataset.n_instances,
        n_channels: dataset.n_channels,
        n_timesteps: dataset.n_timesteps,
        labels: dataset.labels.iter().map(|&l| l as i64).collect(),
        subject_ids: dataset.subject_ids.clone(),
        channel_names: dataset.channel_names.clone(),
        dtype: if f32_exact { "f32" } else { "f64" }.into(),
        order: ORDER.into(),
        origin,
    };
    let mut payload = Vec::with_capacity(dataset.values.len() * if f32_exact { 4 } else { 8 });
    if f32_exact {
        for &v in &dataset.values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    } else {
        for &v in &dataset.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::io_util::write_json(&json_path, &header)?;
    fs::write(&bin_path, payload).map_err(|e| Error::io(&bin_path, e))
}

/// Reads only the header of a dre-binary dataset.
pub fn load_binary_header(path: &Path) -> Result<BinaryHeader> {
    let (json_path, _) = binary_paths(path);
    crate::io_util::read_json(&json_path)
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let (json_path, bin_path) = binary_paths(path);
    let header: BinaryHeader = crate::io_util::read_json(&json_path)?;
    if header.version != 1 {
        return Err(Error::format(
            &json_path,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.labels.len() != header.n_instances {
        return Err(Error::format(
            &json_path,
            format!(
                "{} labels for {} instances",
                header.labels.len(),
                header.n_instances
            ),
        ));
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::format(&json_path, format!("unsupported dtype {other:?}"))),
    };
    let payload = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let count = header.n_instances * header.n_channels * header.n_timesteps;
    if payload.len() != count * width {
        return Err(Error::format(
            &bin_path,
            format!(
                "header/payload size mismatch: header implies {} bytes, payload has {}",
                count * width,
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let labels = header
        .labels
        .iter()
        .map(|&l| match l {
            0 | 1 => Ok(l as u8),
            other => Err(Error::format(&json_path, format!("unknown label {other}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    let mut dataset = Dataset::new(values, header.n_channels, header.n_timesteps, labels)?;
    if let Some(s) = header.subject_ids {
        dataset = dataset.with_subject_ids(s)?;
    }
    if let Some(n) = header.channel_names {
        dataset = dataset.with_channel_names(n)?;
    }
    Ok(dataset)
}

struct CsvInstance {
    label: u8,
    subject: Option<i64>,
    // channel -> timestep -> value
    samples: BTreeMap<usize, BTreeMap<usize, f64>>,
}

fn load_csv_long(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        column(name).ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
    };
    let (c_inst, c_chan, c_time, c_val, c_label) = (
        required("instance_id")?,
        required("channel")?,
        required("timestep")?,
        required("value")?,
        required("label")?,
    );
    let c_subject = column("subject_id");

    let mut order: Vec<String> = Vec::new();
    let mut instances: BTreeMap<String, CsvInstance> = BTreeMap::new();
    let mut channel_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut channel_order: Vec<String> = Vec::new();
    let mut numeric_channels = true;

    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |what: &str, v: &str| Error::format(path, format!("line {line}: bad {what} {v:?}"));

        let inst = field(c_inst).to_string();
        let chan_raw = field(c_chan).to_string();
        let timestep: usize = field(c_time).parse().map_err(|_| bad("timestep", field(c_time)))?;
        let value: f64 = field(c_val).parse().map_err(|_| bad("value", field(c_val)))?;
        let label = match field(c_label) {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::format(
                    path,
                    format!("line {line}: unknown label {other:?} (expected 0 or 1)"),
                ))
            }
        };
        let subject = match c_subject.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<i64>().map_err(|_| bad("subject_id", s))?),
        };

        let chan = match channel_index.get(&chan_raw) {
            Some(&c) => c,
            None => {
                numeric_channels &= chan_raw.parse::<usize>().is_ok();
                let c = channel_order.len();
                channel_index.insert(chan_raw.clone(), c);
                channel_order.push(chan_raw.clone());
                c
            }
        };

        let entry = match instances.get_mut(&inst) {
            Some(e) => e,
            None => {
                order.push(inst.clone());
                instances.entry(inst.clone()).or_insert(CsvInstance {
                    label,
                    subject,
                    samples: BTreeMap::new(),
                })
            }
        };
        if entry.label != label {
            return Err(Error::InvalidData(format!(
                "instance {inst} has conflicting labels"
            )));
        }
        if entry.subject != subject {
            return Err(Error::InvalidData(format!(
                "instance {inst} has conflicting subject ids"
            )));
        }
        if entry
            .samples
            .entry(chan)
            .or_default()
            .insert(timestep, value)
            .is_some()
        {
            return Err(Error::InvalidData(format!(
                "instance {inst}, channel {chan_raw}, timestep {timestep} appears twice"
            )));
        }
    }

    if order.is_empty() {
        return Err(Error::InvalidData(format!("{} holds no samples", path.display())));
    }

    // Numeric channel labels are indices; sort them so file order does not matter.
    let n_channels = channel_order.len();
    let remap: Vec<usize> = if numeric_channels {
        let mut sorted: Vec<(usize, usize)> = channel_order
            .iter()
            .enumerate()
            .map(|(i, name)| (name.parse::<usize>().unwrap(), i))
            .collect();
        sorted.sort();
        let mut remap = vec![0; n_channels];
        for (rank, (_, i)) in sorted.into_iter().enumerate() {
            remap[i] = rank;
        }
        remap
    } else {
        (0..n_channels).collect()
    };

    let first = &instances[&order[0]];
    let n_timesteps = first.samples.values().next().map_or(0, |s| s.len());
    let mut values = vec![0.0; order.len() * n_channels * n_timesteps];
    let mut labels = Vec::with_capacity(order.len());
    let mut subjects = Vec::with_capacity(order.len());
    for (i, key) in order.iter().enumerate() {
        let inst = &instances[key];
        if inst.samples.len() != n_channels {
            return Err(Error::InvalidData(format!(
                "ragged channel count: instance {key} has {} channels, expected {n_channels}",
                inst.samples.len()
            )));
        }
        for (&chan, series) in &inst.samples {
            if series.len() != n_timesteps {
                return Err(Error::InvalidData(format!(
                    "ragged series length: instance {key} has {} timesteps, expected {n_timesteps}",
                    series.len()
                )));
            }
            for (expected, (&t, &v)) in series.iter().enumerate() {
                if t != expected {
                    return Err(Error::InvalidData(format!(
                        "instance {key} is missing timestep {expected}"
                    )));
                }
                values[(i * n_channels + remap[chan]) * n_timesteps + t] = v;
            }
        }
        labels.push(inst.label);
        subjects.push(inst.subject);
    }

    let mut dataset = Dataset::new(values, n_channels, n_timesteps, labels)?;
    if subjects.iter().all(Option::is_some) {
        dataset = dataset.with_subject_ids(subjects.into_iter().map(Option::unwrap).collect())?;
    } else if subjects.iter().any(Option::is_some) {
        return Err(Error::InvalidData(
            "subject_id present for some instances but not others".into(),
        ));
    }
    if !numeric_channels {
        dataset = dataset.with_channel_names(channel_order)?;
    }
    Ok(dataset)
}

pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let with_subjects = dataset.subject_ids.is_some();
    let mut header = vec!["instance_id", "channel", "timestep", "value", "label"];
    if with_subjects {
        header.push("subject_id");
    }
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    let names = dataset.channel_names.clone();
    for i in 0..dataset.n_instances {
        for c in 0..dataset.n_channels {
            let channel = match &names {
                Some(n) => n[c].clone(),
                None => c.to_string(),
            };
            for (t, v) in dataset.series(i, c).iter().enumerate() {
                let mut row = vec![
                    i.to_string(),
                    channel.clone(),
                    t.to_string(),
                    // `{}` on f64 prints the shortest representation that parses back exactly.
                    format!("{v}"),
                    dataset.labels[i].to_string(),
                ];
                if let Some(s) = &dataset.subject_ids {
                    row.push(s[i].to_string());
                }
                writer.write_record(&row).map_err(|e| csv_error(path, e))?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
    pub group_by_subject: bool,
}

impl SplitSpec {
    pub fn stratified(validation_fraction: f64, seed: u64) -> Self {
        Self {
            validation_fraction,
            seed,
            stratified: true,
            group_by_subject: false,
        }
    }
}

/// Partition of instance indices into (train, validation), each ascending.
pub fn split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {f} is outside (0, 1)"
        )));
    }
    let n = dataset.n_instances;
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "cannot split {n} instance(s) into two non-empty parts"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut validation = if spec.group_by_subject {
        let subjects = dataset.subject_ids.as_ref().ok_or_else(|| {
            Error::InvalidArgument("group_by_subject requested but dataset has no subject ids".into())
        })?;
        group_validation(subjects, &dataset.labels, spec, &mut rng)?
    } else if spec.stratified {
        let mut val = Vec::new();
        for class in 0..2u8 {
            let mut members: Vec<usize> =
                (0..n).filter(|&i| dataset.labels[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(Error::InvalidData(format!(
                    "stratified split needs at least 2 instances of class {class}, found {}",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let take = part_size(f, members.len());
            val.extend_from_slice(&members[..take]);
        }
        val
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(part_size(f, n));
        all
    };
    validation.sort_unstable();
    let in_val: BTreeSet<usize> = validation.iter().copied().collect();
    let train: Vec<usize> = (0..n).filter(|i| !in_val.contains(i)).collect();
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidData("split produced an empty part".into()));
    }
    Ok((train, validation))
}

/// Validation share of `n` items, at least one and leaving at least one.
fn part_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

fn group_validation(
    subjects: &[i64],
    labels: &[u8],
    spec: &SplitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &s) in subjects.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidData(
            "group_by_subject needs at least two subjects".into(),
        ));
    }
    let keys: Vec<i64> = groups.keys().copied().collect();
    let mut chosen: Vec<i64> = Vec::new();
    if spec.stratified {
        // Stratify subjects by their majority label.
        let mut buckets: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
        for &k in &keys {
            let ones = groups[&k].iter().filter(|&&i| labels[i] == 1).count();
            let majority = usize::from(2 * ones >= groups[&k].len());
            buckets[majority].push(k);
        }
        for bucket in buckets.iter_mut() {
            bucket.shuffle(rng);
            let take = (spec.validation_fraction * bucket.len() as f64).round() as usize;
            chosen.extend_from_slice(&bucket[..take.min(bucket.len())]);
        }
        if chosen.is_empty() {
            let mut all = keys.clone();
            all.shuffle(rng);
            chosen.push(all[0]);
        } else if chosen.len() == keys.len() {
            chosen.pop();
        }
    } else {
        let mut all = keys.clone();
        all.shuffle(rng);
        all.truncate(part_size(spec.validation_fraction, keys.len()));
        chosen = all;
    }
    Ok(chosen
        .iter()
        .flat_map(|k| groups[k].iter().copied())
        .collect())
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset, spec)?;
    Ok((dataset.select(&train), dataset.select(&val)))
}

/// Per-channel location and scale used by [`znormalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn compute(dataset: &Dataset) -> Self {
        let (c_count, t) = (dataset.n_channels, dataset.n_timesteps);
        let count = (dataset.n_instances * t) as f64;
        let mut mean = vec![0.0; c_count];
        let mut std = vec![0.0; c_count];
        for c in 0..c_count {
            let mut sum = 0.0;
            for i in 0..dataset.n_instances {
                sum += dataset.series(i, c).iter().sum::<f64>();
            }
            let m = sum / count;
            let mut ss = 0.0;
            for i in 0..dataset.n_instances {
                ss += dataset.series(i, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[c] = m;
            std[c] = (ss / count).sqrt();
        }
        Self { mean, std }
    }

    fn divisor(&self, c: usize) -> f64 {
        if self.std[c] < DEGENERATE_STD {
            1.0
        } else {
            self.std[c]
        }
    }
}

/// Per-channel z-normalization. Without `stats`, statistics are computed
/// from `dataset` itself; with them (test time) they are applied unchanged.
pub fn znormalize(dataset: &Dataset, stats: Option<&NormStats>) -> Result<(Dataset, NormStats)> {
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != dataset.n_channels || s.std.len() != dataset.n_channels {
                return Err(Error::Shape(format!(
                    "normalization stats cover {} channels, dataset has {}",
                    s.mean.len(),
                    dataset.n_channels
                )));
            }
            s.clone()
        }
        None => NormStats::compute(dataset),
    };
    let t = dataset.n_timesteps;
    let mut out = dataset.clone();
    for (k, chunk) in out.values.chunks_exact_mut(t).enumerate() {
        let c = k % dataset.n_channels;
        let (m, d) = (stats.mean[c], stats.divisor(c));
        for v in chunk {
            *v = (*v - m) / d;
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ramp(n: usize, c: usize, t: usize) -> Dataset {
        let values = (0..n * c * t).map(|v| v as f64 * 0.25).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        Dataset::new(values, c, t, labels).unwrap()
    }

    #[test]
    fn binary_round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let d = ramp(2, 1, 9);
        let path = dir.path().join("tiny");
        save_dataset(&d, &path).unwrap();
        let header = load_binary_header(&path).unwrap();
        assert_eq!((header.n_instances, header.n_channels, header.n_timesteps), (2, 1, 9));
        assert_eq!(header.dtype, "f32");
        assert_eq!(fs::metadata(dir.path().join("tiny.bin")).unwrap().len(), 18 * 4);
        let back = load_dataset(&path, DatasetFormat::Binary).unwrap();
        assert_eq!(back, d);
        assert!(back.subject_ids().is_none());
    }

    #[test]
    fn one_instance_round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let d = ramp(1, 2, 12)
            .with_subject_ids(vec![7])
            .unwrap()
            .with_channel_names(vec!["Fz".into(), "Cz".into()])
            .unwrap();
        let path = dir.path().join("one.json");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path, DatasetFormat::Binary).unwrap(), d);
    }

    #[test]
    fn non_f32_values_fall_back_to_f64_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values = (0..3 * 2 * 10).map(|_| rng.gen::<f64>()).collect();
        let d = Dataset::new(values, 2, 10, vec![0, 1, 0]).unwrap();
        let path = dir.path().join("wide");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_binary_header(&path).unwrap().dtype, "f64");
        assert_eq!(load_dataset(&path, DatasetFormat::Binary).unwrap(), d);
    }

    #[test]
    fn payload_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken");
        save_dataset(&ramp(2, 1, 9), &path).unwrap();
        fs::write(dir.path().join("broken.bin"), [0u8; 12]).unwrap();
        let err = load_dataset(&path, DatasetFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/data"), DatasetFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_ragged_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        let mut text = String::from("instance_id,channel,timestep,value,label\n");
        for t in 0..9 {
            text += &format!("0,0,{t},1.5,0\n");
        }
        for t in 0..8 {
            text += &format!("1,0,{t},1.5,1\n");
        }
        fs::write(&path, text).unwrap();
        let err = load_dataset(&path, DatasetFormat::CsvLong).unwrap_err();
        assert!(err.to_string().contains("ragged series length"), "{err}");
    }

    #[test]
    fn csv_unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut text = String::from("instance_id,channel,timestep,value,label\n");
        for t in 0..9 {
            text += &format!("0,0,{t},1.5,face\n");
        }
        fs::write(&path, text).unwrap();
        let err = load_dataset(&path, DatasetFormat::CsvLong).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
    }

    #[test]
    fn csv_round_trip_with_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("long.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = (0..4 * 3 * 11).map(|_| rng.gen::<f64>() - 0.5).collect();
        let d = Dataset::new(values, 3, 11, vec![0, 1, 1, 0])
            .unwrap()
            .with_subject_ids(vec![1, 1, 2, 2])
            .unwrap();
        save_dataset_csv(&d, &path).unwrap();
        assert_eq!(load_dataset(&path, DatasetFormat::CsvLong).unwrap(), d);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = ramp(10, 1, 9);
        let spec = SplitSpec {
            validation_fraction: 0.3,
            seed: 11,
            stratified: false,
            group_by_subject: false,
        };
        let (a, b) = split_indices(&d, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(split_indices(&d, &spec).unwrap(), (a, b));
    }

    #[test]
    fn stratified_split_keeps_ratio() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let d = ramp(10, 1, 9).with_labels(labels).unwrap();
        let (_, val) = split(&d, &SplitSpec::stratified(0.4, 5)).unwrap();
        assert_eq!(val.class_counts(), [2, 2]);
    }

    #[test]
    fn stratified_split_needs_two_per_class() {
        let d = ramp(3, 1, 9).with_labels(vec![0, 0, 1]).unwrap();
        assert!(split_indices(&d, &SplitSpec::stratified(0.5, 0)).is_err());
    }

    #[test]
    fn split_rejects_bad_fraction_and_missing_subjects() {
        let d = ramp(6, 1, 9);
        assert!(split_indices(&d, &SplitSpec::stratified(1.0, 0)).is_err());
        assert!(split_indices(&d, &SplitSpec::stratified(0.0, 0)).is_err());
        let spec = SplitSpec {
            validation_fraction: 0.3,
            seed: 0,
            stratified: false,
            group_by_subject: true,
        };
        assert!(matches!(
            split_indices(&d, &spec),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn group_split_moves_whole_subjects() {
        // Subjects A, B, C -> 1, 2, 3.
        let d = ramp(6, 1, 9).with_subject_ids(vec![1, 1, 2, 2, 3, 3]).unwrap();
        for seed in 0..20 {
            let spec = SplitSpec {
                validation_fraction: 0.34,
                seed,
                stratified: false,
                group_by_subject: true,
            };
            let (train, val) = split_indices(&d, &spec).unwrap();
            let s = d.subject_ids().unwrap();
            let train_subj: BTreeSet<i64> = train.iter().map(|&i| s[i]).collect();
            let val_subj: BTreeSet<i64> = val.iter().map(|&i| s[i]).collect();
            assert_eq!(val_subj.len(), 1);
            assert_eq!(val.len(), 2);
            assert!(train_subj.is_disjoint(&val_subj));
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let d = Dataset::new(vec![5.0; 2 * 9], 1, 9, vec![0, 1]).unwrap();
        let (z, stats) = znormalize(&d, None).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, vec![5.0]);
    }

    #[test]
    fn unit_channel_is_unchanged() {
        let values: Vec<f64> = (0..2 * 10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let d = Dataset::new(values.clone(), 1, 10, vec![0, 1]).unwrap();
        let (z, _) = znormalize(&d, None).unwrap();
        for (a, b) in z.values().iter().zip(&values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_moments_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = (0..5 * 3 * 40).map(|_| rng.gen::<f64>() * 7.0 + 3.0).collect();
        let d = Dataset::new(values, 3, 40, vec![0, 1, 0, 1, 1]).unwrap();
        let (z, _) = znormalize(&d, None).unwrap();
        let s = NormStats::compute(&z);
        for c in 0..3 {
            assert!(s.mean[c].abs() < 1e-9);
            assert!((s.std[c] - 1.0).abs() < 1e-9);
        }
        let (zz, _) = znormalize(&z, None).unwrap();
        for (a, b) in zz.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_channel_mismatch() {
        let d = ramp(2, 2, 9);
        let stats = NormStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(matches!(znormalize(&d, Some(&stats)), Err(Error::Shape(_))));
    }

    #[test]
    fn short_series_rejected() {
        assert!(Dataset::new(vec![0.0; 8], 1, 8, vec![0]).is_err());
    }
}
