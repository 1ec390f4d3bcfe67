//! The `dre` command-line tool.
//!
//! Settings resolve as command-line flags over a JSON config file over
//! built-in defaults. Every report written embeds the resolved settings,
//! including the seed, which is generated and printed when not given.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{load_dataset, save_dataset_with_origin, Dataset, DatasetFormat};
use crate::detach::DetachConfig;
use crate::ensemble::{
    ensemble_channel_relevance, fit_ensemble, labels_from_proba, member_channel_relevance,
    ChannelRelevance, EnsembleConfig, EnsembleModel,
};
use crate::error::{Error, Result};
use crate::eval::{
    best_threshold, compute_metrics, loso_cv, roc, subject_labels, subject_majority_vote,
    LosoOptions,
};
use crate::io_util::write_json;
use crate::ridge::default_alphas;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "dre", version, about = "Pruned random-convolution ensembles for multivariate time series")]
pub struct Cli {
    /// Worker threads for members, transforms and folds (outputs do not depend on it).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    /// JSON file with settings; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the four-channel synthetic benchmark.
    Synth(SynthArgs),
    /// Train an ensemble and write the model directory.
    Train(TrainArgs),
    /// Write per-instance probabilities and labels.
    Predict(PredictArgs),
    /// Write per-member and ensemble channel relevance.
    Relevance(RelevanceArgs),
    /// Metrics, ROC and relevance of a trained model on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Leave-one-subject-out cross-validation.
    Loso(LosoArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset stem (writes `<stem>.json` and `<stem>.bin`).
    #[arg(long)]
    pub out: PathBuf,
    /// Degrees in [0, 90].
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_timesteps: Option<usize>,
    #[arg(long)]
    pub sigma_amp: Option<f64>,
    /// Distance between class means (default twice sigma-amp).
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub base_amp: Option<f64>,
    /// Three comma-separated cycle counts for channels 1 to 3.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub freqs: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Dataset path: a dre-binary stem or a long-format CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// `dre-binary` or `csv-long`; inferred from the extension by default.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub n_estimators: Option<usize>,
    #[arg(long)]
    pub num_features: Option<usize>,
    /// Trade-off between accuracy and retained size.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub step_proportion: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub min_features: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Fit biases on a random subset of this many instances.
    #[arg(long)]
    pub bias_subset: Option<usize>,
    /// Skip per-channel z-normalization.
    #[arg(long)]
    pub no_normalize: bool,
    /// Re-select the ridge penalty at every pruning step.
    #[arg(long)]
    pub per_step_alpha: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the threshold stored with the model.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RelevanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also report the accuracy-maximizing threshold.
    #[arg(long)]
    pub best_threshold: bool,
}

#[derive(Debug, Args)]
pub struct LosoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run folds concurrently.
    #[arg(long)]
    pub parallel_folds: bool,
}

/// Settings shared by all commands, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub n_estimators: usize,
    pub num_features: usize,
    pub c: f64,
    pub step_proportion: f64,
    pub val_fraction: f64,
    pub min_features: usize,
    pub threshold: f64,
    pub normalize: bool,
    pub bias_subset: Option<usize>,
    pub per_step_alpha: bool,
    pub alphas: Vec<f64>,
    pub parallel_folds: bool,
    pub synth: SynthSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub theta: f64,
    pub n_per_class: usize,
    pub n_timesteps: usize,
    pub sigma_amp: f64,
    pub separation: Option<f64>,
    pub base_amp: f64,
    pub freqs: [f64; 3],
    pub noise_sigma: f64,
    pub n_subjects: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            theta: d.theta,
            n_per_class: d.n_per_class,
            n_timesteps: d.n_timesteps,
            sigma_amp: d.sigma_amp,
            separation: None,
            base_amp: d.base_amp,
            freqs: d.freqs,
            noise_sigma: d.noise_sigma,
            n_subjects: d.n_subjects,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        Self {
            seed: None,
            n_estimators: e.n_estimators,
            num_features: e.detach.num_features,
            c: e.detach.c,
            step_proportion: e.detach.step_proportion,
            val_fraction: e.detach.val_fraction,
            min_features: e.detach.min_features,
            threshold: e.threshold,
            normalize: e.detach.normalize,
            bias_subset: e.detach.bias_subset,
            per_step_alpha: e.detach.per_step_alpha,
            alphas: default_alphas(),
            parallel_folds: false,
            synth: SynthSettings::default(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config file {}: {e}", p.display())))
            }
        }
    }

    fn apply_model_args(&mut self, a: &ModelArgs) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = a.$f { self.$f = v; } )* };
        }
        set!(n_estimators, num_features, c, step_proportion, val_fraction, min_features, threshold);
        if a.bias_subset.is_some() {
            self.bias_subset = a.bias_subset;
        }
        if a.per_step_alpha {
            self.per_step_alpha = true;
        }
        if a.no_normalize {
            self.normalize = false;
        }
        if a.seed.is_some() {
            self.seed = a.seed;
        }
    }

    /// Fills in a fresh seed when none was given, announcing it on stderr.
    fn resolve_seed(&mut self) -> u64 {
        match self.seed {
            Some(s) => s,
            None => {
                let s = rand::random::<u64>() >> 11;
                eprintln!("seed: {s}");
                self.seed = Some(s);
                s
            }
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_estimators: self.n_estimators,
            threshold: self.threshold,
            detach: DetachConfig {
                num_features: self.num_features,
                c: self.c,
                step_proportion: self.step_proportion,
                val_fraction: self.val_fraction,
                min_features: self.min_features,
                seed: self.seed.unwrap_or(0),
                alphas: self.alphas.clone(),
                normalize: self.normalize,
                bias_subset: self.bias_subset,
                per_step_alpha: self.per_step_alpha,
            },
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            theta: s.theta,
            n_per_class: s.n_per_class,
            n_timesteps: s.n_timesteps,
            sigma_amp: s.sigma_amp,
            separation: s.separation.unwrap_or(2.0 * s.sigma_amp),
            base_amp: s.base_amp,
            freqs: s.freqs,
            noise_sigma: s.noise_sigma,
            n_subjects: s.n_subjects,
            seed: self.seed.unwrap_or(0),
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match cli.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j as usize).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 4;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &mut config),
        Command::Train(a) => cmd_train(a, &mut config),
        Command::Predict(a) => cmd_predict(a),
        Command::Relevance(a) => cmd_relevance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Loso(a) => cmd_loso(a, &mut config),
    }
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    let format = match &a.format {
        Some(f) => f.parse()?,
        None => DatasetFormat::from_path(&a.data),
    };
    load_dataset(&a.data, format)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs, config: &mut RunConfig) -> Result<()> {
    let s = &mut config.synth;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { s.$f = v; } )* };
    }
    set!(theta, n_per_class, n_timesteps, sigma_amp, base_amp, noise_sigma, n_subjects);
    if a.separation.is_some() {
        s.separation = a.separation;
    }
    if let Some(f) = &a.freqs {
        s.freqs = [f[0], f[1], f[2]];
    }
    if a.seed.is_some() {
        config.seed = a.seed;
    }
    config.resolve_seed();
    let synth = config.synth_config();
    let dataset = generate(&synth)?;
    let origin = json!({ "generator": "synth", "config": synth });
    save_dataset_with_origin(&dataset, &a.out, Some(origin))?;
    println!(
        "wrote {} instances x {} channels x {} timesteps to {}",
        dataset.n_instances(),
        dataset.n_channels(),
        dataset.n_timesteps(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MemberSummary {
    index: usize,
    seed: u64,
    val_accuracy: f64,
    weight: f64,
    retained_features: usize,
    retained_fraction: f64,
    n_kernels: usize,
    alpha: f64,
}

fn member_summaries(model: &EnsembleModel) -> Vec<MemberSummary> {
    model
        .members
        .iter()
        .zip(&model.weights)
        .enumerate()
        .map(|(index, (m, &weight))| MemberSummary {
            index,
            seed: m.config.seed,
            val_accuracy: m.val_accuracy,
            weight,
            retained_features: m.retained_ids.len(),
            retained_fraction: m.retained_fraction(),
            n_kernels: m.bank.num_convolutions(),
            alpha: m.classifier.alpha,
        })
        .collect()
}

fn cmd_train(a: &TrainArgs, config: &mut RunConfig) -> Result<()> {
    config.apply_model_args(&a.model);
    config.resolve_seed();
    let ensemble_config = config.ensemble_config();
    ensemble_config.validate()?;
    let data = load_data(&a.data)?;
    let start = Instant::now();
    let model = fit_ensemble(&data, &ensemble_config)?;
    let elapsed = start.elapsed().as_secs_f64();
    model.save(&a.out)?;
    let report = json!({
        "config": config,
        "data": a.data.data.display().to_string(),
        "n_instances": data.n_instances(),
        "n_channels": data.n_channels(),
        "n_timesteps": data.n_timesteps(),
        "members": member_summaries(&model),
        "weights": model.weights,
        "wall_clock_seconds": elapsed,
    });
    write_json(&a.out.join("training_report.json"), &report)?;
    println!(
        "trained {} members in {:.1}s; model written to {}",
        model.n_members(),
        elapsed,
        a.out.display()
    );
    Ok(())
}

fn check_threshold(t: f64) -> Result<f64> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {t}")))
    }
}

fn predictions_csv(proba: &[[f64; 2]], labels: &[u8]) -> String {
    let mut out = String::from("instance_id,prob_positive,predicted_label\n");
    for (i, (p, l)) in proba.iter().zip(labels).enumerate() {
        out.push_str(&format!("{i},{},{l}\n", p[1]));
    }
    out
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = EnsembleModel::load(&a.model)?;
    let threshold = check_threshold(a.threshold.unwrap_or(model.threshold))?;
    let data = load_data(&a.data)?;
    let proba = model.predict_proba(&data)?;
    let labels = labels_from_proba(&proba, threshold);
    write_text(&a.out, &predictions_csv(&proba, &labels))?;
    println!("wrote {} predictions to {}", labels.len(), a.out.display());
    Ok(())
}

fn relevance_csv(names: &[String], ensemble: &ChannelRelevance, members: &[ChannelRelevance]) -> String {
    let mut out = String::from("channel_name,relevance");
    for i in 0..members.len() {
        out.push_str(&format!(",member_{i:03}"));
    }
    out.push('\n');
    for (c, name) in names.iter().enumerate() {
        out.push_str(&format!("{},{}", csv_field(name), ensemble.values[c]));
        for m in members {
            out.push_str(&format!(",{}", m.values[c]));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn model_relevance(model: &EnsembleModel) -> (ChannelRelevance, Vec<ChannelRelevance>) {
    let members: Vec<ChannelRelevance> = model.members.iter().map(member_channel_relevance).collect();
    (ensemble_channel_relevance(model), members)
}

fn cmd_relevance(a: &RelevanceArgs) -> Result<()> {
    let model = EnsembleModel::load(&a.model)?;
    let (ensemble, members) = model_relevance(&model);
    write_text(&a.out, &relevance_csv(&model.channel_names(), &ensemble, &members))?;
    println!("wrote relevance of {} channels to {}", model.n_channels, a.out.display());
    Ok(())
}

fn roc_csv(curve: &crate::eval::RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = EnsembleModel::load(&a.model)?;
    let threshold = check_threshold(a.threshold.unwrap_or(model.threshold))?;
    let data = load_data(&a.data)?;
    let proba = model.predict_proba(&data)?;
    let labels = labels_from_proba(&proba, threshold);
    let metrics = compute_metrics(data.labels(), &labels, 1)?;
    let p1: Vec<f64> = proba.iter().map(|p| p[1]).collect();
    create_dir(&a.out)?;

    let mut auc = None;
    let mut best = None;
    if data.has_both_classes() {
        let curve = roc(data.labels(), &p1)?;
        write_text(&a.out.join("roc.csv"), &roc_csv(&curve))?;
        auc = Some(curve.auc);
        if a.best_threshold {
            let (t, m) = best_threshold(&curve, data.labels(), &p1)?;
            best = Some(json!({ "threshold": t, "metrics": m }));
        }
    } else {
        eprintln!("warning: dataset has a single class; ROC analysis skipped");
    }
    let (ensemble, members) = model_relevance(&model);
    write_text(
        &a.out.join("relevance.csv"),
        &relevance_csv(&model.channel_names(), &ensemble, &members),
    )?;
    write_text(&a.out.join("predictions.csv"), &predictions_csv(&proba, &labels))?;
    let report = json!({
        "config": model.config,
        "model": a.model.display().to_string(),
        "data": a.data.data.display().to_string(),
        "n_instances": data.n_instances(),
        "threshold": threshold,
        "metrics": metrics,
        "auc": auc,
        "best_threshold": best,
        "relevance": ensemble.values,
    });
    write_json(&a.out.join("metrics.json"), &report)?;
    println!(
        "accuracy {:.4} at threshold {threshold}; reports written to {}",
        metrics.accuracy,
        a.out.display()
    );
    Ok(())
}

fn cmd_loso(a: &LosoArgs, config: &mut RunConfig) -> Result<()> {
    config.apply_model_args(&a.model);
    if a.parallel_folds {
        config.parallel_folds = true;
    }
    config.resolve_seed();
    let ensemble_config = config.ensemble_config();
    ensemble_config.validate()?;
    let data = load_data(&a.data)?;
    let subject_ids = data
        .subject_ids()
        .ok_or_else(|| Error::InvalidData("loso requires subject ids in the dataset".into()))?
        .to_vec();
    let options = LosoOptions {
        parallel_folds: config.parallel_folds,
        positive_class: 1,
    };
    let report = loso_cv(&data, &ensemble_config, &options)?;
    for s in &report.skipped {
        eprintln!("warning: fold for subject {} skipped: {}", s.subject, s.reason);
    }
    create_dir(&a.out)?;

    // Subject-level vote over trials that received a prediction.
    let covered: Vec<usize> = (0..data.n_instances())
        .filter(|&i| report.probabilities[i].is_some())
        .collect();
    let pred: Vec<u8> = covered
        .iter()
        .map(|&i| u8::from(report.probabilities[i].unwrap() >= config.threshold))
        .collect();
    let ids: Vec<i64> = covered.iter().map(|&i| subject_ids[i]).collect();
    let truth: Vec<u8> = covered.iter().map(|&i| data.labels()[i]).collect();
    let subject_vote = if covered.is_empty() {
        None
    } else {
        let (preds, acc) = subject_majority_vote(&pred, &ids, &subject_labels(&truth, &ids))?;
        Some(json!({
            "predictions": preds.iter().map(|(s, l)| json!({"subject": s, "label": l})).collect::<Vec<_>>(),
            "accuracy": acc,
        }))
    };

    let names = data.channel_names_or_default();
    if let Some(mean) = &report.mean_relevance {
        let fold_rel: Vec<ChannelRelevance> = report.folds.iter().map(|f| f.relevance.clone()).collect();
        let mut csv = relevance_csv(&names, mean, &fold_rel);
        let header_end = csv.find('\n').unwrap();
        let mut header = String::from("channel_name,relevance");
        for f in &report.folds {
            header.push_str(&format!(",subject_{}", f.subject));
        }
        csv.replace_range(..header_end, &header);
        write_text(&a.out.join("relevance.csv"), &csv)?;
    }
    let mut prob_csv = String::from("instance_id,subject_id,label,prob_positive\n");
    for i in 0..data.n_instances() {
        let p = report.probabilities[i].map(|p| p.to_string()).unwrap_or_default();
        prob_csv.push_str(&format!("{i},{},{},{p}\n", subject_ids[i], data.labels()[i]));
    }
    write_text(&a.out.join("probabilities.csv"), &prob_csv)?;

    let out = json!({
        "config": config,
        "data": a.data.data.display().to_string(),
        "n_instances": data.n_instances(),
        "n_folds": report.folds.len(),
        "folds": report.folds.iter().map(|f| json!({
            "subject": f.subject,
            "n_train": f.n_train,
            "n_test": f.test_indices.len(),
            "metrics": f.metrics,
            "relevance": f.relevance.values,
        })).collect::<Vec<_>>(),
        "skipped": report.skipped,
        "confusion": report.confusion,
        "metrics": report.metrics,
        "mean_relevance": report.mean_relevance.as_ref().map(|r| r.values.clone()),
        "subject_vote": subject_vote,
    });
    write_json(&a.out.join("loso_report.json"), &out)?;
    println!(
        "{} folds ({} skipped); summed accuracy {:.4}; reports written to {}",
        report.folds.len(),
        report.skipped.len(),
        report.metrics.accuracy,
        a.out.display()
    );
    Ok(())
}
