//! Subcommand implementations behind the `ecgtune` binary.
//!
//! Output directory layout:
//!
//! ```text
//! train.csv val.csv test.csv summary.json      prepare
//! baseline/{model.bin,history.csv,metrics.csv,confusion.csv,summary.json}
//! bo/  pso/  {trials.jsonl,best.json,model.bin,history.csv,metrics.csv,confusion.csv}
//! comparison.csv                               one row per method
//! report/                                      report
//! ```

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bo;
use crate::config::{DataSource, ExperimentConfig, FitnessMetric};
use crate::ecg::dataset::{
    class_counts, load_csv, round_significant, split, stratified_subset, to_samples, write_csv,
};
use crate::ecg::segment::{normalize_segment, segment_beats};
use crate::ecg::synth::{synth_corpus, SynthConfig};
use crate::ecg::{format_annotations, read_annotations, BeatSegment, Recording};
use crate::error::{config_err, data_err, Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::model::build_model;
use crate::nn::{self, Network, Samples, TrainHistory};
use crate::pso;
use crate::space::HyperParams;
use crate::trial::{best_so_far, read_log, trial_seed, Evaluation, TrialLog, TrialRecord};

/// Beat count of the full five-class MIT-BIH segmentation used for comparison.
pub const MITBIH_REFERENCE_SEGMENTS: usize = 82_813;

const TRAIN_CSV: &str = "train.csv";
const VAL_CSV: &str = "val.csv";
const TEST_CSV: &str = "test.csv";
const BASELINE_DIR: &str = "baseline";
const COMPARISON_CSV: &str = "comparison.csv";

/// Exclusive claim on an output directory for the life of the value.
#[derive(Debug)]
pub struct OutputLock {
    _file: File,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(Error::State(format!(
                "{} is in use by another ecgtune process",
                dir.display()
            ))),
            Err(fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub per_class: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub source_format: String,
    pub window_length: usize,
    pub segmented: usize,
    /// Only for WFDB input: the MIT-BIH reference count, for comparison.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference_segments: Option<usize>,
    pub kept: usize,
    pub seed: u64,
    pub train: SplitSummary,
    pub validation: SplitSummary,
    pub test: SplitSummary,
}

fn split_summary(segs: &[BeatSegment], cfg: &ExperimentConfig) -> SplitSummary {
    let counts = class_counts(segs, cfg.classes.len());
    SplitSummary {
        count: segs.len(),
        per_class: cfg
            .classes
            .names()
            .iter()
            .zip(counts)
            .map(|(class, count)| ClassCount {
                class: class.clone(),
                count,
            })
            .collect(),
    }
}

fn samples_per_channel(bytes: usize, channels: usize) -> usize {
    bytes * 2 / 3 / channels.max(1)
}

/// Reads every configured record and cuts labelled beat windows.
pub fn load_segments(cfg: &ExperimentConfig) -> Result<Vec<BeatSegment>> {
    match &cfg.data {
        DataSource::Csv { path } => load_csv(path, &cfg.classes),
        DataSource::Wfdb212 { records } => {
            let mut out = Vec::new();
            for r in records {
                let bytes = fs::read(&r.signal).map_err(|e| Error::io(&r.signal, e))?;
                let n = r
                    .samples_per_channel
                    .unwrap_or_else(|| samples_per_channel(bytes.len(), r.channels));
                let rec = Recording::from_212(&r.name, &bytes, r.channels, n, r.sampling_rate, r.gain)
                    .map_err(|e| data_err!("{}: {e}", r.signal.display()))?;
                let anns = read_annotations(&r.annotations)?;
                out.extend(segment_beats(&rec, &anns, cfg.window_length, &cfg.classes)?);
            }
            Ok(out)
        }
        DataSource::Synthetic(sc) => {
            let mut out = Vec::new();
            for (rec, anns) in synth_corpus(sc)? {
                out.extend(segment_beats(&rec, &anns, cfg.window_length, &cfg.classes)?);
            }
            Ok(out)
        }
    }
}

pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let segments = load_segments(cfg)?;
    let segmented = segments.len();
    let mut segments: Vec<BeatSegment> = segments
        .iter()
        .map(|s| {
            let mut z = normalize_segment(s);
            z.values.iter_mut().for_each(|v| *v = round_significant(*v));
            z
        })
        .collect();
    if let Some(cap) = cfg.max_segments {
        segments = stratified_subset(segments, cfg.classes.len(), cap, cfg.seed);
    }
    let kept = segments.len();
    let data = split(segments, cfg.split, cfg.seed)?;
    write_csv(&cfg.out_dir.join(TRAIN_CSV), &data.train, &cfg.classes)?;
    write_csv(&cfg.out_dir.join(VAL_CSV), &data.validation, &cfg.classes)?;
    write_csv(&cfg.out_dir.join(TEST_CSV), &data.test, &cfg.classes)?;
    let (source_format, reference_segments) = match cfg.data {
        DataSource::Csv { .. } => ("csv", None),
        DataSource::Wfdb212 { .. } => ("wfdb212", Some(MITBIH_REFERENCE_SEGMENTS)),
        DataSource::Synthetic(_) => ("synthetic", None),
    };
    let summary = PrepareSummary {
        source_format: source_format.into(),
        window_length: data.train.first().map_or(cfg.window_length, |s| s.values.len()),
        segmented,
        reference_segments,
        kept,
        seed: cfg.seed,
        train: split_summary(&data.train, cfg),
        validation: split_summary(&data.validation, cfg),
        test: split_summary(&data.test, cfg),
    };
    write(&cfg.out_dir.join("summary.json"), to_json(&summary)?)?;
    Ok(summary)
}

// ------------------------------------------------------------------ train

/// The three prepared splits.
pub struct PreparedData {
    pub train: Samples,
    pub validation: Samples,
    pub test: Samples,
    pub window_length: usize,
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let load = |name: &str| -> Result<Vec<BeatSegment>> {
        let path = cfg.out_dir.join(name);
        if !path.exists() {
            return Err(Error::State(format!(
                "{} not found; run `ecgtune prepare` first",
                path.display()
            )));
        }
        load_csv(&path, &cfg.classes)
    };
    let (train, validation, test) = (load(TRAIN_CSV)?, load(VAL_CSV)?, load(TEST_CSV)?);
    let window_length = train
        .first()
        .map(|s| s.values.len())
        .ok_or_else(|| data_err!("{TRAIN_CSV} holds no beats"))?;
    for s in validation.iter().chain(&test) {
        if s.values.len() != window_length {
            return Err(data_err!("splits disagree on window length"));
        }
    }
    Ok(PreparedData {
        train: to_samples(&train),
        validation: to_samples(&validation),
        test: to_samples(&test),
        window_length,
    })
}

/// A trained network together with its training history.
pub struct Trained {
    pub network: Network,
    pub history: TrainHistory,
}

pub fn train_one(cfg: &ExperimentConfig, data: &PreparedData, h: &HyperParams, seed: u64) -> Result<Trained> {
    let spec = build_model(h, &cfg.space, data.window_length, cfg.classes.len(), &cfg.arch)?;
    let out = nn::train(
        &spec,
        h.learning_rate,
        h.adam_decay,
        &data.train,
        &data.validation,
        &cfg.train,
        seed,
    )?;
    Ok(Trained {
        network: out.network,
        history: out.history,
    })
}

pub fn test_confusion(cfg: &ExperimentConfig, net: &Network, test: &Samples) -> Result<ConfusionMatrix> {
    let pred = net.predict(&test.signals, cfg.train.batch_size)?;
    confusion(&test.labels, &pred, cfg.classes.names())
}

/// Headline numbers for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl ComparisonRow {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let m = cm.macro_average();
        Self {
            precision: m.precision.value,
            recall: m.recall.value,
            f1: m.f1.value,
            accuracy: cm.accuracy().value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub hyper_params: HyperParams,
    pub seed: u64,
    pub trainable_layers: usize,
    pub parameters: usize,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test: ComparisonRow,
}

fn write_run_artifacts(
    dir: &Path,
    method: &str,
    h: &HyperParams,
    seed: u64,
    trained: &Trained,
    cm: &ConfusionMatrix,
) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    nn::io::save(&trained.network, &dir.join("model.bin"))?;
    write(&dir.join("history.csv"), trained.history.to_csv())?;
    write(&dir.join("metrics.csv"), cm.metrics_csv())?;
    write(&dir.join("confusion.csv"), cm.counts_csv())?;
    let summary = RunSummary {
        method: method.into(),
        hyper_params: *h,
        seed,
        trainable_layers: trained.network.spec.trainable_layer_count(),
        parameters: trained.network.spec.param_count(),
        stopped_epoch: trained.history.stopped_epoch,
        best_epoch: trained.history.best_epoch,
        val_accuracy: trained.history.best().map_or(0.0, |e| e.val_accuracy),
        test: ComparisonRow::from_confusion(cm),
    };
    write(&dir.join("summary.json"), to_json(&summary)?)?;
    Ok(summary)
}

/// Seed for the untuned run; identical to BO's first trial, so that trial
/// reproduces this model exactly.
pub fn baseline_seed(cfg: &ExperimentConfig) -> u64 {
    trial_seed(cfg.seed, 0)
}

pub fn cmd_train(cfg: &ExperimentConfig, h: &HyperParams) -> Result<RunSummary> {
    cfg.validate()?;
    h.validate(&cfg.space)?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let data = load_prepared(cfg)?;
    let seed = baseline_seed(cfg);
    let trained = train_one(cfg, &data, h, seed)?;
    let cm = test_confusion(cfg, &trained.network, &data.test)?;
    let summary = write_run_artifacts(&cfg.out_dir.join(BASELINE_DIR), "none", h, seed, &trained, &cm)?;
    update_comparison(&cfg.out_dir, "none", summary.test)?;
    Ok(summary)
}

// ------------------------------------------------------------------- tune

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMethod {
    Bo,
    Pso,
}

impl TuneMethod {
    pub fn name(self) -> &'static str {
        match self {
            TuneMethod::Bo => "bo",
            TuneMethod::Pso => "pso",
        }
    }
}

const METHOD_ORDER: [&str; 3] = ["none", "bo", "pso"];

/// Rewrites `comparison.csv` with `method`'s row replaced.
pub fn update_comparison(out_dir: &Path, method: &str, row: ComparisonRow) -> Result<()> {
    let path = out_dir.join(COMPARISON_CSV);
    let mut rows = if path.exists() {
        read_comparison(&path)?
    } else {
        Vec::new()
    };
    rows.retain(|(m, _)| m != method);
    rows.push((method.to_string(), row));
    rows.sort_by_key(|(m, _)| METHOD_ORDER.iter().position(|o| o == m).unwrap_or(usize::MAX));
    let mut text = String::from("method,precision,recall,f1,accuracy\n");
    for (m, r) in &rows {
        text.push_str(&format!(
            "{m},{:.4},{:.4},{:.4},{:.4}\n",
            r.precision, r.recall, r.f1, r.accuracy
        ));
    }
    write(&path, text)
}

pub fn read_comparison(path: &Path) -> Result<Vec<(String, ComparisonRow)>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let num = |j: usize| -> Result<f64> {
            cells
                .get(j)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| data_err!("{}: line {}: malformed row", path.display(), i + 1))
        };
        rows.push((
            cells[0].to_string(),
            ComparisonRow {
                precision: num(1)?,
                recall: num(2)?,
                f1: num(3)?,
                accuracy: num(4)?,
            },
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub method: String,
    pub trial: usize,
    pub hyper_params: HyperParams,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    pub test: ComparisonRow,
}

pub fn cmd_tune(cfg: &ExperimentConfig, method: TuneMethod) -> Result<BestSummary> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let data = load_prepared(cfg)?;
    let dir = cfg.out_dir.join(method.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (mut log, resume) = TrialLog::open(&dir.join("trials.jsonl"))?;
    if !resume.is_empty() {
        eprintln!("resuming {} after {} logged trials", method.name(), resume.len());
    }

    // Keeps the best network seen in this process so it need not be retrained.
    let mut best_net: Option<(u64, f64, Trained)> = None;
    let mut fitness = |h: &HyperParams, seed: u64| -> Result<Evaluation> {
        let trained = train_one(cfg, &data, h, seed)?;
        let best = trained
            .history
            .best()
            .copied()
            .ok_or_else(|| Error::Numerical("training produced no epochs".into()))?;
        let eval = match cfg.fitness {
            FitnessMetric::ValAccuracy => Evaluation::from_accuracy(best.val_accuracy, Some(trained.history.clone())),
            FitnessMetric::ValLoss => Evaluation {
                objective: best.val_loss,
                val_accuracy: Some(best.val_accuracy),
                history: Some(trained.history.clone()),
            },
        };
        if best_net.as_ref().is_none_or(|(_, o, _)| eval.objective < *o) {
            best_net = Some((seed, eval.objective, trained));
        }
        Ok(eval)
    };
    let started = Instant::now();
    let mut on_trial = |r: &TrialRecord| -> Result<()> {
        eprintln!(
            "[{}] trial {:>2} {:?}: objective {:.6}{} ({:.1}s, {:.0}s total)",
            method.name(),
            r.index,
            r.source,
            r.objective,
            r.failure.as_deref().map(|f| format!(" FAILED: {f}")).unwrap_or_default(),
            r.wall_time_seconds,
            started.elapsed().as_secs_f64()
        );
        log.append(r)
    };
    let (best, trials) = match method {
        TuneMethod::Bo => {
            let r = bo::optimise(&mut fitness, &cfg.space, &cfg.bo, Some(&cfg.baseline), resume, &mut on_trial)?;
            (r.best, r.log.len())
        }
        TuneMethod::Pso => {
            let r = pso::pso_optimise(&mut fitness, &cfg.space, &cfg.pso, resume, &mut on_trial)?;
            (r.best, r.log.len())
        }
    };
    if let Some(f) = &best.failure {
        return Err(Error::Training {
            epoch: 0,
            reason: format!("every trial failed; best trial {}: {f}", best.index),
        });
    }
    let trained = match best_net {
        Some((seed, _, t)) if seed == best.seed => t,
        _ => train_one(cfg, &data, &best.hyper_params, best.seed)?,
    };
    let cm = test_confusion(cfg, &trained.network, &data.test)?;
    let run = write_run_artifacts(&dir, method.name(), &best.hyper_params, best.seed, &trained, &cm)?;
    let summary = BestSummary {
        method: method.name().into(),
        trial: best.index,
        hyper_params: best.hyper_params,
        objective: best.objective,
        val_accuracy: best.val_accuracy,
        seed: best.seed,
        trials,
        test: run.test,
    };
    write(&dir.join("best.json"), to_json(&summary)?)?;
    update_comparison(&cfg.out_dir, method.name(), summary.test)?;
    Ok(summary)
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

/// Scores a saved model on one prepared split and prints its metrics.
pub fn cmd_evaluate(cfg: &ExperimentConfig, model: &Path, which: SplitName) -> Result<ConfusionMatrix> {
    let data = load_prepared(cfg)?;
    let net = nn::io::load(model)?;
    let samples = match which {
        SplitName::Train => &data.train,
        SplitName::Validation => &data.validation,
        SplitName::Test => &data.test,
    };
    if net.spec.input_length != data.window_length || net.spec.class_count != cfg.classes.len() {
        return Err(config_err!(
            "{} expects {}-sample windows and {} classes; data has {} and {}",
            model.display(),
            net.spec.input_length,
            net.spec.class_count,
            data.window_length,
            cfg.classes.len()
        ));
    }
    test_confusion(cfg, &net, samples)
}

// ----------------------------------------------------------------- report

/// Files written by `cmd_report`, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

fn require(out: &Path, names: &[&str], missing: &mut Vec<String>) {
    for n in names {
        if !out.join(n).exists() {
            missing.push((*n).to_string());
        }
    }
}

/// Consolidates training and tuning artifacts into `report/`. Inputs are
/// only read.
pub fn cmd_report(out_dir: &Path) -> Result<ReportFiles> {
    let mut missing = Vec::new();
    require(out_dir, &["baseline/confusion.csv", "baseline/history.csv"], &mut missing);
    let tuned: Vec<&str> = ["bo", "pso"]
        .into_iter()
        .filter(|m| out_dir.join(m).join("trials.jsonl").exists())
        .collect();
    if tuned.is_empty() {
        missing.push("bo/trials.jsonl or pso/trials.jsonl".into());
    }
    for m in &tuned {
        require(
            out_dir,
            &[&format!("{m}/confusion.csv"), &format!("{m}/history.csv")],
            &mut missing,
        );
    }
    if !missing.is_empty() {
        return Err(Error::State(format!("missing artifacts: {}", missing.join(", "))));
    }

    let _lock = OutputLock::acquire(out_dir)?;
    let report = out_dir.join("report");
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        write(&report.join(&name), text)?;
        files.push(PathBuf::from("report").join(name));
        Ok(())
    };

    let methods: Vec<(&str, &str)> = std::iter::once(("none", BASELINE_DIR))
        .chain(tuned.iter().map(|m| (*m, *m)))
        .collect();
    let mut per_class = String::from("method,class,precision,recall,f1\n");
    let mut md = String::from("# ecgtune report\n\n");
    for (method, dir) in &methods {
        let cm = ConfusionMatrix::from_counts_csv(&read(&out_dir.join(dir).join("confusion.csv"))?)?;
        md.push_str(&format!(
            "## {method}\n\n| class | precision % | recall % | F1 % |\n|---|---|---|---|\n"
        ));
        for (c, name) in cm.class_names.iter().enumerate() {
            let s = cm.precision_recall_f1(c);
            let flag = if s.any_undefined() { " (undefined: no samples)" } else { "" };
            per_class.push_str(&format!(
                "{method},{name},{:.4},{:.4},{:.4}\n",
                s.precision.value, s.recall.value, s.f1.value
            ));
            md.push_str(&format!(
                "| {name} | {:.2} | {:.2} | {:.2}{flag} |\n",
                s.precision.value, s.recall.value, s.f1.value
            ));
        }
        let m = cm.macro_average();
        md.push_str(&format!(
            "\naccuracy {:.2} %, macro precision {:.2} %, macro recall {:.2} %, macro F1 {:.2} %\n\n",
            cm.accuracy().value,
            m.precision.value,
            m.recall.value,
            m.f1.value
        ));
        emit(format!("normalized_confusion_{method}.csv"), cm.normalized_csv())?;
        let history = read(&out_dir.join(dir).join("history.csv"))?;
        TrainHistory::from_csv(&history)?;
        emit(format!("curves_{method}.csv"), history)?;
    }
    emit("per_class.csv".into(), per_class)?;

    let mut curve = String::from("method,trial,objective,best_objective\n");
    for m in &tuned {
        let log = read_log(&out_dir.join(m).join("trials.jsonl"))?;
        for (r, b) in log.iter().zip(best_so_far(&log)) {
            curve.push_str(&format!("{m},{},{},{}\n", r.index, r.objective, b));
        }
    }
    emit("best_so_far.csv".into(), curve)?;

    let comparison = out_dir.join(COMPARISON_CSV);
    if comparison.exists() {
        let text = read(&comparison)?;
        md.push_str("## comparison (test split)\n\n```\n");
        md.push_str(&text);
        md.push_str("```\n");
        emit(COMPARISON_CSV.into(), text)?;
    }
    emit("report.md".into(), md)?;
    Ok(ReportFiles { files })
}

// ------------------------------------------------------------------ synth

/// Writes synthetic format-212 records plus text annotations into `dir`, and
/// a config fragment (`records.json`) that points `prepare` at them.
pub fn cmd_synth(dir: &Path, sc: &SynthConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut written = Vec::new();
    for (rec, anns) in synth_corpus(sc)? {
        let dat = format!("{}.dat", rec.name);
        let txt = format!("{}.ann.txt", rec.name);
        write(&dir.join(&dat), rec.to_212()?)?;
        write(&dir.join(&txt), format_annotations(&anns))?;
        entries.push(serde_json::json!({
            "name": rec.name,
            "signal": dat,
            "annotations": txt,
            "channels": rec.channel_count(),
            "samples_per_channel": rec.len(),
            "sampling_rate": rec.sampling_rate,
            "gain": rec.gain,
        }));
        written.push(dir.join(dat));
        written.push(dir.join(txt));
    }
    let fragment = serde_json::json!({ "data": { "format": "wfdb212", "records": entries } });
    write(&dir.join("records.json"), to_json(&fragment)?)?;
    written.push(dir.join("records.json"));
    Ok(written)
}
