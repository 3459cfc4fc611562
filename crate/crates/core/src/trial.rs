//! Trial records and the append-only JSON-lines trial log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::gp::Kernel;
use crate::nn::TrainHistory;
use crate::space::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSource {
    /// The hand-tuned starting configuration.
    Default,
    InitialDesign,
    Acquisition,
    Pso,
}

/// Outcome of one fitness call.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Value the optimiser minimises.
    pub objective: f64,
    pub val_accuracy: Option<f64>,
    pub history: Option<TrainHistory>,
}

impl Evaluation {
    /// Objective `1 - accuracy`.
    pub fn from_accuracy(val_accuracy: f64, history: Option<TrainHistory>) -> Self {
        Self {
            objective: 1.0 - val_accuracy,
            val_accuracy: Some(val_accuracy),
            history,
        }
    }

    pub fn objective(objective: f64) -> Self {
        Self {
            objective,
            val_accuracy: None,
            history: None,
        }
    }
}

/// Anything the optimisers can evaluate: a point in native units plus the
/// seed reserved for that trial.
pub trait Fitness {
    fn evaluate(&mut self, h: &HyperParams, seed: u64) -> Result<Evaluation>;
}

impl<F> Fitness for F
where
    F: FnMut(&HyperParams, u64) -> Result<Evaluation>,
{
    fn evaluate(&mut self, h: &HyperParams, seed: u64) -> Result<Evaluation> {
        self(h, seed)
    }
}

/// Fitted GP hyperparameters at proposal time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub kernel: Kernel,
    pub log_marginal_likelihood: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub source: TrialSource,
    pub hyper_params: HyperParams,
    pub unit_point: Vec<f64>,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history: Option<TrainHistory>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
    /// Surrogate that proposed this point (acquisition trials only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub surrogate: Option<SurrogateFit>,
    /// Kept out of the log so that reruns produce identical files.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Equality ignores `wall_time_seconds`.
impl PartialEq for TrialRecord {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
            && self.source == other.source
            && self.hyper_params == other.hyper_params
            && self.unit_point == other.unit_point
            && self.objective == other.objective
            && self.val_accuracy == other.val_accuracy
            && self.seed == other.seed
            && self.history == other.history
            && self.failure == other.failure
            && self.surrogate == other.surrogate
    }
}

/// Calls `fitness` and turns failures into a record with `failure_objective`.
pub(crate) fn run_trial(
    fitness: &mut dyn Fitness,
    index: usize,
    source: TrialSource,
    hyper_params: HyperParams,
    unit_point: Vec<f64>,
    seed: u64,
    failure_objective: f64,
) -> TrialRecord {
    let start = std::time::Instant::now();
    let outcome = fitness
        .evaluate(&hyper_params, seed)
        .and_then(|e| {
            if e.objective.is_finite() {
                Ok(e)
            } else {
                Err(Error::Numerical(format!("objective {}", e.objective)))
            }
        });
    let wall_time_seconds = start.elapsed().as_secs_f64();
    let (objective, val_accuracy, history, failure) = match outcome {
        Ok(e) => (e.objective, e.val_accuracy, e.history, None),
        Err(e) => (failure_objective, None, None, Some(e.to_string())),
    };
    TrialRecord {
        index,
        source,
        hyper_params,
        unit_point,
        objective,
        val_accuracy,
        seed,
        history,
        failure,
        surrogate: None,
        wall_time_seconds,
    }
}

/// Lowest objective; the earliest trial wins ties.
pub fn best_trial(log: &[TrialRecord]) -> Option<&TrialRecord> {
    log.iter().fold(None, |best: Option<&TrialRecord>, t| match best {
        Some(b) if b.objective <= t.objective => Some(b),
        _ => Some(t),
    })
}

/// Running minimum of the objective over trial index.
pub fn best_so_far(log: &[TrialRecord]) -> Vec<f64> {
    log.iter()
        .scan(f64::INFINITY, |best, t| {
            *best = best.min(t.objective);
            Some(*best)
        })
        .collect()
}

/// Derives an independent seed for slot `index` of a stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed handed to the fitness function for trial `index`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

/// Append-only JSON-lines log, flushed after every record.
pub struct TrialLog {
    path: PathBuf,
    file: File,
}

impl TrialLog {
    /// Opens (creating if needed) the log and returns it together with the
    /// records already present.
    /// A half-written final line is cut off so appends start on a clean line.
    pub fn open(path: &Path) -> Result<(Self, Vec<TrialRecord>)> {
        let existing = if path.exists() {
            let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let keep = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < raw.len() {
                OpenOptions::new()
                    .write(true)
                    .open(path)
                    .and_then(|f| f.set_len(keep as u64))
                    .map_err(|e| Error::io(path, e))?;
            }
            read_log(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok((
            Self {
                path: path.to_owned(),
                file,
            },
            existing,
        ))
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every record; a truncated final line (crash mid-write) is ignored,
/// any other malformed line is an error.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrialRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(data_err!("{}: line {}: {e}", path.display(), i + 1));
            }
        }
    }
    for (i, r) in out.iter().enumerate() {
        if r.index != i {
            return Err(data_err!(
                "{}: trial indices are not dense (found {} at position {i})",
                path.display(),
                r.index
            ));
        }
    }
    Ok(out)
}
