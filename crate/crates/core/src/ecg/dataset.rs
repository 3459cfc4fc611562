use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeatSegment, ClassSet};
use crate::error::{config_err, data_err, Error, Result};
use crate::nn::Samples;

pub const MIN_SPLIT_SEGMENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || self.validation + self.test <= 0.0 {
            return Err(config_err!("split fractions must lie in [0, 1] with a non-empty holdout"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err!("split fractions sum to {}, not 1", parts.iter().sum::<f64>()));
        }
        Ok(())
    }

    /// (train, validation, test) counts. Ties in the holdout go to validation.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let n_train = ((self.train * n as f64).round() as usize).min(n);
        let rest = n - n_train;
        let share = self.validation / (self.validation + self.test);
        let n_val = ((share * rest as f64 + 0.5).floor() as usize).min(rest);
        (n_train, n_val, rest - n_val)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<BeatSegment>,
    pub validation: Vec<BeatSegment>,
    pub test: Vec<BeatSegment>,
    pub seed: u64,
}

/// Seeded permutation then contiguous partition. Labels play no part.
pub fn split(segments: Vec<BeatSegment>, fractions: SplitFractions, seed: u64) -> Result<SplitDataset> {
    fractions.validate()?;
    if segments.len() < MIN_SPLIT_SEGMENTS {
        return Err(data_err!(
            "need at least {MIN_SPLIT_SEGMENTS} segments to split, got {}",
            segments.len()
        ));
    }
    let (n_train, n_val, _) = fractions.counts(segments.len());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<BeatSegment>> = segments.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<BeatSegment> {
        idx.iter().map(|&i| slots[i].take().expect("permutation visits each index once")).collect()
    };
    let train = take(&order[..n_train]);
    let validation = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(SplitDataset {
        train,
        validation,
        test,
        seed,
    })
}

/// Keeps at most `max_total / K` beats of each class, chosen by seed, in input order.
pub fn stratified_subset(
    segments: Vec<BeatSegment>,
    class_count: usize,
    max_total: usize,
    seed: u64,
) -> Vec<BeatSegment> {
    let per_class = max_total / class_count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; segments.len()];
    for c in 0..class_count {
        let mut idx: Vec<usize> = (0..segments.len()).filter(|&i| segments[i].label == c).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(per_class) {
            keep[i] = true;
        }
    }
    segments
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect()
}

pub fn to_samples(segments: &[BeatSegment]) -> Samples {
    Samples {
        signals: segments.iter().map(|s| s.values.clone()).collect(),
        labels: segments.iter().map(|s| s.label).collect(),
    }
}

pub fn class_counts(segments: &[BeatSegment], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for s in segments {
        if s.label < class_count {
            counts[s.label] += 1;
        }
    }
    counts
}

/// Rounds to 12 significant digits; used to canonicalise exported values.
pub fn round_significant(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap_or(v)
}

/// Writes `label,v0,...` rows. Values use the shortest exact decimal form, so
/// loading the file back reproduces them bit for bit.
pub fn write_csv(path: &Path, segments: &[BeatSegment], classes: &ClassSet) -> Result<()> {
    let width = segments.first().map_or(0, |s| s.values.len());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut line = String::from("label");
    for i in 0..width {
        line.push_str(&format!(",v{i}"));
    }
    writeln!(w, "{line}").map_err(io)?;
    for (row, s) in segments.iter().enumerate() {
        if s.values.len() != width {
            return Err(data_err!("segment {row} has {} values, expected {width}", s.values.len()));
        }
        let name = classes
            .name(s.label)
            .ok_or_else(|| data_err!("segment {row} has label index {} outside the class set", s.label))?;
        line.clear();
        line.push_str(name);
        for v in &s.values {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_csv(path: &Path, classes: &ClassSet) -> Result<Vec<BeatSegment>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let at = |line: u64, msg: String| data_err!("{}: line {line}: {msg}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| at(1, e.to_string()))?
        .clone();
    let width = header.len().saturating_sub(1);
    let well_formed = header.get(0) == Some("label")
        && width > 0
        && (0..width).all(|i| header.get(i + 1) == Some(format!("v{i}").as_str()));
    if !well_formed {
        return Err(at(1, "header must be label,v0,v1,...".into()));
    }
    let source = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| at(line, e.to_string()))?;
        if rec.len() != width + 1 {
            return Err(at(line, format!("expected {} values, found {}", width, rec.len().saturating_sub(1))));
        }
        let label = classes
            .index_of(&rec[0])
            .ok_or_else(|| at(line, format!("unknown label {:?}", &rec[0])))?;
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| at(line, format!("column v{i}: not a number: {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(BeatSegment {
            values,
            label,
            source_record: source.clone(),
            center_index: row,
        });
    }
    Ok(out)
}
