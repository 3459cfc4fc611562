//! ECG ingestion: format-212 signals, text annotations, beat windows, splits.

pub mod dataset;
pub mod segment;
pub mod synth;
pub mod wfdb;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};

/// Ordered class labels; a segment's class index is its position here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassSet(Vec<String>);

impl Default for ClassSet {
    fn default() -> Self {
        Self::new(["N", "L", "R", "A", "V"]).expect("default classes are distinct")
    }
}

impl ClassSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("class set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(',') || n.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid class label {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate class label {n:?}")));
            }
        }
        Ok(Self(names))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|n| n == label)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }
}

/// A multi-channel recording in raw ADC units.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    pub samples: Vec<Vec<i16>>,
    pub sampling_rate: f64,
    pub gain: f64,
}

impl Recording {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<i16>>, sampling_rate: f64, gain: f64) -> Result<Self> {
        let name = name.into();
        if samples.is_empty() {
            return Err(data_err!("record {name}: no channels"));
        }
        if samples.iter().any(|c| c.len() != samples[0].len()) {
            return Err(data_err!("record {name}: channels differ in length"));
        }
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(data_err!("record {name}: sampling rate must be positive"));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(data_err!("record {name}: gain must be positive"));
        }
        if let Some(bad) = samples
            .iter()
            .flatten()
            .find(|&&s| !(wfdb::SAMPLE_MIN..=wfdb::SAMPLE_MAX).contains(&s))
        {
            return Err(data_err!("record {name}: sample {bad} outside 12-bit range"));
        }
        Ok(Self {
            name,
            samples,
            sampling_rate,
            gain,
        })
    }

    /// Decodes an interleaved format-212 byte stream.
    pub fn from_212(
        name: impl Into<String>,
        bytes: &[u8],
        channel_count: usize,
        samples_per_channel: usize,
        sampling_rate: f64,
        gain: f64,
    ) -> Result<Self> {
        let name = name.into();
        let raw = wfdb::decode_212(bytes, channel_count * samples_per_channel)
            .map_err(|e| data_err!("record {name}: {e}"))?;
        Self::new(name, wfdb::deinterleave(&raw, channel_count)?, sampling_rate, gain)
    }

    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_212(&self) -> Result<Vec<u8>> {
        wfdb::encode_212(&wfdb::interleave(&self.samples)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample_index: usize,
    pub symbol: String,
}

/// Parses `sampleIndex symbol` lines. Blank lines and `#` comments are skipped;
/// extra columns are ignored.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split_whitespace();
        let idx = cols.next().unwrap_or_default();
        let sample_index = idx
            .parse::<usize>()
            .map_err(|_| data_err!("line {}: bad sample index {idx:?}", i + 1))?;
        let symbol = cols
            .next()
            .ok_or_else(|| data_err!("line {}: missing symbol", i + 1))?;
        out.push(Annotation {
            sample_index,
            symbol: symbol.to_string(),
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text).map_err(|e| data_err!("{}: {e}", path.display()))
}

pub fn format_annotations(anns: &[Annotation]) -> String {
    anns.iter()
        .map(|a| format!("{} {}\n", a.sample_index, a.symbol))
        .collect()
}

/// One fixed-length beat window.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSegment {
    pub values: Vec<f64>,
    pub label: usize,
    pub source_record: String,
    pub center_index: usize,
}
