use super::{Annotation, BeatSegment, ClassSet, Recording};
use crate::error::{data_err, Result};

/// Cuts `[c - W/2, c + ceil(W/2))` around every annotation whose symbol is in
/// `classes`. Channel 0 only; windows crossing either end are dropped.
pub fn segment_beats(
    rec: &Recording,
    anns: &[Annotation],
    window: usize,
    classes: &ClassSet,
) -> Result<Vec<BeatSegment>> {
    if window == 0 {
        return Err(data_err!("record {}: window length must be positive", rec.name));
    }
    let signal = &rec.samples[0];
    let (before, after) = (window / 2, window.div_ceil(2));
    let mut out = Vec::new();
    for ann in anns {
        let Some(label) = classes.index_of(&ann.symbol) else {
            continue;
        };
        let c = ann.sample_index;
        if c < before || c + after > signal.len() {
            continue;
        }
        out.push(BeatSegment {
            values: signal[c - before..c + after]
                .iter()
                .map(|&s| f64::from(s) / rec.gain)
                .collect(),
            label,
            source_record: rec.name.clone(),
            center_index: c,
        });
    }
    if out.is_empty() {
        return Err(data_err!("record {}: no beats of the configured classes survived segmentation", rec.name));
    }
    Ok(out)
}

const SIGMA_FLOOR: f64 = 1e-8;

/// Per-segment z-score.
pub fn normalize_segment(seg: &BeatSegment) -> BeatSegment {
    let n = seg.values.len().max(1) as f64;
    let mean = seg.values.iter().sum::<f64>() / n;
    let var = seg.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(SIGMA_FLOOR);
    BeatSegment {
        values: seg.values.iter().map(|v| (v - mean) / sd).collect(),
        ..seg.clone()
    }
}
