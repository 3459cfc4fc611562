use crate::error::{shape_err, Result};

/// A batch of 1-D multi-channel signals stored row-major as
/// `[batch][length][channels]`.
///
/// Flattening a map for a dense layer is free: sample `b` occupies the
/// contiguous slice `values[b * length * channels..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    batch: usize,
    length: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(batch: usize, length: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if batch == 0 || length == 0 || channels == 0 {
            return Err(shape_err!(
                "feature map dimensions must be positive, got {batch}x{length}x{channels}"
            ));
        }
        if values.len() != batch * length * channels {
            return Err(shape_err!(
                "expected {} values for {batch}x{length}x{channels}, got {}",
                batch * length * channels,
                values.len()
            ));
        }
        Ok(Self {
            batch,
            length,
            channels,
            values,
        })
    }

    pub fn zeros(batch: usize, length: usize, channels: usize) -> Self {
        assert!(batch > 0 && length > 0 && channels > 0, "empty feature map");
        Self {
            batch,
            length,
            channels,
            values: vec![0.0; batch * length * channels],
        }
    }

    /// Single-channel map from equal-length signals.
    pub fn from_signals<S: AsRef<[f64]>>(signals: &[S]) -> Result<Self> {
        let length = signals.first().map(|s| s.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(signals.len() * length);
        for (i, s) in signals.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != length {
                return Err(shape_err!(
                    "signal {i} has length {}, expected {length}",
                    s.len()
                ));
            }
            values.extend_from_slice(s);
        }
        Self::new(signals.len(), length, 1, values)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flattened width of one sample.
    pub fn sample_width(&self) -> usize {
        self.length * self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let w = self.sample_width();
        &self.values[b * w..(b + 1) * w]
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize, c: usize) -> f64 {
        self.values[(b * self.length + i) * self.channels + c]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.batch == other.batch && self.length == other.length && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.length, self.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same values viewed as `batch x 1 x (length * channels)`.
    pub fn flattened(self) -> Self {
        let width = self.sample_width();
        Self {
            batch: self.batch,
            length: 1,
            channels: width,
            values: self.values,
        }
    }
}
