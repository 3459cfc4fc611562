//! The hyperparameter search space and its encoding onto the unit hypercube.
//!
//! Real dimensions are log-scaled, integer dimensions are relaxed to a
//! continuous coordinate and rounded on decode.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const DROP_RATE: &str = "drop_rate";
pub const DENSE_LAYERS: &str = "dense_layers";
pub const CONV_LAYERS: &str = "conv_layers";
pub const LEARNING_RATE: &str = "learning_rate";
pub const ADAM_DECAY: &str = "adam_decay";

const NAMES: [&str; 5] = [DROP_RATE, DENSE_LAYERS, CONV_LAYERS, LEARNING_RATE, ADAM_DECAY];

/// One point of the search space in native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub drop_rate: f64,
    pub dense_layers: usize,
    pub conv_layers: usize,
    pub learning_rate: f64,
    pub adam_decay: f64,
}

impl HyperParams {
    /// Optimum reported for MIT-BIH.
    pub const MITBIH_OPTIMUM: HyperParams = HyperParams {
        drop_rate: 0.010738,
        dense_layers: 1,
        conv_layers: 3,
        learning_rate: 0.001832,
        adam_decay: 6e-6,
    };

    /// Hand-tuned level-one configuration: three convolutions per block and
    /// three hidden dense layers. The remaining values are not published and
    /// sit inside the search bounds.
    pub const LEVEL_ONE_DEFAULT: HyperParams = HyperParams {
        drop_rate: 0.05,
        dense_layers: 3,
        conv_layers: 3,
        learning_rate: 1e-3,
        adam_decay: 1e-6,
    };

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(match name {
            DROP_RATE => self.drop_rate,
            DENSE_LAYERS => self.dense_layers as f64,
            CONV_LAYERS => self.conv_layers as f64,
            LEARNING_RATE => self.learning_rate,
            ADAM_DECAY => self.adam_decay,
            other => return Err(config_err!("unknown hyperparameter '{other}'")),
        })
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            DROP_RATE => self.drop_rate = value,
            DENSE_LAYERS => self.dense_layers = value as usize,
            CONV_LAYERS => self.conv_layers = value as usize,
            LEARNING_RATE => self.learning_rate = value,
            ADAM_DECAY => self.adam_decay = value,
            other => return Err(config_err!("unknown hyperparameter '{other}'")),
        }
        Ok(())
    }

    /// Checks every coordinate against the space bounds.
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        for dim in &space.dimensions {
            let v = self.get(&dim.name)?;
            if !(v >= dim.low && v <= dim.high) {
                return Err(config_err!(
                    "{} = {v} outside [{}, {}]",
                    dim.name,
                    dim.low,
                    dim.high
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    RealLog,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimensionKind,
    pub low: f64,
    pub high: f64,
}

impl Dimension {
    fn new(name: &str, kind: DimensionKind, low: f64, high: f64) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            low,
            high,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.kind {
            DimensionKind::RealLog => (v.ln() - self.low.ln()) / (self.high.ln() - self.low.ln()),
            DimensionKind::Integer => (v - self.low) / (self.high - self.low),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimensionKind::RealLog if u == 0.0 => self.low,
            DimensionKind::RealLog if u == 1.0 => self.high,
            DimensionKind::RealLog => {
                let v = (self.low.ln() + u * (self.high.ln() - self.low.ln())).exp();
                v.clamp(self.low, self.high)
            }
            DimensionKind::Integer => (self.low + u * (self.high - self.low))
                .round()
                .clamp(self.low, self.high),
        }
    }
}

/// Ordered dimensions; coordinate `i` of a unit vector belongs to
/// `dimensions[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        use DimensionKind::*;
        Self {
            dimensions: vec![
                Dimension::new(DROP_RATE, RealLog, 1e-2, 1e-1),
                Dimension::new(DENSE_LAYERS, Integer, 1.0, 6.0),
                Dimension::new(CONV_LAYERS, Integer, 1.0, 6.0),
                Dimension::new(LEARNING_RATE, RealLog, 1e-3, 1e-1),
                Dimension::new(ADAM_DECAY, RealLog, 1e-6, 1e-5),
            ],
        }
    }
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let space = Self { dimensions };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.len() != NAMES.len() {
            return Err(config_err!(
                "search space needs exactly the dimensions {NAMES:?}"
            ));
        }
        for name in NAMES {
            let count = self.dimensions.iter().filter(|d| d.name == name).count();
            if count != 1 {
                return Err(config_err!("dimension '{name}' appears {count} times"));
            }
        }
        for d in &self.dimensions {
            if !(d.low < d.high) || !d.low.is_finite() || !d.high.is_finite() {
                return Err(config_err!("dimension '{}' needs low < high", d.name));
            }
            match d.kind {
                DimensionKind::RealLog if d.low <= 0.0 => {
                    return Err(config_err!("log dimension '{}' needs low > 0", d.name))
                }
                DimensionKind::Integer if d.low.fract() != 0.0 || d.high.fract() != 0.0 => {
                    return Err(config_err!("integer dimension '{}' has fractional bounds", d.name))
                }
                _ => {}
            }
            let integral = matches!(d.name.as_str(), DENSE_LAYERS | CONV_LAYERS);
            if integral != (d.kind == DimensionKind::Integer) {
                return Err(config_err!("dimension '{}' has the wrong kind", d.name));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dimensions.len()
    }

    pub fn encode(&self, h: &HyperParams) -> Result<Vec<f64>> {
        h.validate(self)?;
        self.dimensions
            .iter()
            .map(|d| Ok(d.to_unit(h.get(&d.name)?).clamp(0.0, 1.0)))
            .collect()
    }

    /// Coordinates outside `[0, 1]` are clamped; integers round to nearest.
    pub fn decode(&self, u: &[f64]) -> Result<HyperParams> {
        if u.len() != self.dim() {
            return Err(config_err!(
                "unit vector has {} coordinates, space has {}",
                u.len(),
                self.dim()
            ));
        }
        let mut h = HyperParams::LEVEL_ONE_DEFAULT;
        for (d, &ui) in self.dimensions.iter().zip(u) {
            h.set(&d.name, d.from_unit(ui))?;
        }
        Ok(h)
    }

    /// Latin-hypercube design: along every dimension each of the `n` equal
    /// strata holds exactly one point.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        latin_hypercube(n, self.dim(), rng)
    }
}

pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}
