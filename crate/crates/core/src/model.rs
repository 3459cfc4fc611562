//! Translation of a hyperparameter point into the residual 1-D CNN layout.
//!
//! Layout, with `n = conv_layers` and every convolution followed by ReLU:
//!
//! ```text
//! n x conv -> pool -> dropout                       block 0
//! n x conv -> add(shortcut) -> pool -> dropout      block 1 (residual)
//! 5 x (n x conv -> pool -> dropout)                 blocks 2..=6
//! dense_layers x (dense -> relu)
//! dense(classes) -> softmax
//! ```
//!
//! Filter counts double per block from `base_filters`, capped at
//! `max_filters`. When the residual block changes the channel count the
//! shortcut goes through a kernel-size-1 projection convolution.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::space::{HyperParams, SearchSpace};

pub const CONV_BLOCKS: usize = 7;
pub const RESIDUAL_BLOCK: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub base_filters: usize,
    pub max_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dense_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_filters: 32,
            max_filters: 256,
            kernel_size: 5,
            pool_size: 2,
            dense_width: 64,
        }
    }
}

impl ArchConfig {
    pub fn filters(&self, block: usize) -> usize {
        self.base_filters
            .saturating_mul(1usize << block.min(usize::BITS as usize - 1))
            .min(self.max_filters)
    }

    fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.max_filters < self.base_filters {
            return Err(config_err!("need 0 < base_filters <= max_filters"));
        }
        if self.kernel_size == 0 || self.pool_size == 0 || self.dense_width == 0 {
            return Err(config_err!("kernel_size, pool_size and dense_width must be positive"));
        }
        Ok(())
    }
}

/// Structural description of one layer, without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool1d {
        pool_size: usize,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    /// Adds the input of layer `shortcut_from` to the incoming activation,
    /// projected by a 1-wide convolution when `projection` is set.
    ResidualAdd {
        shortcut_from: usize,
        projection: Option<(usize, usize)>,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::ResidualAdd { .. } => "residual_add",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                kernel_size,
                in_channels,
                out_channels,
            } => kernel_size * in_channels * out_channels + out_channels,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            LayerSpec::ResidualAdd {
                projection: Some((cin, cout)),
                ..
            } => cin * cout + cout,
            _ => 0,
        }
    }

    /// Number of weight-carrying layers this entry represents.
    pub fn trainable_layers(&self) -> usize {
        match self {
            LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. } => 1,
            LayerSpec::ResidualAdd {
                projection: Some(_),
                ..
            } => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input_length: usize,
    pub input_channels: usize,
    pub class_count: usize,
    /// Index of the `ResidualAdd` entry in `layers`.
    pub residual_block_index: usize,
}

impl ModelSpec {
    pub fn trainable_layer_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::trainable_layers).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// `(length, channels)` after each layer.
    pub fn output_shapes(&self) -> Vec<(usize, usize)> {
        let mut shape = (self.input_length, self.input_channels);
        self.layers
            .iter()
            .map(|layer| {
                shape = match *layer {
                    LayerSpec::Conv1d { out_channels, .. } => (shape.0, out_channels),
                    LayerSpec::MaxPool1d { pool_size } => (shape.0 / pool_size, shape.1),
                    LayerSpec::Dense { out_features, .. } => (1, out_features),
                    _ => shape,
                };
                shape
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Builds the layer sequence for `h`. `h` must lie inside `space`.
pub fn build_model(
    h: &HyperParams,
    space: &SearchSpace,
    input_length: usize,
    class_count: usize,
    arch: &ArchConfig,
) -> Result<ModelSpec> {
    h.validate(space)?;
    arch.validate()?;
    crate::nn::layers::check_drop_rate(h.drop_rate)?;
    if h.conv_layers == 0 || h.dense_layers == 0 {
        return Err(config_err!("layer counts must be at least 1"));
    }
    if class_count < 2 {
        return Err(config_err!("need at least two classes"));
    }
    let final_length = (0..CONV_BLOCKS).fold(input_length, |len, _| len / arch.pool_size);
    if final_length == 0 {
        return Err(config_err!(
            "input length {input_length} too short for {CONV_BLOCKS} pooling stages of size {}",
            arch.pool_size
        ));
    }

    let mut layers = Vec::new();
    let mut channels = 1;
    let mut residual_block_index = 0;
    for block in 0..CONV_BLOCKS {
        let filters = arch.filters(block);
        let block_start = layers.len();
        let block_in = channels;
        for _ in 0..h.conv_layers {
            layers.push(LayerSpec::Conv1d {
                kernel_size: arch.kernel_size,
                in_channels: channels,
                out_channels: filters,
            });
            layers.push(LayerSpec::Relu);
            channels = filters;
        }
        if block == RESIDUAL_BLOCK {
            residual_block_index = layers.len();
            layers.push(LayerSpec::ResidualAdd {
                shortcut_from: block_start,
                projection: (block_in != channels).then_some((block_in, channels)),
            });
        }
        layers.push(LayerSpec::MaxPool1d {
            pool_size: arch.pool_size,
        });
        layers.push(LayerSpec::Dropout { rate: h.drop_rate });
    }

    let mut width = final_length * channels;
    for _ in 0..h.dense_layers {
        layers.push(LayerSpec::Dense {
            in_features: width,
            out_features: arch.dense_width,
        });
        layers.push(LayerSpec::Relu);
        width = arch.dense_width;
    }
    layers.push(LayerSpec::Dense {
        in_features: width,
        out_features: class_count,
    });
    layers.push(LayerSpec::Softmax);

    Ok(ModelSpec {
        layers,
        input_length,
        input_channels: 1,
        class_count,
        residual_block_index,
    })
}

/// Per-layer table of kind, output shape and parameter count.
pub fn describe_model(spec: &ModelSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<14} {:>14} {:>10}", "#", "layer", "output", "params");
    for (i, (layer, (len, ch))) in spec.layers.iter().zip(spec.output_shapes()).enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:<14} {:>14} {:>10}",
            i,
            layer.name(),
            format!("{len}x{ch}"),
            layer.param_count()
        );
    }
    let _ = writeln!(
        out,
        "total parameters: {} ({} trainable layers)",
        spec.param_count(),
        spec.trainable_layer_count()
    );
    out
}
