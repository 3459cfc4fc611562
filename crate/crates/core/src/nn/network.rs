use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout, dropout_backward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, residual_add, Conv1d, Dense, DropoutMask,
    Mode, Padding,
};
use super::loss::softmax;
use super::tensor::FeatureMap;
use crate::error::{shape_err, Error, Result};
use crate::model::{LayerSpec, ModelSpec};

/// A layer together with its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerState {
    Conv1d(Conv1d),
    MaxPool1d { pool_size: usize },
    Dropout { rate: f64 },
    Dense(Dense),
    Relu,
    ResidualAdd {
        shortcut_from: usize,
        projection: Option<Conv1d>,
    },
    /// Fused into the loss during training; `forward` returns logits.
    Softmax,
}

impl LayerState {
    fn tensors(&self) -> Vec<&Vec<f64>> {
        match self {
            LayerState::Conv1d(c)
            | LayerState::ResidualAdd {
                projection: Some(c),
                ..
            } => vec![&c.weight, &c.bias],
            LayerState::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            LayerState::Conv1d(c)
            | LayerState::ResidualAdd {
                projection: Some(c),
                ..
            } => vec![&mut c.weight, &mut c.bias],
            LayerState::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }
}

/// Intermediate values kept from a forward pass for the backward pass.
/// `activations[0]` is the input and `activations[i + 1]` the output of layer `i`.
#[derive(Debug)]
pub struct ForwardCache {
    pub activations: Vec<FeatureMap>,
    pool_routes: Vec<Option<Vec<usize>>>,
    masks: Vec<Option<DropoutMask>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &FeatureMap {
        self.activations.last().expect("cache holds the input")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: ModelSpec,
    pub layers: Vec<LayerState>,
}

fn uniform_fill(values: &mut [f64], limit: f64, rng: &mut ChaCha8Rng) {
    for v in values {
        *v = rng.random_range(-limit..limit);
    }
}

impl Network {
    /// Allocates weights with fan-in scaled uniform initialisation
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases).
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match *layer {
                LayerSpec::Conv1d {
                    kernel_size,
                    in_channels,
                    out_channels,
                } => {
                    let mut c = Conv1d::zeros(kernel_size, in_channels, out_channels);
                    let limit = (6.0 / (kernel_size * in_channels) as f64).sqrt();
                    uniform_fill(&mut c.weight, limit, &mut rng);
                    LayerState::Conv1d(c)
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let mut d = Dense::zeros(in_features, out_features);
                    let limit = (6.0 / in_features as f64).sqrt();
                    uniform_fill(&mut d.weight, limit, &mut rng);
                    LayerState::Dense(d)
                }
                LayerSpec::MaxPool1d { pool_size } => LayerState::MaxPool1d { pool_size },
                LayerSpec::Dropout { rate } => LayerState::Dropout { rate },
                LayerSpec::Relu => LayerState::Relu,
                LayerSpec::Softmax => LayerState::Softmax,
                LayerSpec::ResidualAdd {
                    shortcut_from,
                    projection,
                } => {
                    let projection = projection.map(|(cin, cout)| {
                        let mut c = Conv1d::zeros(1, cin, cout);
                        uniform_fill(&mut c.weight, (6.0 / cin as f64).sqrt(), &mut rng);
                        c
                    });
                    LayerState::ResidualAdd {
                        shortcut_from,
                        projection,
                    }
                }
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn parameters(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(LayerState::tensors).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(LayerState::tensors_mut).collect()
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.parameters().iter().map(|t| t.len()).collect()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.parameters().into_iter().cloned().collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != snapshot.len() {
            return Err(shape_err!("snapshot has {} tensors, network has {}", snapshot.len(), params.len()));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            if p.len() != s.len() {
                return Err(shape_err!("snapshot tensor size mismatch"));
            }
            p.copy_from_slice(s);
        }
        Ok(())
    }

    /// Runs every layer except the final softmax and returns the cache; the
    /// logits are the last activation.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: FeatureMap,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardCache> {
        if input.length() != self.spec.input_length || input.channels() != self.spec.input_channels
        {
            return Err(shape_err!(
                "network expects {}x{} inputs, got {}x{}",
                self.spec.input_length,
                self.spec.input_channels,
                input.length(),
                input.channels()
            ));
        }
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pool_routes = vec![None; n];
        let mut masks = vec![None; n];
        activations.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &activations[i];
            let y = match layer {
                LayerState::Conv1d(c) => conv1d_forward(x, c, Padding::Same)?,
                LayerState::MaxPool1d { pool_size } => {
                    let (y, route) = maxpool1d(x, *pool_size)?;
                    pool_routes[i] = Some(route);
                    y
                }
                LayerState::Dropout { rate } => {
                    let (y, mask) = dropout(x, *rate, mode, rng)?;
                    masks[i] = mask;
                    y
                }
                LayerState::Dense(d) => dense_forward(x, d)?,
                LayerState::Relu => relu(x),
                LayerState::ResidualAdd {
                    shortcut_from,
                    projection,
                } => {
                    let source = activations
                        .get(*shortcut_from)
                        .filter(|_| *shortcut_from <= i)
                        .ok_or_else(|| shape_err!("shortcut source {shortcut_from} is not behind layer {i}"))?;
                    match projection {
                        Some(p) => residual_add(&conv1d_forward(source, p, Padding::Same)?, x)?,
                        None => residual_add(source, x)?,
                    }
                }
                LayerState::Softmax => x.clone(),
            };
            activations.push(y);
        }
        Ok(ForwardCache {
            activations,
            pool_routes,
            masks,
        })
    }

    /// Gradients of every parameter tensor, in `parameters()` order, given
    /// the gradient of the loss with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, logit_grad: &FeatureMap) -> Result<Vec<Vec<f64>>> {
        let n = self.layers.len();
        if cache.activations.len() != n + 1 || !cache.logits().same_shape(logit_grad) {
            return Err(shape_err!("backward cache does not match this network"));
        }
        let mut grads: Vec<Option<FeatureMap>> = vec![None; n + 1];
        grads[n] = Some(logit_grad.clone());
        let mut param_grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];

        fn accumulate(slot: &mut Option<FeatureMap>, g: FeatureMap) {
            match slot {
                Some(acc) => {
                    for (a, v) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += v;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let g = grads[i + 1]
                .take()
                .ok_or_else(|| Error::State(format!("no gradient reached layer {i}")))?;
            let x = &cache.activations[i];
            let gin = match &self.layers[i] {
                LayerState::Conv1d(c) => {
                    let cg = conv1d_backward(x, c, &g)?;
                    param_grads[i] = vec![cg.weight, cg.bias];
                    cg.input
                }
                LayerState::MaxPool1d { .. } => {
                    let route = cache.pool_routes[i]
                        .as_ref()
                        .ok_or_else(|| Error::State("missing pool routing".into()))?;
                    maxpool1d_backward(x, route, &g)?
                }
                LayerState::Dropout { .. } => dropout_backward(cache.masks[i].as_ref(), &g)?,
                LayerState::Dense(d) => {
                    let dg = dense_backward(x, d, &g)?;
                    param_grads[i] = vec![dg.weight, dg.bias];
                    dg.input
                }
                LayerState::Relu => relu_backward(x, &g)?,
                LayerState::ResidualAdd {
                    shortcut_from,
                    projection,
                } => {
                    let source = &cache.activations[*shortcut_from];
                    let shortcut_grad = match projection {
                        Some(p) => {
                            let pg = conv1d_backward(source, p, &g)?;
                            param_grads[i] = vec![pg.weight, pg.bias];
                            pg.input
                        }
                        None => g.clone(),
                    };
                    if *shortcut_from == i {
                        let mut both = g;
                        for (a, v) in both.values_mut().iter_mut().zip(shortcut_grad.values()) {
                            *a += v;
                        }
                        both
                    } else {
                        accumulate(&mut grads[*shortcut_from], shortcut_grad);
                        g
                    }
                }
                LayerState::Softmax => g,
            };
            accumulate(&mut grads[i], gin);
        }
        Ok(param_grads.into_iter().flatten().collect())
    }

    /// Class probabilities for each input signal, evaluated in inference
    /// mode in chunks of `batch_size`.
    pub fn predict_proba(&self, signals: &[Vec<f64>], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(batch_size.max(1)) {
            let cache = self.forward(FeatureMap::from_signals(chunk)?, Mode::Eval, &mut rng)?;
            out.extend(softmax(cache.logits()));
        }
        Ok(out)
    }

    pub fn predict(&self, signals: &[Vec<f64>], batch_size: usize) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(signals, batch_size)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
