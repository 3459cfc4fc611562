use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layers::Mode;
use super::loss::softmax_crossentropy;
use super::network::{argmax, Network};
use super::tensor::FeatureMap;
use crate::error::{config_err, data_err, Error, Result};
use crate::model::ModelSpec;

/// Signals with integer class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub signals: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(FeatureMap, Vec<usize>)> {
        let signals: Vec<&[f64]> = idx.iter().map(|&i| self.signals[i].as_slice()).collect();
        Ok((
            FeatureMap::from_signals(&signals)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub per_epoch: Vec<EpochStats>,
    pub stopped_epoch: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.best_epoch
            .checked_sub(1)
            .and_then(|i| self.per_epoch.get(i))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for (i, e) in self.per_epoch.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                e.train_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut per_epoch = Vec::new();
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("epoch,train_loss,train_acc,val_loss,val_acc") {
            return Err(data_err!("history CSV has an unexpected header"));
        }
        for (n, line) in lines.enumerate() {
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| data_err!("history line {}: {e}", n + 2))?;
            if cells.len() != 5 {
                return Err(data_err!("history line {} has {} cells", n + 2, cells.len()));
            }
            per_epoch.push(EpochStats {
                train_loss: cells[1],
                train_accuracy: cells[2],
                val_loss: cells[3],
                val_accuracy: cells[4],
            });
        }
        let best_epoch = per_epoch
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, e)| match best {
                Some((_, b)) if b <= e.val_loss => best,
                _ => Some((i, e.val_loss)),
            })
            .map_or(0, |(i, _)| i + 1);
        Ok(Self {
            stopped_epoch: per_epoch.len(),
            per_epoch,
            best_epoch,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epochs += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epochs;
            StopDecision::Improved
        } else if self.epochs - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate(net: &Network, data: &Samples, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(data_err!("cannot evaluate on an empty set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let cache = net.forward(x, Mode::Eval, &mut rng)?;
        let (l, _) = softmax_crossentropy(cache.logits(), &y)?;
        loss += l * chunk.len() as f64;
        correct += count_correct(cache.logits(), &y);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn count_correct(logits: &FeatureMap, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| argmax(logits.sample(b)) == y)
        .count()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: TrainHistory,
}

/// Mini-batch training with Adam and early stopping on validation loss.
/// The returned network carries the weights of the best validation epoch.
///
/// Divergence (non-finite loss or gradient) is reported as
/// [`Error::Training`] with the 1-based epoch.
pub fn train(
    spec: &ModelSpec,
    learning_rate: f64,
    adam_decay: f64,
    train_set: &Samples,
    val_set: &Samples,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(data_err!("training and validation sets must be non-empty"));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(config_err!("batch size and max epochs must be positive"));
    }
    let mut network = Network::init(spec, seed)?;
    let mut adam = AdamState::new(&network.parameter_sizes(), learning_rate, adam_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = TrainHistory::default();
    let mut best_weights = network.snapshot();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train_set.batch(chunk)?;
            let cache = network.forward(x, Mode::Train, &mut rng)?;
            let (loss, grad) = softmax_crossentropy(cache.logits(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(cache.logits(), &y);
            let grads = network.backward(&cache, &grad)?;
            adam.step(&mut network.parameters_mut(), &grads)
                .map_err(|e| Error::Training {
                    epoch,
                    reason: e.to_string(),
                })?;
        }
        let (val_loss, val_accuracy) = evaluate(&network, val_set, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("validation loss became {val_loss}"),
            });
        }
        history.per_epoch.push(EpochStats {
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
        match stopper.observe(val_loss) {
            StopDecision::Improved => best_weights = network.snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    network.restore(&best_weights)?;
    history.stopped_epoch = history.per_epoch.len();
    history.best_epoch = stopper.best_epoch();
    Ok(TrainOutcome { network, history })
}
