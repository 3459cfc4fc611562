//! Minimal 1-D CNN engine: layers, loss, Adam and the training loop.

pub mod adam;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

pub use adam::AdamState;
pub use layers::{Conv1d, Dense, Mode, Padding};
pub use network::{LayerState, Network};
pub use tensor::FeatureMap;
pub use train::{evaluate, train, Samples, TrainConfig, TrainHistory, TrainOutcome};
