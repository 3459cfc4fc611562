pub mod bo;
pub mod commands;
pub mod config;
pub mod ecg;
pub mod error;
pub mod gp;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pso;
pub mod space;
pub mod trial;

pub use error::{Error, Result};
