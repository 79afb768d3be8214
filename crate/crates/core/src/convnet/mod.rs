//! From-scratch convolutional patch classifier: forward pass, backpropagation,
//! SGD with momentum and the `CFM1` model file.

mod arch;
mod format;
mod model;
mod train;

pub use arch::{Architecture, LayerSpec, ReluPlacement, Shape};
pub use format::{decode_model, encode_model, load_model, save_model, MODEL_VERSION};
pub use model::{LayerParams, NetworkModel, Params, PROB_CLAMP};
pub use train::{evaluate, sgd_step, train, EpochMetrics, Momentum, TrainConfig, TrainOutcome};
