//! Adapter-augmented transformer encoder-decoder and its parameter partition.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod count;
pub mod layers;
pub mod params;
pub mod seq2seq;


pub use batch::Batch;
pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use count::trainable_parameter_count;
pub use layers::{Bound, LayerCtx, Masks, Side};
pub use params::{layout, Group, ParamSpec, ParameterStore, TensorMap, TrainableMode};
pub use seq2seq::{mean_pool, Forward, Nll, Seq2Seq};
