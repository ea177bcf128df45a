//! Miniature MC-dropout segmentation network with hand-written backpropagation.

mod checkpoint;
mod config;
mod layers;
mod network;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{LossConfig, NetworkConfig};
pub use network::{
    forward, loss, loss_and_gradient, sample_dropout_mask, sample_loss, DropoutMask, Logits,
    LossValue, TrainingSample,
};
pub use params::{LayerSpec, Parameters};
pub use train::{mc_predict, pass_rng, predict, train, TrainConfig, TrainOutcome};
