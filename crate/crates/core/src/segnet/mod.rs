//! Encoder-decoder segmentation network with explicit backward passes,
//! optimizers, momentum-teacher updates and weight files.

mod io;
mod loss;
mod model;
mod optim;
mod pretrain;
mod real;
mod tensor;

pub use io::{load_weights, read_weights, save_weights, write_weights, FORMAT_VERSION};
pub use loss::{bce_loss, SoftLabel};
pub use model::{softmax2, Activations, GradScope, LayerSpec, Net, SegModel, DECODER_CHANNELS, ENCODER_CHANNELS, STRIDE};
pub use optim::{adam_step, momentum_update, momentum_update_model, AdamConfig, OptimizerState, Sgd};
pub use pretrain::{pretrain, Augment, PretrainConfig, PretrainReport};
pub use real::Real;
pub(crate) use pretrain::stack;
pub use tensor::{ConvShape, Tensor};
