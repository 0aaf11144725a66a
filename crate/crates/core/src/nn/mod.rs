//! Minimal convolutional network stack: tensors, convolution, channel
//! dropout, the encoder-decoder completion network, training and
//! checkpoints.

pub mod checkpoint;
mod conv;
mod dropout;
mod inpaint;
mod model;
mod optim;
mod tensor;
mod train;

pub use conv::conv2d_forward;
pub use dropout::channel_dropout;
pub use inpaint::{inpaint_forward, masked_input, HOLE_FILL};
pub use model::{
    Architecture, ConvParams, ConvSpec, Gradients, InpainterModel, LayerSpec, Tape, DESK_CHANNELS, LEAKY_SLOPE,
};
pub use optim::Adam;
pub use tensor::{Real, Tensor4};
pub use train::{
    masked_l1, sample_train_mask, train_inpainter, train_inpainter_with, LossRecord, MaskRule, PatchCorpus,
    TrainConfig, TrainOutcome,
};
