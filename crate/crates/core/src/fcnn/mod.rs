//! Dual-path 3D fully convolutional network: valid 3^3 convolutions with
//! PReLU on a full-resolution path and a 2x down-sampled context path,
//! fused before 1^3 "fully connected" layers and a softmax classifier.

mod arch;
mod conv;
mod infer;
mod net;
mod optim;
mod tensor;
mod train;

pub use arch::{he_init, ArchitectureSpec, InputNorm, Layer, NetworkParams, PRELU_INIT_SLOPE};
pub use conv::{conv3d_valid, conv3d_valid_backward, ConvGrads};
pub use infer::predict_volume;
pub use net::{backward, forward, loss, prelu, Prediction, Sample, PROB_FLOOR};
pub use optim::{rmsprop_update, RmsProp};
pub use tensor::Tensor;
pub use train::{
    network_inputs, sample_training_batch, train, TrainOutcome, Trainer, TrainingConfig, TrainingSet,
};
