//! Small neural-network toolkit on top of candle tensors: a named parameter
//! store with seeded initialisation, the layers the models need, Adam and a
//! plateau scheduler.

mod conv;
mod layers;
mod optim;
mod params;

pub use layers::{
    glu, layer_norm_plain, leaky_relu, max_pool2, sigmoid, stack_features, tensor_to_array2, BatchNorm, BiLstm,
    Conv2d, ConvTranspose2d, DepthwiseConv1d, LayerNorm, Linear, Lstm, BN_EPS, BN_MOMENTUM, LN_EPS,
};
pub use optim::{Adam, ReduceOnPlateau};
pub use params::{ParamEntry, ParamKind, ParamStore, Scope};

pub use candle_core::{DType, Device, Tensor};
