//! Small feed-forward network toolkit: dense layers with analytic
//! gradients, softmax helpers and an Adam optimizer. Everything is `f64`.

mod adam;
mod dense;
mod record;
mod softmax;

pub use adam::{Adam, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use dense::{
    leaky_relu, leaky_relu_grad, Activation, BatchTrace, Dense, DenseNet, GradientTape, LayerGrad, ParamSet,
    LEAKY_SLOPE,
};
pub use record::{LayerRecord, NetRecord, NET_FORMAT, NET_VERSION};
pub use softmax::{entropy, log_softmax, softmax};
