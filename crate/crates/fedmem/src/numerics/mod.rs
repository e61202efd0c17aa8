//! Small dense-network toolkit: tensors, parameter sets, forward/reverse
//! passes, an Adam optimiser, and a binary on-disk container.
//!
//! Everything is 64-bit; there is no implicit parallelism and no global
//! state, so identical inputs always produce identical outputs.

pub mod adam;
pub mod net;
pub mod params;
pub mod serialize;
pub mod tensor;

pub use adam::{AdamParams, AdamState};
pub use net::{
    accuracy, argmax, backward_cross_entropy, backward_from_output_grad, forward,
    forward_with_trace, softmax, softmax_cross_entropy, CeBackward, Gradients, Trace,
};
pub use params::{Activation, Layer, ParamSet};
pub use serialize::{from_bytes, load_params, save_params, to_bytes};
pub use tensor::Tensor;
