//! A compact CPU engine for convolutional networks.
//!
//! Layers implement [`Module`], which pairs an explicit `forward` with a
//! hand-written `backward`. Each layer caches what its backward pass needs
//! during the forward call, so a module instance serves one forward/backward
//! pair at a time.
//!
//! Batch-level loops run on rayon when the `parallel` feature is enabled
//! (the default). Reductions over the batch are always summed in sample
//! order, so parallel and sequential execution produce identical bits.

pub mod blocks;
pub mod layers;
pub mod module;
pub mod optim;
pub mod par;
pub mod tensor;

pub use blocks::Residual;
pub use layers::{
    BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Relu, Relu6,
};
pub use module::{Mode, Module, NamedSlot, Param, Sequential, Slot};
pub use optim::Sgd;
pub use tensor::Tensor;
