//! Mesh fields, convolution, pooling, losses, reverse-mode gradients, and Adam.

mod adam;
mod conv;
mod field;
mod gradcheck;
mod loss;
mod pool;
mod real;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use conv::{mesh_conv, ConvParams};
pub use field::ChannelField;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{l2_loss, rc_loss, LossValue, RcWeights};
pub use pool::{mesh_pool, mesh_unpool};
pub use real::{gemm, Dtype, Real};
pub use tape::{ConvShape, Gradients, ParamStore, Tape, Var};
