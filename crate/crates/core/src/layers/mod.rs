//! U-Net building blocks.
//!
//! Each operation exists twice: as a pure function over tensor values and
//! as a differentiable method on [`Tape`](crate::Tape).

mod activation;
mod conv;
mod dropconnect;
mod pool;
mod reshape;

use serde::{Deserialize, Serialize};

pub use activation::{elu, elu_derivative, relu};
pub use conv::{conv2d, conv2d_with, conv_output_size, ConvParams, PaddingMode};
pub use dropconnect::{drop_connect, DropConnectState};
pub use pool::{maxpool2, upsample2};
pub use reshape::{concat_channels, crop_center, crop_offsets};


/// Training vs. inference behaviour for stochastic and batch-coupled layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}
