//! Complex-valued network layers.

pub mod batchnorm;
pub mod conv;
pub mod gru;
pub mod init;

pub use batchnorm::ComplexBatchNorm;
pub use conv::{complex_conv2d, conv_output_len, ComplexConv2d, RealConv2d};
pub use gru::{ComplexGru, ComplexLinear};
pub use init::{unitary_init, unitary_matrix};

use crate::ctensor::{CVar, Tape};

/// ℂReLU: rectifies the real and imaginary parts independently.
pub fn crelu(tape: &mut Tape, x: CVar) -> CVar {
    CVar { re: tape.relu(x.re), im: tape.relu(x.im) }
}
