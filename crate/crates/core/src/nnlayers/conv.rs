use rand::Rng;

use crate::ctensor::{CVar, ComplexTensor, ParamId, ParamKind, ParamStore, Session, Tape, Var};
use crate::error::Result;

use super::init::{orthogonal_real, unitary_tensor};

/// Complex 2-D cross-correlation of `x: [B, C_in, T, F]` with kernel
/// `w = A + jB: [C_out, C_in, K_t, K_f]`:
/// `Y = (A*X_r − B*X_i) + j(A*X_i + B*X_r)`.
pub fn complex_conv2d(
    tape: &mut Tape,
    x: CVar,
    w: CVar,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<CVar> {
    let ar = tape.conv2d(x.re, w.re, stride, pad)?;
    let bi = tape.conv2d(x.im, w.im, stride, pad)?;
    let ai = tape.conv2d(x.im, w.re, stride, pad)?;
    let br = tape.conv2d(x.re, w.im, stride, pad)?;
    Ok(CVar { re: tape.sub(ar, bi)?, im: tape.add(ai, br)? })
}

/// Adds a per-channel bias `[C]` to a `[B, C, ...]` node.
pub(crate) fn add_channel_bias(tape: &mut Tape, x: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let b = tape.broadcast_axis(bias, 1, &shape)?;
    tape.add(x, b)
}

pub(crate) fn add_complex_channel_bias(tape: &mut Tape, x: CVar, bias: CVar) -> Result<CVar> {
    Ok(CVar { re: add_channel_bias(tape, x.re, bias.re)?, im: add_channel_bias(tape, x.im, bias.im)? })
}

/// Output length of a strided, padded convolution along one axis.
pub fn conv_output_len(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Complex convolution layer with semi-unitary initialization.
#[derive(Clone, Debug)]
pub struct ComplexConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ComplexConv2d {
    /// Channel counts are complex channels (half the real feature-map count).
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = unitary_tensor(&[out_channels, in_channels, kernel.0, kernel.1], rng);
        let weight = store.add(format!("{name}.weight"), ParamKind::Complex, w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Complex, ComplexTensor::zeros(&[out_channels])));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad }
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let w = sess.param(self.weight);
        let y = complex_conv2d(&mut sess.tape, x, w, self.stride, self.pad)?;
        match self.bias {
            Some(b) => {
                let b = sess.param(b);
                add_complex_channel_bias(&mut sess.tape, y, b)
            }
            None => Ok(y),
        }
    }
}

/// Real convolution layer applied to one part of a complex feature map.
#[derive(Clone, Debug)]
pub struct RealConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl RealConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let m = orthogonal_real(out_channels, in_channels * kernel.0 * kernel.1, rng);
        let w = m.into_shape_with_order((out_channels, in_channels, kernel.0, kernel.1)).expect("kernel shape");
        let weight = store.add(format!("{name}.weight"), ParamKind::Real, ComplexTensor::from_real(w.into_dyn()));
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Real, ComplexTensor::zeros(&[out_channels])));
        Self { weight, bias, stride, pad }
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let w = sess.param(self.weight).re;
        let y = sess.tape.conv2d(x, w, self.stride, self.pad)?;
        match self.bias {
            Some(b) => {
                let b = sess.param(b).re;
                add_channel_bias(&mut sess.tape, y, b)
            }
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_value(x: &ComplexTensor, w: &ComplexTensor, stride: (usize, usize), pad: (usize, usize)) -> ComplexTensor {
        let mut t = Tape::new();
        let (vx, vw) = (t.complex_constant(x), t.complex_constant(w));
        let y = complex_conv2d(&mut t, vx, vw, stride, pad).unwrap();
        t.complex_value(y)
    }

    #[test]
    fn identity_kernel() {
        let x = ComplexTensor::from_complex(&[1, 1, 1, 1], &[Complex64::new(1.0, 2.0)]).unwrap();
        let w = ComplexTensor::from_complex(&[1, 1, 1, 1], &[Complex64::new(1.0, 0.0)]).unwrap();
        assert_eq!(conv_value(&x, &w, (1, 1), (0, 0)).get(&[0, 0, 0, 0]), Complex64::new(1.0, 2.0));
    }

    #[test]
    fn forced_by_complex_product() {
        let x = ComplexTensor::from_complex(&[1, 1, 1, 1], &[Complex64::new(1.0, 1.0)]).unwrap();
        let w = ComplexTensor::from_complex(&[1, 1, 1, 1], &[Complex64::new(1.0, 1.0)]).unwrap();
        assert_eq!(conv_value(&x, &w, (1, 1), (0, 0)).get(&[0, 0, 0, 0]), Complex64::new(0.0, 2.0));
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = ComplexTensor::randn(&[2, 2, 5, 6], &mut rng);
        let y = ComplexTensor::randn(&[2, 2, 5, 6], &mut rng);
        let w = ComplexTensor::randn(&[3, 2, 3, 3], &mut rng);
        let alpha = 1.7;
        let lhs = conv_value(&x.scale(alpha).add(&y).unwrap(), &w, (1, 2), (1, 1));
        let rhs = conv_value(&x, &w, (1, 2), (1, 1)).scale(alpha).add(&conv_value(&y, &w, (1, 2), (1, 1))).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn output_lengths() {
        assert_eq!(conv_output_len(64, 3, 2, 1), Some(32));
        assert_eq!(conv_output_len(8, 3, 1, 1), Some(8));
        assert_eq!(conv_output_len(1, 3, 1, 0), None);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut t = Tape::new();
        let x = t.complex_constant(&ComplexTensor::zeros(&[1, 3, 4, 4]));
        let w = t.complex_constant(&ComplexTensor::zeros(&[2, 2, 3, 3]));
        assert!(matches!(complex_conv2d(&mut t, x, w, (1, 1), (1, 1)), Err(crate::Error::Shape(_))));
    }
}
