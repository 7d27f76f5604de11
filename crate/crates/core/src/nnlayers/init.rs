//! Semi-unitary initialization.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ctensor::ComplexTensor;

/// `rows × cols` complex matrix with orthonormal rows when `rows <= cols`
/// (so `W·W^H = I`), orthonormal columns otherwise.
///
/// Built from the QR factorization of a complex Gaussian matrix, with the
/// phases of `R`'s diagonal folded into `Q`.
pub fn unitary_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexTensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<Complex64>::from_fn(tall, short, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..short {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..tall {
            q[(i, j)] *= phase;
        }
    }
    let mut out = ComplexTensor::zeros(&[rows, cols]);
    for i in 0..rows {
        for j in 0..cols {
            // Orthonormal columns of q become orthonormal rows when wide.
            let v = if rows <= cols { q[(j, i)] } else { q[(i, j)] };
            out.set(&[i, j], v);
        }
    }
    out
}

/// Semi-unitary tensor: the first axis against the flattened rest.
pub fn unitary_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> ComplexTensor {
    let rows = shape.first().copied().unwrap_or(1);
    let cols: usize = shape.iter().skip(1).product();
    unitary_matrix(rows, cols.max(1), rng).reshape(shape).expect("same element count")
}

/// Deterministic semi-unitary initialization for a matrix (`[rows, cols]`)
/// or convolution kernel (`[C_out, C_in, K_t, K_f]`).
pub fn unitary_init(shape: &[usize], seed: u64) -> ComplexTensor {
    unitary_tensor(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Real orthogonal matrix (orthonormal rows when wide, columns when tall).
pub fn orthogonal_real<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ndarray::Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    ndarray::Array2::from_shape_fn((rows, cols), |(i, j)| if rows <= cols { q[(j, i)] } else { q[(i, j)] })
}
