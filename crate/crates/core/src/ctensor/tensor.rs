use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result};

/// Dense complex array stored as separate real and imaginary parts.
///
/// The split layout mirrors how every complex operation in this crate is
/// computed: as coordinated real arithmetic on the two parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    re: ArrayD<f64>,
    im: ArrayD<f64>,
}

impl ComplexTensor {
    pub fn new(re: ArrayD<f64>, im: ArrayD<f64>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(shape_err!(
                "real part {:?} and imaginary part {:?} differ",
                re.shape(),
                im.shape()
            ));
        }
        Ok(Self { re: re.as_standard_layout().into_owned(), im: im.as_standard_layout().into_owned() })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { re: ArrayD::zeros(IxDyn(shape)), im: ArrayD::zeros(IxDyn(shape)) }
    }

    /// Real-valued tensor (imaginary part zero).
    pub fn from_real(re: ArrayD<f64>) -> Self {
        let im = ArrayD::zeros(re.raw_dim());
        Self { re: re.as_standard_layout().into_owned(), im }
    }

    pub fn from_vec(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let re = ArrayD::from_shape_vec(IxDyn(shape), re).map_err(|e| shape_err!("{e}"))?;
        let im = ArrayD::from_shape_vec(IxDyn(shape), im).map_err(|e| shape_err!("{e}"))?;
        Ok(Self { re, im })
    }

    pub fn from_complex(shape: &[usize], values: &[Complex64]) -> Result<Self> {
        Self::from_vec(
            shape,
            values.iter().map(|z| z.re).collect(),
            values.iter().map(|z| z.im).collect(),
        )
    }

    /// Standard complex Gaussian entries (independent N(0,1) parts).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let re: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_vec(shape, re, im).expect("length matches shape")
    }

    /// Complex identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.re[[i, i]] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn ndim(&self) -> usize {
        self.re.ndim()
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn re(&self) -> &ArrayD<f64> {
        &self.re
    }

    pub fn im(&self) -> &ArrayD<f64> {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.im
    }

    pub fn into_parts(self) -> (ArrayD<f64>, ArrayD<f64>) {
        (self.re, self.im)
    }

    pub fn get(&self, index: &[usize]) -> Complex64 {
        Complex64::new(self.re[IxDyn(index)], self.im[IxDyn(index)])
    }

    pub fn set(&mut self, index: &[usize], value: Complex64) {
        self.re[IxDyn(index)] = value.re;
        self.im[IxDyn(index)] = value.im;
    }

    /// Values in row-major order.
    pub fn to_complex_vec(&self) -> Vec<Complex64> {
        self.re.iter().zip(self.im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let re = self.re.clone().into_shape_with_order(IxDyn(shape)).map_err(|e| shape_err!("{e}"))?;
        let im = self.im.clone().into_shape_with_order(IxDyn(shape)).map_err(|e| shape_err!("{e}"))?;
        Ok(Self { re, im })
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn conj(&self) -> Self {
        Self { re: self.re.clone(), im: self.im.mapv(|v| -v) }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { re: &self.re * alpha, im: &self.im * alpha }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_err!("add: {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(Self { re: &self.re + &other.re, im: &self.im + &other.im })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// Largest absolute difference over both parts.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.re
            .iter()
            .zip(other.re.iter())
            .chain(self.im.iter().zip(other.im.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Complex matrix product `self · other` for rank-2 operands.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(shape_err!("matmul needs rank-2 operands, got {:?} and {:?}", self.shape(), other.shape()));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(shape_err!("matmul inner dimensions differ: {m}x{k} by {k2}x{n}"));
        }
        let ar = self.re.view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
        let ai = self.im.view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
        let br = other.re.view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
        let bi = other.im.view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
        let re = ar.dot(&br) - ai.dot(&bi);
        let im = ar.dot(&bi) + ai.dot(&br);
        Ok(Self { re: re.into_dyn(), im: im.into_dyn() })
    }

    /// Conjugate transpose of a matrix.
    pub fn hermitian_transpose(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(shape_err!("hermitian transpose needs a matrix, got rank {}", self.ndim()));
        }
        let re = self.re.t().as_standard_layout().into_owned();
        let im = self.im.t().mapv(|v| -v);
        Ok(Self { re, im: im.as_standard_layout().into_owned() })
    }
}
