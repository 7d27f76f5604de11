//! Complex operations expressed as real arithmetic on tape nodes.

use crate::error::{shape_err, Result};

use super::{CVar, ComplexTensor, Tape};

impl Tape {
    pub fn complex_leaf(&mut self, value: &ComplexTensor, requires_grad: bool) -> CVar {
        CVar {
            re: self.leaf(value.re().clone(), requires_grad),
            im: self.leaf(value.im().clone(), requires_grad),
        }
    }

    pub fn complex_constant(&mut self, value: &ComplexTensor) -> CVar {
        self.complex_leaf(value, false)
    }

    pub fn complex_value(&self, v: CVar) -> ComplexTensor {
        ComplexTensor::new(self.value(v.re).clone(), self.value(v.im).clone()).expect("parts share shape")
    }

    pub fn cshape(&self, v: CVar) -> &[usize] {
        self.shape(v.re)
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar { re: self.add(a.re, b.re)?, im: self.add(a.im, b.im)? })
    }

    pub fn csub(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar { re: self.sub(a.re, b.re)?, im: self.sub(a.im, b.im)? })
    }

    pub fn cscale(&mut self, a: CVar, alpha: f64) -> CVar {
        CVar { re: self.scale(a.re, alpha), im: self.scale(a.im, alpha) }
    }

    /// Elementwise complex product.
    pub fn cmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(CVar { re: self.sub(rr, ii)?, im: self.add(ri, ir)? })
    }

    /// Complex matrix product over the last two axes (see [`Tape::matmul`]).
    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.matmul(a.re, b.re, false, false)?;
        let ii = self.matmul(a.im, b.im, false, false)?;
        let ri = self.matmul(a.re, b.im, false, false)?;
        let ir = self.matmul(a.im, b.re, false, false)?;
        Ok(CVar { re: self.sub(rr, ii)?, im: self.add(ri, ir)? })
    }

    /// Conjugate transpose of a rank-2 complex node.
    pub fn hermitian_transpose(&mut self, a: CVar) -> Result<CVar> {
        if self.shape(a.re).len() != 2 {
            return Err(shape_err!("hermitian transpose needs a matrix, got {:?}", self.shape(a.re)));
        }
        let re = self.permute(a.re, &[1, 0])?;
        let im_t = self.permute(a.im, &[1, 0])?;
        Ok(CVar { re, im: self.neg(im_t) })
    }

    /// `Q·K^H` over the last two axes of rank-2 or rank-3 operands:
    /// `(Q_r K_rᵀ + Q_i K_iᵀ) + j(Q_i K_rᵀ − Q_r K_iᵀ)`.
    pub fn hermitian_correlation(&mut self, q: CVar, k: CVar) -> Result<CVar> {
        let rr = self.matmul(q.re, k.re, false, true)?;
        let ii = self.matmul(q.im, k.im, false, true)?;
        let ir = self.matmul(q.im, k.re, false, true)?;
        let ri = self.matmul(q.re, k.im, false, true)?;
        Ok(CVar { re: self.add(rr, ii)?, im: self.sub(ir, ri)? })
    }

    pub fn cpermute(&mut self, a: CVar, axes: &[usize]) -> Result<CVar> {
        Ok(CVar { re: self.permute(a.re, axes)?, im: self.permute(a.im, axes)? })
    }

    pub fn creshape(&mut self, a: CVar, shape: &[usize]) -> Result<CVar> {
        Ok(CVar { re: self.reshape(a.re, shape)?, im: self.reshape(a.im, shape)? })
    }

    pub fn cconcat(&mut self, parts: &[CVar], axis: usize) -> Result<CVar> {
        let re: Vec<_> = parts.iter().map(|p| p.re).collect();
        let im: Vec<_> = parts.iter().map(|p| p.im).collect();
        Ok(CVar { re: self.concat(&re, axis)?, im: self.concat(&im, axis)? })
    }

    /// `|z|` elementwise.
    pub fn cabs(&mut self, a: CVar) -> Result<crate::ctensor::Var> {
        self.hypot(a.re, a.im)
    }

    /// Real-valued loss helper: `Σ (re² + im²)`.
    pub fn csum_sq(&mut self, a: CVar) -> Result<crate::ctensor::Var> {
        let r2 = self.mul(a.re, a.re)?;
        let i2 = self.mul(a.im, a.im)?;
        let s = self.add(r2, i2)?;
        Ok(self.sum(s))
    }
}
