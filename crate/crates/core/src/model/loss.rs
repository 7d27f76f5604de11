//! Compressed-spectrum loss:
//! `L = (1−β)·Σ(|S|^c − |Ŝ|^c)² + β·Σ| |S|^c e^{jφ_S} − |Ŝ|^c e^{jφ_Ŝ} |²`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::ctensor::{CVar, Tape, Var};
use crate::error::{shape_err, Result};

/// Loss on the tape between an estimate and a target of equal shape.
pub fn complex_loss(tape: &mut Tape, target: CVar, estimate: CVar, c: f64, beta: f64) -> Result<Var> {
    if tape.cshape(target) != tape.cshape(estimate) {
        return Err(shape_err!("loss operands differ: {:?} vs {:?}", tape.cshape(target), tape.cshape(estimate)));
    }
    let mag_t = tape.abs_pow(target.re, target.im, c)?;
    let mag_e = tape.abs_pow(estimate.re, estimate.im, c)?;
    let d = tape.sub(mag_t, mag_e)?;
    let d2 = tape.mul(d, d)?;
    let mag_term = tape.sum(d2);

    let mut part = |imag: bool| -> Result<Var> {
        let a = tape.compress_part(target.re, target.im, c, imag)?;
        let b = tape.compress_part(estimate.re, estimate.im, c, imag)?;
        let d = tape.sub(a, b)?;
        let d2 = tape.mul(d, d)?;
        Ok(tape.sum(d2))
    };
    let re_term = part(false)?;
    let im_term = part(true)?;
    let cplx_term = tape.add(re_term, im_term)?;

    let m = tape.scale(mag_term, 1.0 - beta);
    let k = tape.scale(cplx_term, beta);
    tape.add(m, k)
}

/// Direct evaluation on plain arrays.
pub fn complex_loss_value(target: &Array2<Complex64>, estimate: &Array2<Complex64>, c: f64, beta: f64) -> Result<f64> {
    if target.dim() != estimate.dim() {
        return Err(shape_err!("loss operands differ: {:?} vs {:?}", target.dim(), estimate.dim()));
    }
    let comp = |z: Complex64| if z.norm() == 0.0 { z } else { z * z.norm().powf(c - 1.0) };
    let (mut mag, mut cplx) = (0.0, 0.0);
    for (&s, &e) in target.iter().zip(estimate) {
        mag += (s.norm().powf(c) - e.norm().powf(c)).powi(2);
        cplx += (comp(s) - comp(e)).norm_sqr();
    }
    Ok((1.0 - beta) * mag + beta * cplx)
}
