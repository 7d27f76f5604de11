use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{contract_err, shape_err, Result};

/// Default recursive smoothing constant for [`psd_smooth`].
pub const PSD_ALPHA: f64 = 0.8;

/// Complex ratio masking: `Ŝ = M·X` elementwise.
pub fn apply_mask(m: &Array2<Complex64>, x: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    if m.dim() != x.dim() {
        return Err(shape_err!("mask {:?} and spectrum {:?} differ", m.dim(), x.dim()));
    }
    let mut out = Array2::zeros(x.dim());
    Zip::from(&mut out).and(m).and(x).for_each(|o, &m, &x| {
        *o = Complex64::new(m.re * x.re - m.im * x.im, m.re * x.im + m.im * x.re);
    });
    Ok(out)
}

/// `|S|^c · e^{jφ_S}`, with zero mapped to zero.
pub fn compress_magnitude(s: &Array2<Complex64>, c: f64) -> Result<Array2<Complex64>> {
    if !(c > 0.0) {
        return Err(contract_err!("compression exponent must be positive, got {c}"));
    }
    Ok(s.mapv(|z| {
        let r = z.norm();
        if r == 0.0 {
            z
        } else {
            z * (r.powf(c) / r)
        }
    }))
}

/// Recursive power smoothing over time (axis 0):
/// `P(t) = α·P(t−1) + (1−α)·|S(t)|²`, starting from `P(−1) = |S(0)|²`.
/// The output keeps the input phase with magnitude `√P`.
pub fn psd_smooth(s: &Array2<Complex64>, alpha: f64) -> Result<Array2<Complex64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(contract_err!("smoothing constant must be in [0, 1), got {alpha}"));
    }
    let (t, f) = s.dim();
    let mut out = Array2::zeros((t, f));
    for k in 0..f {
        let mut p = s.get((0, k)).map_or(0.0, |z| z.norm_sqr());
        for i in 0..t {
            let z = s[[i, k]];
            p = alpha * p + (1.0 - alpha) * z.norm_sqr();
            let r = z.norm();
            out[[i, k]] = if r == 0.0 { Complex64::new(p.sqrt(), 0.0) } else { z * (p.sqrt() / r) };
        }
    }
    Ok(out)
}
