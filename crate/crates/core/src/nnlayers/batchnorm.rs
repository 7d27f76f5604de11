//! Complex batch normalization with 2×2 covariance whitening.
//!
//! Per channel, the centered pair `(x_r, x_i)` is multiplied by the inverse
//! square root of its covariance `V + εI`, then by a symmetric 2×2 scale `γ`,
//! then shifted by a complex `β`. For `M = [[a, b], [b, c]]` with
//! `s = √det M` and `t = √(a + c + 2s)`:
//! `M^{-1/2} = [[c + s, −b], [−b, a + s]] / (s·t)`.

use ndarray::{Array1, ArrayD, IxDyn};

use crate::ctensor::{CVar, ComplexTensor, ParamId, ParamKind, ParamStore, Session, Tape, Var};
use crate::error::{contract_err, shape_err, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Parameters and running statistics of one complex batch-norm layer.
///
/// `running_cov` stores `V_rr`, `V_ri`, `V_ii` as rows of its real part
/// (shape `[3, C]`).
#[derive(Clone, Debug)]
pub struct ComplexBatchNorm {
    pub channels: usize,
    pub gamma_rr: ParamId,
    pub gamma_ri: ParamId,
    pub gamma_ii: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_cov: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl ComplexBatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let real = |v: f64| ComplexTensor::from_real(ArrayD::from_elem(IxDyn(&[channels]), v));
        let gamma_rr = store.add(format!("{name}.gamma_rr"), ParamKind::Real, real(std::f64::consts::FRAC_1_SQRT_2));
        let gamma_ri = store.add(format!("{name}.gamma_ri"), ParamKind::Real, real(0.0));
        let gamma_ii = store.add(format!("{name}.gamma_ii"), ParamKind::Real, real(std::f64::consts::FRAC_1_SQRT_2));
        let beta = store.add(format!("{name}.beta"), ParamKind::Complex, ComplexTensor::zeros(&[channels]));
        let running_mean = store.add(format!("{name}.running_mean"), ParamKind::Buffer, ComplexTensor::zeros(&[channels]));
        let mut cov = ArrayD::zeros(IxDyn(&[3, channels]));
        for c in 0..channels {
            cov[[0, c]] = 1.0;
            cov[[2, c]] = 1.0;
        }
        let running_cov = store.add(format!("{name}.running_cov"), ParamKind::Buffer, ComplexTensor::from_real(cov));
        Self { channels, gamma_rr, gamma_ri, gamma_ii, beta, running_mean, running_cov, momentum: BN_MOMENTUM, eps: BN_EPS }
    }

    /// Normalizes `x: [B, C, T, F]`. Training mode uses batch statistics and
    /// queues running-statistic updates on the session; inference mode uses
    /// the running statistics.
    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let shape = sess.tape.cshape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(shape_err!("batchnorm over {} channels got input {shape:?}", self.channels));
        }
        let count = shape[0] * shape[2] * shape[3];
        let (mean_r, mean_i, v_rr, v_ri, v_ii) = if sess.training() {
            if count < 2 {
                return Err(contract_err!("batchnorm needs at least 2 samples per channel in training, got {count}"));
            }
            let t = &mut sess.tape;
            let inv_n = 1.0 / count as f64;
            let sr = t.sum_to_axis(x.re, 1)?;
            let si = t.sum_to_axis(x.im, 1)?;
            let mean_r = t.scale(sr, inv_n);
            let mean_i = t.scale(si, inv_n);
            let cr = centered(t, x.re, mean_r, &shape)?;
            let ci = centered(t, x.im, mean_i, &shape)?;
            let v_rr = channel_mean_product(t, cr, cr, inv_n)?;
            let v_ri = channel_mean_product(t, cr, ci, inv_n)?;
            let v_ii = channel_mean_product(t, ci, ci, inv_n)?;
            self.queue_running_update(sess, [mean_r, mean_i, v_rr, v_ri, v_ii]);
            (mean_r, mean_i, v_rr, v_ri, v_ii)
        } else {
            let store = sess.store();
            let rm = store.value(self.running_mean).clone();
            let rc = store.value(self.running_cov).re().clone();
            let t = &mut sess.tape;
            let row = |i: usize| rc.index_axis(ndarray::Axis(0), i).to_owned();
            (
                t.constant(rm.re().clone()),
                t.constant(rm.im().clone()),
                t.constant(row(0)),
                t.constant(row(1)),
                t.constant(row(2)),
            )
        };

        let t = &mut sess.tape;
        let cr = centered(t, x.re, mean_r, &shape)?;
        let ci = centered(t, x.im, mean_i, &shape)?;
        let a = t.add_scalar(v_rr, self.eps);
        let c = t.add_scalar(v_ii, self.eps);
        let b = v_ri;
        // s = sqrt(ac - b²), t = sqrt(a + c + 2s)
        let ac = t.mul(a, c)?;
        let bb = t.mul(b, b)?;
        let det = t.sub(ac, bb)?;
        let s = t.sqrt(det);
        let two_s = t.scale(s, 2.0);
        let trace = t.add(a, c)?;
        let tr2s = t.add(trace, two_s)?;
        let tt = t.sqrt(tr2s);
        let denom = t.mul(s, tt)?;
        let c_plus_s = t.add(c, s)?;
        let a_plus_s = t.add(a, s)?;
        let w_rr = t.div(c_plus_s, denom)?;
        let w_ii = t.div(a_plus_s, denom)?;
        let neg_b = t.neg(b);
        let w_ri = t.div(neg_b, denom)?;

        let xh_r = mix(t, w_rr, cr, w_ri, ci, &shape)?;
        let xh_i = mix(t, w_ri, cr, w_ii, ci, &shape)?;

        let g_rr = sess.param(self.gamma_rr).re;
        let g_ri = sess.param(self.gamma_ri).re;
        let g_ii = sess.param(self.gamma_ii).re;
        let beta = sess.param(self.beta);
        let t = &mut sess.tape;
        let y_r = mix(t, g_rr, xh_r, g_ri, xh_i, &shape)?;
        let y_i = mix(t, g_ri, xh_r, g_ii, xh_i, &shape)?;
        let br = t.broadcast_axis(beta.re, 1, &shape)?;
        let bi = t.broadcast_axis(beta.im, 1, &shape)?;
        Ok(CVar { re: t.add(y_r, br)?, im: t.add(y_i, bi)? })
    }

    fn queue_running_update(&self, sess: &mut Session, stats: [Var; 5]) {
        let m = self.momentum;
        let vals: Vec<Array1<f64>> = stats
            .iter()
            .map(|&v| sess.tape.value(v).clone().into_dimensionality().expect("rank 1"))
            .collect();
        let store = sess.store();
        let old_mean = store.value(self.running_mean);
        let old_cov = store.value(self.running_cov).re();
        let blend = |old: ndarray::ArrayViewD<f64>, new: &Array1<f64>| {
            old.to_owned().into_dimensionality::<ndarray::Ix1>().unwrap() * (1.0 - m) + new * m
        };
        let mean = ComplexTensor::new(
            blend(old_mean.re().view(), &vals[0]).into_dyn(),
            blend(old_mean.im().view(), &vals[1]).into_dyn(),
        )
        .expect("same shape");
        let mut cov = ArrayD::zeros(IxDyn(&[3, self.channels]));
        for (row, v) in [&vals[2], &vals[3], &vals[4]].into_iter().enumerate() {
            let old = old_cov.index_axis(ndarray::Axis(0), row);
            cov.index_axis_mut(ndarray::Axis(0), row).assign(&blend(old, v));
        }
        sess.update_buffer(self.running_mean, mean);
        sess.update_buffer(self.running_cov, ComplexTensor::from_real(cov));
    }
}

fn centered(t: &mut Tape, x: Var, mean: Var, shape: &[usize]) -> Result<Var> {
    let m = t.broadcast_axis(mean, 1, shape)?;
    t.sub(x, m)
}

fn channel_mean_product(t: &mut Tape, a: Var, b: Var, inv_n: f64) -> Result<Var> {
    let p = t.mul(a, b)?;
    let s = t.sum_to_axis(p, 1)?;
    Ok(t.scale(s, inv_n))
}

/// `c1·x1 + c2·x2` with per-channel coefficients `c1`, `c2`.
fn mix(t: &mut Tape, c1: Var, x1: Var, c2: Var, x2: Var, shape: &[usize]) -> Result<Var> {
    let b1 = t.broadcast_axis(c1, 1, shape)?;
    let b2 = t.broadcast_axis(c2, 1, shape)?;
    let p1 = t.mul(b1, x1)?;
    let p2 = t.mul(b2, x2)?;
    t.add(p1, p2)
}
