//! Split-complex GRU: complex matrix products, with the gate nonlinearities
//! applied independently to the real and imaginary pre-activations.
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! `σ`, `tanh` and `⊙` act per part.

use rand::Rng;

use crate::ctensor::{CVar, ComplexTensor, ParamId, ParamKind, ParamStore, Session, Tape};
use crate::error::{shape_err, Result};

use super::init::unitary_tensor;

/// Complex affine map `x·W + b` over the last axis of `[B, D]` inputs.
#[derive(Clone, Debug)]
pub struct ComplexLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ComplexLinear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), ParamKind::Complex, unitary_tensor(&[in_dim, out_dim], rng));
        let bias = store.add(format!("{name}.bias"), ParamKind::Complex, ComplexTensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        let y = sess.tape.cmatmul(x, w)?;
        add_row_bias(&mut sess.tape, y, b)
    }
}

fn add_row_bias(t: &mut Tape, y: CVar, b: CVar) -> Result<CVar> {
    let shape = t.cshape(y).to_vec();
    let axis = shape.len() - 1;
    let br = t.broadcast_axis(b.re, axis, &shape)?;
    let bi = t.broadcast_axis(b.im, axis, &shape)?;
    Ok(CVar { re: t.add(y.re, br)?, im: t.add(y.im, bi)? })
}

#[derive(Clone, Debug)]
struct Gate {
    input: ParamId,
    hidden: ParamId,
    bias: ParamId,
}

/// Weights of one split-complex GRU layer.
#[derive(Clone, Debug)]
pub struct ComplexGru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    update: Gate,
    reset: Gate,
    candidate: Gate,
}

impl ComplexGru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut gate = |g: &str| Gate {
            input: store.add(format!("{name}.{g}.w"), ParamKind::Complex, unitary_tensor(&[input_dim, hidden_dim], rng)),
            hidden: store.add(format!("{name}.{g}.u"), ParamKind::Complex, unitary_tensor(&[hidden_dim, hidden_dim], rng)),
            bias: store.add(format!("{name}.{g}.b"), ParamKind::Complex, ComplexTensor::zeros(&[hidden_dim])),
        };
        let update = gate("z");
        let reset = gate("r");
        let candidate = gate("h");
        Self { input_dim, hidden_dim, update, reset, candidate }
    }

    /// Parameter ids as `(W, U, b)` for the update, reset and candidate gates.
    pub fn gate_params(&self) -> [(ParamId, ParamId, ParamId); 3] {
        [&self.update, &self.reset, &self.candidate].map(|g| (g.input, g.hidden, g.bias))
    }

    fn preactivation(&self, sess: &mut Session, gate: &Gate, x: CVar, h: CVar) -> Result<CVar> {
        let w = sess.param(gate.input);
        let u = sess.param(gate.hidden);
        let b = sess.param(gate.bias);
        let t = &mut sess.tape;
        let xw = t.cmatmul(x, w)?;
        let hu = t.cmatmul(h, u)?;
        let s = t.cadd(xw, hu)?;
        add_row_bias(t, s, b)
    }

    /// One step: `x_t: [B, D]`, `h: [B, H]` → `[B, H]`.
    pub fn step(&self, sess: &mut Session, x: CVar, h: CVar) -> Result<CVar> {
        let xs = sess.tape.cshape(x).to_vec();
        let hs = sess.tape.cshape(h).to_vec();
        if xs.len() != 2 || xs[1] != self.input_dim || hs != [xs[0], self.hidden_dim] {
            return Err(shape_err!(
                "gru step expects x [B,{}] and h [B,{}], got {xs:?} and {hs:?}",
                self.input_dim,
                self.hidden_dim
            ));
        }
        let az = self.preactivation(sess, &self.update.clone(), x, h)?;
        let ar = self.preactivation(sess, &self.reset.clone(), x, h)?;
        let t = &mut sess.tape;
        let z = CVar { re: t.sigmoid(az.re), im: t.sigmoid(az.im) };
        let r = CVar { re: t.sigmoid(ar.re), im: t.sigmoid(ar.im) };
        let rh = CVar { re: t.mul(r.re, h.re)?, im: t.mul(r.im, h.im)? };
        let ah = self.preactivation(sess, &self.candidate.clone(), x, rh)?;
        let t = &mut sess.tape;
        let cand = CVar { re: t.tanh(ah.re), im: t.tanh(ah.im) };
        // h + z ⊙ (h̃ − h), per part
        let mut part = |hp, zp, cp| -> Result<_> {
            let d = t.sub(cp, hp)?;
            let zd = t.mul(zp, d)?;
            t.add(hp, zd)
        };
        Ok(CVar { re: part(h.re, z.re, cand.re)?, im: part(h.im, z.im, cand.im)? })
    }

    /// Runs over `seq: [B, T, D]` from a zero state, returning `[B, T, H]`.
    pub fn run(&self, sess: &mut Session, seq: CVar) -> Result<CVar> {
        let shape = sess.tape.cshape(seq).to_vec();
        if shape.len() != 3 {
            return Err(shape_err!("gru sequence must be [B,T,D], got {shape:?}"));
        }
        let (b, steps) = (shape[0], shape[1]);
        let mut h = sess.tape.complex_constant(&ComplexTensor::zeros(&[b, self.hidden_dim]));
        let mut outs_re = Vec::with_capacity(steps);
        let mut outs_im = Vec::with_capacity(steps);
        for step in 0..steps {
            let x = CVar { re: sess.tape.index(seq.re, 1, step)?, im: sess.tape.index(seq.im, 1, step)? };
            h = self.step(sess, x, h)?;
            outs_re.push(h.re);
            outs_im.push(h.im);
        }
        Ok(CVar { re: sess.tape.stack(&outs_re, 1)?, im: sess.tape.stack(&outs_im, 1)? })
    }
}
