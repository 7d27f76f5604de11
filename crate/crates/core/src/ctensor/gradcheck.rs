//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{CVar, ComplexTensor, ParamKind, ParamStore, Session, Tape, Var};

/// Gradients smaller than this are compared against it rather than against
/// their own magnitude, so round-off in near-zero entries is not amplified.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many elements per tensor part (sampled with `seed`).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Run sessions in training mode (batch statistics for normalization).
    pub training: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, max_per_tensor: None, seed: 0, training: true }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Location of the largest error, e.g. `input0.re[3]` or `conv.w.im[7]`.
    pub worst: String,
}

impl GradCheckOutcome {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// `Σ (w_r·x_r + w_i·x_i)`: a scalar functional that exercises every output
/// element with a distinct weight.
pub fn weighted_sum(tape: &mut Tape, x: CVar, weights: &ComplexTensor) -> Result<Var> {
    let w = tape.complex_constant(weights);
    let a = tape.mul(x.re, w.re)?;
    let b = tape.mul(x.im, w.im)?;
    let s = tape.add(a, b)?;
    Ok(tape.sum(s))
}

enum Slot {
    Input(usize),
    Param(super::ParamId),
}

impl GradCheck {
    /// Compares analytic gradients of `f` with respect to every input and
    /// every trainable parameter of `store` that `f` touches against central
    /// differences.
    pub fn run<F>(&self, store: &ParamStore, inputs: &[ComplexTensor], f: F) -> Result<GradCheckOutcome>
    where
        F: Fn(&mut Session, &[CVar]) -> Result<Var>,
    {
        let mut sess = Session::new(store, self.training);
        let leaves: Vec<CVar> = inputs.iter().map(|x| sess.tape.complex_leaf(x, true)).collect();
        let loss = f(&mut sess, &leaves)?;
        let grads = sess.tape.backward(loss)?;

        let mut slots: Vec<(Slot, String, ComplexTensor, bool)> = Vec::new();
        for (i, &leaf) in leaves.iter().enumerate() {
            slots.push((Slot::Input(i), format!("input{i}"), grads.get_complex(&sess.tape, leaf), true));
        }
        for (id, g) in sess.param_grads(&grads) {
            let p = store.get(id);
            slots.push((Slot::Param(id), p.name.clone(), g, p.kind == ParamKind::Complex));
        }

        let eval = |store: &ParamStore, inputs: &[ComplexTensor]| -> Result<f64> {
            let mut s = Session::new(store, self.training);
            let leaves: Vec<CVar> = inputs.iter().map(|x| s.tape.complex_constant(x)).collect();
            let l = f(&mut s, &leaves)?;
            Ok(s.tape.scalar(l))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut outcome = GradCheckOutcome { max_rel_error: 0.0, checked: 0, worst: String::new() };
        let mut work_store = store.clone();
        let mut work_inputs = inputs.to_vec();
        for (slot, name, analytic, has_imag) in &slots {
            let n = analytic.numel();
            let idx: Vec<usize> = match self.max_per_tensor {
                Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
                _ => (0..n).collect(),
            };
            let parts: &[bool] = if *has_imag { &[false, true] } else { &[false] };
            for &imag in parts {
                for &k in &idx {
                    let numeric = {
                        let mut probe = |delta: f64| -> Result<f64> {
                            let cell = slot_cell(slot, &mut work_inputs, &mut work_store, imag, k);
                            let orig = *cell;
                            *cell = orig + delta;
                            let v = eval(&work_store, &work_inputs);
                            *slot_cell(slot, &mut work_inputs, &mut work_store, imag, k) = orig;
                            v
                        };
                        let plus = probe(self.eps)?;
                        let minus = probe(-self.eps)?;
                        (plus - minus) / (2.0 * self.eps)
                    };
                    let a = if imag { analytic.im() } else { analytic.re() };
                    let a = a.as_slice().expect("standard layout")[k];
                    let err = relative_error(a, numeric);
                    outcome.checked += 1;
                    if err > outcome.max_rel_error || !err.is_finite() {
                        outcome.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                        outcome.worst = format!("{name}.{}[{k}]", if imag { "im" } else { "re" });
                    }
                }
            }
        }
        Ok(outcome)
    }
}

fn slot_cell<'b>(
    slot: &Slot,
    inputs: &'b mut [ComplexTensor],
    store: &'b mut ParamStore,
    imag: bool,
    k: usize,
) -> &'b mut f64 {
    let t = match slot {
        Slot::Input(i) => &mut inputs[*i],
        Slot::Param(id) => store.value_mut(*id),
    };
    let arr = if imag { t.im_mut() } else { t.re_mut() };
    &mut arr.as_slice_mut().expect("standard layout")[k]
}
