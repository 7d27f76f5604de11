//! Time-frequency attention over complex feature maps `[B, C, T, F]`.
//!
//! Three mechanisms share one interface:
//!
//! * [`Sdab`]: a learned, fixed-size `L×L` reweighting along the axis, per part.
//! * [`ConventionalSa`]: real self-attention applied to the real and imaginary
//!   parts independently.
//! * [`ComplexSa`]: complex projections, `W = softmax(|Q·K^H|)` and
//!   `A = W·V_r + j·W·V_i`.
//!
//! For the time axis each `[T, F, C]` sample is viewed as `T` rows of length
//! `F·C`; for the frequency axis as `F` rows of length `T·C`.
//! [`TfAttentionBlock`] runs both axes in parallel and returns
//! `x + ½(time + freq)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctensor::{CVar, ComplexTensor, ParamId, ParamKind, ParamStore, Session, Tape, Var};
use crate::error::{contract_err, shape_err, Error, Result};
use crate::nnlayers::{ComplexConv2d, RealConv2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttnAxis {
    Time,
    Frequency,
}

impl AttnAxis {
    fn name(self) -> &'static str {
        match self {
            AttnAxis::Time => "time",
            AttnAxis::Frequency => "freq",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    None,
    Sdab,
    Conventional,
    #[default]
    Complex,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] =
        [AttentionVariant::None, AttentionVariant::Sdab, AttentionVariant::Conventional, AttentionVariant::Complex];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::None => "none",
            AttentionVariant::Sdab => "sdab",
            AttentionVariant::Conventional => "conventional",
            AttentionVariant::Complex => "complex",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention variant {s:?} (expected none|sdab|conventional|complex)")))
    }
}

/// `[B, C, T, F]` → `[B, L, D]` rows for the given axis.
pub fn to_rows(tape: &mut Tape, x: Var, axis: AttnAxis) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(shape_err!("attention input must be [B,C,T,F], got {s:?}"));
    }
    let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
    match axis {
        AttnAxis::Time => {
            let p = tape.permute(x, &[0, 2, 3, 1])?;
            tape.reshape(p, &[b, t, f * c])
        }
        AttnAxis::Frequency => {
            let p = tape.permute(x, &[0, 3, 2, 1])?;
            tape.reshape(p, &[b, f, t * c])
        }
    }
}

/// Inverse of [`to_rows`] for a `[B, C, T, F]` target shape.
pub fn from_rows(tape: &mut Tape, rows: Var, axis: AttnAxis, shape: &[usize]) -> Result<Var> {
    let (b, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);
    match axis {
        AttnAxis::Time => {
            let r = tape.reshape(rows, &[b, t, f, c])?;
            tape.permute(r, &[0, 3, 1, 2])
        }
        AttnAxis::Frequency => {
            let r = tape.reshape(rows, &[b, f, t, c])?;
            tape.permute(r, &[0, 3, 2, 1])
        }
    }
}

fn crows(tape: &mut Tape, x: CVar, axis: AttnAxis) -> Result<CVar> {
    Ok(CVar { re: to_rows(tape, x.re, axis)?, im: to_rows(tape, x.im, axis)? })
}

fn cfrom_rows(tape: &mut Tape, rows: CVar, axis: AttnAxis, shape: &[usize]) -> Result<CVar> {
    Ok(CVar { re: from_rows(tape, rows.re, axis, shape)?, im: from_rows(tape, rows.im, axis, shape)? })
}

fn check_channels(tape: &Tape, x: CVar, channels: usize) -> Result<Vec<usize>> {
    let s = tape.cshape(x).to_vec();
    if s.len() != 4 || s[1] != channels {
        return Err(shape_err!("attention expects [B,{channels},T,F], got {s:?}"));
    }
    Ok(s)
}

/// Row-softmax of `corr`, optionally scaled by `1/√d` first.
fn attention_weights(tape: &mut Tape, corr: Var, scale_dim: Option<usize>) -> Var {
    let corr = match scale_dim {
        Some(d) => tape.scale(corr, 1.0 / (d as f64).sqrt()),
        None => corr,
    };
    tape.softmax(corr)
}

/// Output of one attention branch, with its attention maps (`[B, L, L]`).
#[derive(Clone, Debug)]
pub struct BranchOutput {
    pub output: CVar,
    pub maps: Vec<Var>,
}

/// Sample-independent dual attention along one axis.
#[derive(Clone, Debug)]
pub struct Sdab {
    pub axis: AttnAxis,
    pub len: usize,
    /// `(weight [L, L], bias [L])` for the real and imaginary parts.
    pub parts: [(ParamId, ParamId); 2],
}

impl Sdab {
    /// Weights start at the identity, biases at zero.
    pub fn new(store: &mut ParamStore, name: &str, axis: AttnAxis, len: usize) -> Self {
        let eye = ComplexTensor::eye(len);
        let eye = ComplexTensor::from_real(eye.re().clone());
        let mut part = |p: &str| {
            (
                store.add(format!("{name}.{p}.weight"), ParamKind::Real, eye.clone()),
                store.add(format!("{name}.{p}.bias"), ParamKind::Real, ComplexTensor::zeros(&[len])),
            )
        };
        let parts = [part("re"), part("im")];
        Self { axis, len, parts }
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<BranchOutput> {
        let shape = sess.tape.cshape(x).to_vec();
        if shape.len() != 4 {
            return Err(shape_err!("attention input must be [B,C,T,F], got {shape:?}"));
        }
        let l = match self.axis {
            AttnAxis::Time => shape[2],
            AttnAxis::Frequency => shape[3],
        };
        if l != self.len {
            return Err(contract_err!("sdab along {} is sized for {} but input has {l}", self.axis.name(), self.len));
        }
        let mut out = [x.re, x.im];
        for (slot, &(w, b)) in out.iter_mut().zip(&self.parts) {
            let w = sess.param(w).re;
            let b = sess.param(b).re;
            let t = &mut sess.tape;
            let rows = to_rows(t, *slot, self.axis)?;
            let y = t.matmul(w, rows, false, false)?;
            let rs = t.shape(y).to_vec();
            let bb = t.broadcast_axis(b, 1, &rs)?;
            let y = t.add(y, bb)?;
            *slot = from_rows(t, y, self.axis, &shape)?;
        }
        Ok(BranchOutput { output: CVar { re: out[0], im: out[1] }, maps: Vec::new() })
    }
}

/// Real self-attention applied to each part independently.
#[derive(Clone, Debug)]
pub struct ConventionalSa {
    pub axis: AttnAxis,
    pub channels: usize,
    pub scaled: bool,
    /// `[query, key, value]` projections for the real, then imaginary, part.
    pub proj: [[RealConv2d; 3]; 2],
}

impl ConventionalSa {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        axis: AttnAxis,
        channels: usize,
        scaled: bool,
        rng: &mut R,
    ) -> Self {
        let mut part = |p: &str| {
            ["q", "k", "v"].map(|k| {
                RealConv2d::new(store, &format!("{name}.{p}.{k}"), channels, channels, (1, 1), (1, 1), (0, 0), true, rng)
            })
        };
        let proj = [part("re"), part("im")];
        Self { axis, channels, scaled, proj }
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<BranchOutput> {
        let shape = check_channels(&sess.tape, x, self.channels)?;
        let mut out = [x.re, x.im];
        let mut maps = Vec::with_capacity(2);
        for (slot, proj) in out.iter_mut().zip(&self.proj) {
            let q = proj[0].forward(sess, *slot)?;
            let k = proj[1].forward(sess, *slot)?;
            let v = proj[2].forward(sess, *slot)?;
            let t = &mut sess.tape;
            let (q, k, v) = (to_rows(t, q, self.axis)?, to_rows(t, k, self.axis)?, to_rows(t, v, self.axis)?);
            let corr = t.matmul(q, k, false, true)?;
            let d = t.shape(q)[2];
            let w = attention_weights(t, corr, self.scaled.then_some(d));
            let a = t.matmul(w, v, false, false)?;
            *slot = from_rows(t, a, self.axis, &shape)?;
            maps.push(w);
        }
        Ok(BranchOutput { output: CVar { re: out[0], im: out[1] }, maps })
    }
}

/// Fully complex self-attention: one real map from `|Q·K^H|` shared by both parts.
#[derive(Clone, Debug)]
pub struct ComplexSa {
    pub axis: AttnAxis,
    pub channels: usize,
    pub scaled: bool,
    pub query: ComplexConv2d,
    pub key: ComplexConv2d,
    pub value: ComplexConv2d,
}

impl ComplexSa {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        axis: AttnAxis,
        channels: usize,
        scaled: bool,
        rng: &mut R,
    ) -> Self {
        let mut proj =
            |k: &str| ComplexConv2d::new(store, &format!("{name}.{k}"), channels, channels, (1, 1), (1, 1), (0, 0), true, rng);
        let query = proj("q");
        let key = proj("k");
        let value = proj("v");
        Self { axis, channels, scaled, query, key, value }
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<BranchOutput> {
        let shape = check_channels(&sess.tape, x, self.channels)?;
        let q = self.query.forward(sess, x)?;
        let k = self.key.forward(sess, x)?;
        let v = self.value.forward(sess, x)?;
        let t = &mut sess.tape;
        let (q, k, v) = (crows(t, q, self.axis)?, crows(t, k, self.axis)?, crows(t, v, self.axis)?);
        let corr = t.hermitian_correlation(q, k)?;
        let mag = t.cabs(corr)?;
        let d = t.shape(q.re)[2];
        let w = attention_weights(t, mag, self.scaled.then_some(d));
        let a = CVar { re: t.matmul(w, v.re, false, false)?, im: t.matmul(w, v.im, false, false)? };
        let output = cfrom_rows(t, a, self.axis, &shape)?;
        Ok(BranchOutput { output, maps: vec![w] })
    }
}

/// One attention mechanism bound to one axis.
#[derive(Clone, Debug)]
pub enum AttentionBranch {
    Sdab(Sdab),
    Conventional(ConventionalSa),
    Complex(ComplexSa),
}

impl AttentionBranch {
    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<BranchOutput> {
        match self {
            AttentionBranch::Sdab(m) => m.forward(sess, x),
            AttentionBranch::Conventional(m) => m.forward(sess, x),
            AttentionBranch::Complex(m) => m.forward(sess, x),
        }
    }
}

/// Shape parameters for building a [`TfAttentionBlock`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionSpec {
    pub variant: AttentionVariant,
    /// Complex channel count.
    pub channels: usize,
    /// Frame count, used only by SDAB.
    pub time_len: usize,
    /// Bin count, used only by SDAB.
    pub freq_len: usize,
    pub scaled: bool,
}

/// Parallel time and frequency attention with a residual merge.
#[derive(Clone, Debug)]
pub struct TfAttentionBlock {
    pub variant: AttentionVariant,
    /// `(time, frequency)`; `None` for the identity variant.
    pub branches: Option<(AttentionBranch, AttentionBranch)>,
}

/// Block output with per-branch attention maps.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub output: CVar,
    pub time_maps: Vec<Var>,
    pub freq_maps: Vec<Var>,
}

impl TfAttentionBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: AttentionSpec, rng: &mut R) -> Self {
        let mut branch = |axis: AttnAxis| {
            let n = format!("{name}.{}", axis.name());
            match spec.variant {
                AttentionVariant::None => None,
                AttentionVariant::Sdab => {
                    let len = match axis {
                        AttnAxis::Time => spec.time_len,
                        AttnAxis::Frequency => spec.freq_len,
                    };
                    Some(AttentionBranch::Sdab(Sdab::new(store, &n, axis, len)))
                }
                AttentionVariant::Conventional => Some(AttentionBranch::Conventional(ConventionalSa::new(
                    store,
                    &n,
                    axis,
                    spec.channels,
                    spec.scaled,
                    rng,
                ))),
                AttentionVariant::Complex => {
                    Some(AttentionBranch::Complex(ComplexSa::new(store, &n, axis, spec.channels, spec.scaled, rng)))
                }
            }
        };
        let time = branch(AttnAxis::Time);
        let freq = branch(AttnAxis::Frequency);
        Self { variant: spec.variant, branches: time.zip(freq) }
    }

    pub fn forward_with_maps(&self, sess: &mut Session, x: CVar) -> Result<BlockOutput> {
        let Some((time, freq)) = &self.branches else {
            return Ok(BlockOutput { output: x, time_maps: Vec::new(), freq_maps: Vec::new() });
        };
        let bt = time.forward(sess, x)?;
        let bf = freq.forward(sess, x)?;
        let t = &mut sess.tape;
        let sum = t.cadd(bt.output, bf.output)?;
        let half = t.cscale(sum, 0.5);
        let output = t.cadd(x, half)?;
        Ok(BlockOutput { output, time_maps: bt.maps, freq_maps: bf.maps })
    }

    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        Ok(self.forward_with_maps(sess, x)?.output)
    }
}
