//! Complex U-Net with attention in the encoder and a recurrent bottleneck.
//!
//! ```text
//! encoder i:   [ℂReLU] → conv(K, S, P) → TF attention → dense block → ℂBatchNorm
//! bottleneck:  GRU × n over time (F·C features) → complex linear
//! decoder i:   concat(skip i) → ℂReLU → upsample(S) → conv(K, 1, P) → ℂBatchNorm
//! head:        ℂReLU → 1×1 conv to one channel = mask M
//! ```
//!
//! The first encoder block has no leading ℂReLU since it sees the raw spectrum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{from_rows, to_rows, AttentionSpec, AttnAxis, TfAttentionBlock};
use crate::ctensor::{CVar, ComplexTensor, ParamStore, Session, Tape};
use crate::error::{shape_err, Result};
use crate::nnlayers::{crelu, ComplexBatchNorm, ComplexConv2d, ComplexGru, ComplexLinear};

use super::config::{LayerGeometry, ModelConfig};

/// Two 3×3 convolutions; the second sees the block input concatenated
/// with the first one's output.
#[derive(Clone, Debug)]
struct DenseBlock {
    first: ComplexConv2d,
    second: ComplexConv2d,
}

impl DenseBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv = |store: &mut ParamStore, n: &str, cin: usize, rng: &mut ChaCha8Rng| {
            ComplexConv2d::new(store, &format!("{name}.{n}"), cin, c, (3, 3), (1, 1), (1, 1), true, rng)
        };
        let first = conv(store, "a", c, rng);
        let second = conv(store, "b", 2 * c, rng);
        Self { first, second }
    }

    fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let a = crelu(&mut sess.tape, x);
        let y1 = self.first.forward(sess, a)?;
        let cat = sess.tape.cconcat(&[x, y1], 1)?;
        let b = crelu(&mut sess.tape, cat);
        self.second.forward(sess, b)
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    activate: bool,
    conv: ComplexConv2d,
    attention: TfAttentionBlock,
    dense: DenseBlock,
    norm: ComplexBatchNorm,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    stride: (usize, usize),
    conv: ComplexConv2d,
    norm: ComplexBatchNorm,
}

/// The network. Parameters live in a [`ParamStore`]; this holds their ids.
#[derive(Clone, Debug)]
pub struct Dccrn {
    pub config: ModelConfig,
    pub image_frames: usize,
    pub image_bins: usize,
    pub geometry: Vec<LayerGeometry>,
    encoders: Vec<EncoderBlock>,
    grus: Vec<ComplexGru>,
    bottleneck: ComplexLinear,
    decoders: Vec<DecoderBlock>,
    head: ComplexConv2d,
}

impl Dccrn {
    /// Registers all parameters in `store`, initialized from `seed`.
    pub fn new(store: &mut ParamStore, config: &ModelConfig, image_bins: usize, seed: u64) -> Result<Self> {
        let geometry = config.geometry(image_bins)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoders = Vec::with_capacity(geometry.len());
        for (i, g) in geometry.iter().enumerate() {
            let name = format!("enc{i}");
            let conv = ComplexConv2d::new(store, &format!("{name}.conv"), g.c_in, g.c_out, g.kernel, g.stride, g.pad, true, &mut rng);
            let spec = AttentionSpec {
                variant: config.attention,
                channels: g.c_out,
                time_len: g.t_out,
                freq_len: g.f_out,
                scaled: config.attention_scaled,
            };
            let attention = TfAttentionBlock::new(store, &format!("{name}.attn"), spec, &mut rng);
            let dense = DenseBlock::new(store, &format!("{name}.dense"), g.c_out, &mut rng);
            let norm = ComplexBatchNorm::new(store, &format!("{name}.bn"), g.c_out);
            encoders.push(EncoderBlock { activate: i > 0, conv, attention, dense, norm });
        }

        let last = geometry.last().expect("at least one layer");
        let features = last.c_out * last.f_out;
        let mut grus = Vec::with_capacity(config.gru_layers);
        for l in 0..config.gru_layers {
            let input = if l == 0 { features } else { config.gru_hidden };
            grus.push(ComplexGru::new(store, &format!("gru{l}"), input, config.gru_hidden, &mut rng));
        }
        let bottleneck = ComplexLinear::new(store, "bottleneck", config.gru_hidden, features, &mut rng);

        let mut decoders = Vec::with_capacity(geometry.len());
        for (i, g) in geometry.iter().enumerate().rev() {
            let out = if i > 0 { g.c_in } else { g.c_out };
            let name = format!("dec{i}");
            let conv = ComplexConv2d::new(store, &format!("{name}.conv"), 2 * g.c_out, out, g.kernel, (1, 1), g.pad, true, &mut rng);
            let norm = ComplexBatchNorm::new(store, &format!("{name}.bn"), out);
            decoders.push(DecoderBlock { stride: g.stride, conv, norm });
        }
        let head = ComplexConv2d::new(store, "head", geometry[0].c_out, 1, (1, 1), (1, 1), (0, 0), true, &mut rng);

        Ok(Self {
            config: config.clone(),
            image_frames: config.image_frames,
            image_bins,
            geometry,
            encoders,
            grus,
            bottleneck,
            decoders,
            head,
        })
    }

    /// Complex mask for `x: [B, 1, T_img, F_img]`, same shape as `x`.
    pub fn forward(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let shape = sess.tape.cshape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.image_frames || shape[3] != self.image_bins {
            return Err(shape_err!(
                "model expects [B, 1, {}, {}] images, got {shape:?}",
                self.image_frames,
                self.image_bins
            ));
        }
        let mut h = x;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            if enc.activate {
                h = crelu(&mut sess.tape, h);
            }
            h = enc.conv.forward(sess, h)?;
            h = enc.attention.forward(sess, h)?;
            h = enc.dense.forward(sess, h)?;
            h = enc.norm.forward(sess, h)?;
            skips.push(h);
        }

        let bshape = sess.tape.cshape(h).to_vec();
        let mut seq = CVar { re: to_rows(&mut sess.tape, h.re, AttnAxis::Time)?, im: to_rows(&mut sess.tape, h.im, AttnAxis::Time)? };
        for gru in &self.grus {
            seq = gru.run(sess, seq)?;
        }
        let seq = self.bottleneck.forward(sess, seq)?;
        h = CVar {
            re: from_rows(&mut sess.tape, seq.re, AttnAxis::Time, &bshape)?,
            im: from_rows(&mut sess.tape, seq.im, AttnAxis::Time, &bshape)?,
        };

        for (dec, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let cat = sess.tape.cconcat(&[h, *skip], 1)?;
            let mut y = crelu(&mut sess.tape, cat);
            if dec.stride != (1, 1) {
                y = CVar { re: sess.tape.zero_stuff(y.re, dec.stride)?, im: sess.tape.zero_stuff(y.im, dec.stride)? };
            }
            y = dec.conv.forward(sess, y)?;
            h = dec.norm.forward(sess, y)?;
        }
        let a = crelu(&mut sess.tape, h);
        let mask = self.head.forward(sess, a)?;
        if self.config.bounded_mask {
            bound_mask(&mut sess.tape, mask)
        } else {
            Ok(mask)
        }
    }

    /// `Ŝ = M·X` for `x: [B, 1, T_img, F_img]`.
    pub fn enhance(&self, sess: &mut Session, x: CVar) -> Result<CVar> {
        let m = self.forward(sess, x)?;
        sess.tape.cmul(m, x)
    }

    /// Convenience forward on plain tensors with frozen parameters.
    pub fn mask_value(&self, store: &ParamStore, x: &ComplexTensor) -> Result<ComplexTensor> {
        let mut sess = Session::new(store, false);
        let v = sess.tape.complex_constant(x);
        let m = self.forward(&mut sess, v)?;
        Ok(sess.tape.complex_value(m))
    }
}

/// `m·tanh(|m|)/|m|`, magnitude below one with the phase of `m`.
fn bound_mask(tape: &mut Tape, m: CVar) -> Result<CVar> {
    let r = tape.cabs(m)?;
    let t = tape.tanh(r);
    let r_safe = tape.add_scalar(r, 1e-12);
    let f = tape.div(t, r_safe)?;
    Ok(CVar { re: tape.mul(m.re, f)?, im: tape.mul(m.im, f)? })
}
