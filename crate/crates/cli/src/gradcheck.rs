//! Finite-difference verification of every layer, attention variant and the
//! end-to-end loss.

use dccrn::attention::{AttentionSpec, AttentionVariant, TfAttentionBlock};
use dccrn::ctensor::gradcheck::{weighted_sum, GradCheck};
use dccrn::ctensor::{CVar, ComplexTensor, ParamKind, ParamStore, Session, Var};
use dccrn::model::{complex_loss, Dccrn, ModelConfig};
use dccrn::nnlayers::{crelu, ComplexBatchNorm, ComplexConv2d, ComplexGru};
use dccrn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 5;

#[derive(Debug, serde::Serialize)]
pub struct CheckRow {
    pub name: String,
    pub instances: u64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

type Forward = Box<dyn Fn(&mut Session, &[CVar]) -> Result<Var>>;

/// Builds parameters and inputs for one instance and returns the scalar functional.
type Case = fn(&mut ParamStore, &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward);

fn weighted(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
    ComplexTensor::randn(shape, rng)
}

fn conv(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let layer = ComplexConv2d::new(store, "conv", 2, 3, (3, 2), (1, 2), (1, 1), true, rng);
    let w = weighted(&[2, 3, 4, 4], rng);
    let x = ComplexTensor::randn(&[2, 2, 4, 6], rng);
    (vec![x], Box::new(move |s, v| {
        let y = layer.forward(s, v[0])?;
        weighted_sum(&mut s.tape, y, &w)
    }))
}

fn batchnorm(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let layer = ComplexBatchNorm::new(store, "bn", 2);
    let w = weighted(&[3, 2, 3, 3], rng);
    let x = ComplexTensor::randn(&[3, 2, 3, 3], rng);
    (vec![x], Box::new(move |s, v| {
        let y = layer.forward(s, v[0])?;
        weighted_sum(&mut s.tape, y, &w)
    }))
}

fn crelu_composite(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let a = ComplexConv2d::new(store, "a", 2, 3, (3, 3), (1, 1), (1, 1), true, rng);
    let b = ComplexConv2d::new(store, "b", 3, 2, (3, 3), (1, 1), (1, 1), true, rng);
    let w = weighted(&[2, 2, 4, 4], rng);
    let x = ComplexTensor::randn(&[2, 2, 4, 4], rng);
    (vec![x], Box::new(move |s, v| {
        let h = a.forward(s, v[0])?;
        let h = crelu(&mut s.tape, h);
        let y = b.forward(s, h)?;
        weighted_sum(&mut s.tape, y, &w)
    }))
}

fn gru_step(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let gru = ComplexGru::new(store, "gru", 3, 4, rng);
    let w = weighted(&[2, 4], rng);
    let x = ComplexTensor::randn(&[2, 3], rng);
    let h = ComplexTensor::randn(&[2, 4], rng).scale(0.5);
    (vec![x, h], Box::new(move |s, v| {
        let y = gru.step(s, v[0], v[1])?;
        weighted_sum(&mut s.tape, y, &w)
    }))
}

fn attention(variant: AttentionVariant, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let spec = AttentionSpec { variant, channels: 2, time_len: 3, freq_len: 4, scaled: false };
    let block = TfAttentionBlock::new(store, "attn", spec, rng);
    let w = weighted(&[2, 2, 3, 4], rng);
    let x = ComplexTensor::randn(&[2, 2, 3, 4], rng);
    (vec![x], Box::new(move |s, v| {
        let y = block.forward(s, v[0])?;
        weighted_sum(&mut s.tape, y, &w)
    }))
}

fn end_to_end(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Forward) {
    let cfg = ModelConfig { channels: vec![4, 4], gru_layers: 1, gru_hidden: 4, image_frames: 8, ..Default::default() };
    let model = Dccrn::new(store, &cfg, 8, 0).expect("valid tiny model");
    let x = ComplexTensor::randn(&[2, 1, 8, 8], rng);
    let target = ComplexTensor::randn(&[2, 1, 8, 8], rng);
    (vec![x], Box::new(move |s, v| {
        let est = model.enhance(s, v[0])?;
        let t = s.tape.complex_constant(&target);
        complex_loss(&mut s.tape, t, est, cfg.c, cfg.beta)
    }))
}

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("complex conv", conv as Case),
        ("complex batchnorm", batchnorm),
        ("crelu composite", crelu_composite),
        ("gru step", gru_step),
        ("sdab attention", |s, r| attention(AttentionVariant::Sdab, s, r)),
        ("conventional attention", |s, r| attention(AttentionVariant::Conventional, s, r)),
        ("complex attention", |s, r| attention(AttentionVariant::Complex, s, r)),
        ("dccrn + loss", end_to_end),
    ]
}

/// Perturbs every trainable parameter so checks do not run at special points
/// such as identity weights or zero biases.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        let noise = ComplexTensor::randn(p.value.shape(), rng).scale(0.3);
        let noise = match p.kind {
            ParamKind::Complex => noise,
            ParamKind::Real => ComplexTensor::from_real(noise.re().clone()),
            ParamKind::Buffer => continue,
        };
        let v = p.value.add(&noise).expect("same shape");
        store.set_value(id, v).expect("same shape");
    }
}

pub fn run(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (name, case) in cases() {
        let mut row =
            CheckRow { name: name.into(), instances: INSTANCES, checked: 0, max_rel_error: 0.0, worst: String::new(), passed: true };
        for k in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(k));
            let mut store = ParamStore::new();
            let (inputs, f) = case(&mut store, &mut rng);
            jitter(&mut store, &mut rng);
            let gc = GradCheck { seed: seed ^ k, max_per_tensor: Some(6), ..GradCheck::default() };
            let out = gc.run(&store, &inputs, |s, v| f(s, v))?;
            row.checked += out.checked;
            if out.max_rel_error >= row.max_rel_error {
                row.max_rel_error = out.max_rel_error;
                row.worst = format!("instance {k}: {}", out.worst);
            }
            row.passed &= out.passed(TOLERANCE);
        }
        rows.push(row);
    }
    Ok(rows)
}
