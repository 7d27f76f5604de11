//! One function per acceptance criterion. Each returns whether it passed and a one-line summary.
#![allow(dead_code)]

use std::path::Path;
use std::time::Instant;

use dccrn::attention::{
    AttentionBranch, AttentionSpec, AttentionVariant, AttnAxis, ComplexSa, ConventionalSa, Sdab, TfAttentionBlock,
};
use dccrn::ctensor::gradcheck::{weighted_sum, GradCheck};
use dccrn::ctensor::{CVar, ComplexTensor, ParamStore, Session, Tape};
use dccrn::datasynth::{convolve_truncated, generate_dataset, load_pair, read_manifest, reverberate, AudioPair};
use dccrn::metrics::{cepstral_distance, fwsegsnr};
use dccrn::model::{
    complex_loss, enhance_with, prepare_examples, train, train_examples, unit_mask, Config, TrainOutputs, TrainedModel,
};
use dccrn::nnlayers::{crelu, ComplexBatchNorm, ComplexConv2d, ComplexGru};
use dccrn::signal::{apply_mask, istft, stft, Spectrogram, StftConfig, WaveForm};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_SEEDS: u64 = 5;
pub const ORACLE_TOL: f64 = 1e-10;
pub const STOCHASTIC_TOL: f64 = 1e-9;
pub const ROUND_TRIP_TOL: f64 = 1e-6;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

// ---------------------------------------------------------------- 1

type Layer = Box<dyn Fn(&mut ParamStore, &mut ChaCha8Rng) -> (Vec<ComplexTensor>, Box<dyn Fn(&mut Session, &[CVar]) -> dccrn::Result<CVar>>)>;

/// Builders for every layer in the gradient suite: name, inputs and forward closure.
pub fn gradient_layers() -> Vec<(&'static str, Layer)> {
    let attn = |variant: AttentionVariant| -> Layer {
        Box::new(move |store, r| {
            let spec = AttentionSpec { variant, channels: 2, time_len: 3, freq_len: 4, scaled: false };
            let block = TfAttentionBlock::new(store, "attn", spec, r);
            let x = ComplexTensor::randn(&[2, 2, 3, 4], r);
            (vec![x], Box::new(move |s: &mut Session, v: &[CVar]| block.forward(s, v[0])))
        })
    };
    vec![
        (
            "complex conv",
            Box::new(|store, r| {
                let conv = ComplexConv2d::new(store, "conv", 2, 3, (3, 2), (1, 2), (1, 1), true, r);
                let x = ComplexTensor::randn(&[2, 2, 4, 6], r);
                (vec![x], Box::new(move |s: &mut Session, v: &[CVar]| conv.forward(s, v[0])))
            }),
        ),
        (
            "complex batchnorm",
            Box::new(|store, r| {
                let bn = ComplexBatchNorm::new(store, "bn", 2);
                let x = ComplexTensor::randn(&[3, 2, 3, 3], r);
                (vec![x], Box::new(move |s: &mut Session, v: &[CVar]| bn.forward(s, v[0])))
            }),
        ),
        (
            "crelu composite",
            Box::new(|store, r| {
                let a = ComplexConv2d::new(store, "a", 2, 3, (3, 3), (1, 1), (1, 1), true, r);
                let b = ComplexConv2d::new(store, "b", 3, 2, (3, 3), (1, 1), (1, 1), true, r);
                let x = ComplexTensor::randn(&[2, 2, 4, 4], r);
                (
                    vec![x],
                    Box::new(move |s: &mut Session, v: &[CVar]| {
                        let h = a.forward(s, v[0])?;
                        let h = crelu(&mut s.tape, h);
                        b.forward(s, h)
                    }),
                )
            }),
        ),
        (
            "gru step",
            Box::new(|store, r| {
                let gru = ComplexGru::new(store, "gru", 3, 4, r);
                let x = ComplexTensor::randn(&[2, 3], r);
                let h = ComplexTensor::randn(&[2, 4], r).scale(0.5);
                (vec![x, h], Box::new(move |s: &mut Session, v: &[CVar]| gru.step(s, v[0], v[1])))
            }),
        ),
        ("sdab attention", attn(AttentionVariant::Sdab)),
        ("conventional attention", attn(AttentionVariant::Conventional)),
        ("complex attention", attn(AttentionVariant::Complex)),
    ]
}

/// Worst relative error of one layer over all seeds.
pub fn gradient_layer(layer: &Layer) -> (f64, usize, String) {
    let mut worst = (0.0, 0, String::new());
    for seed in 0..GRAD_SEEDS {
        let mut r = rng(1000 + seed);
        let mut store = ParamStore::new();
        let (inputs, f) = layer(&mut store, &mut r);
        randomize(&mut store, 2000 + seed, 0.5);
        let mut probe = Session::new(&store, true);
        let leaves: Vec<CVar> = inputs.iter().map(|x| probe.tape.complex_constant(x)).collect();
        let out_shape = {
            let y = f(&mut probe, &leaves).unwrap();
            probe.tape.cshape(y).to_vec()
        };
        let weights = ComplexTensor::randn(&out_shape, &mut r);
        let gc = GradCheck { seed, ..GradCheck::default() };
        let outcome = gc
            .run(&store, &inputs, |s, v| {
                let y = f(s, v)?;
                weighted_sum(&mut s.tape, y, &weights)
            })
            .unwrap();
        worst.1 += outcome.checked;
        if outcome.max_rel_error >= worst.0 {
            worst.0 = outcome.max_rel_error;
            worst.2 = format!("seed {seed} {}", outcome.worst);
        }
    }
    worst
}

pub fn criterion_1() -> Check {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, layer) in gradient_layers() {
        let (err, checked, _) = gradient_layer(&layer);
        passed &= err <= GRAD_TOL && checked > 0;
        parts.push(format!("{name} {err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 60.0;
    Check::new(passed, format!("max rel error per layer over {GRAD_SEEDS} seeds: {}; {secs:.1} s", parts.join(", ")))
}

// ---------------------------------------------------------------- 2

fn value(store: &ParamStore, id: dccrn::ctensor::ParamId) -> ComplexTensor {
    store.value(id).clone()
}

fn run_branch(store: &ParamStore, branch: &AttentionBranch, x: &ComplexTensor) -> (ComplexTensor, Vec<ndarray::ArrayD<f64>>) {
    let mut s = Session::new(store, false);
    let v = s.tape.complex_constant(x);
    let out = branch.forward(&mut s, v).unwrap();
    (s.tape.complex_value(out.output), out.maps.iter().map(|&m| s.tape.value(m).clone()).collect())
}

/// Oracle output of one branch from its parameter values.
pub fn branch_oracle(store: &ParamStore, branch: &AttentionBranch, x: &ComplexTensor) -> (ComplexTensor, Vec<Vec<f64>>) {
    match branch {
        AttentionBranch::Sdab(m) => {
            let parts = m.parts.map(|(w, b)| (value(store, w), value(store, b)));
            (naive_sdab(x, m.axis == AttnAxis::Time, &parts), Vec::new())
        }
        AttentionBranch::Conventional(m) => {
            let proj = m.proj.each_ref().map(|p| p.each_ref().map(|c| (value(store, c.weight), value(store, c.bias.unwrap()))));
            naive_conventional(x, m.axis == AttnAxis::Time, &proj, m.scaled)
        }
        AttentionBranch::Complex(m) => {
            let proj = [&m.query, &m.key, &m.value].map(|c| (value(store, c.weight), value(store, c.bias.unwrap())));
            naive_complex_sa(x, m.axis == AttnAxis::Time, &proj, m.scaled)
        }
    }
}

fn attention_branches(seed: u64, channels: usize, t: usize, f: usize) -> (ParamStore, Vec<AttentionBranch>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (i, axis) in [AttnAxis::Time, AttnAxis::Frequency].into_iter().enumerate() {
        let len = if axis == AttnAxis::Time { t } else { f };
        out.push(AttentionBranch::Sdab(Sdab::new(&mut store, &format!("s{i}"), axis, len)));
        for scaled in [false, true] {
            out.push(AttentionBranch::Conventional(ConventionalSa::new(
                &mut store,
                &format!("c{i}{scaled}"),
                axis,
                channels,
                scaled,
                &mut r,
            )));
            out.push(AttentionBranch::Complex(ComplexSa::new(&mut store, &format!("x{i}{scaled}"), axis, channels, scaled, &mut r)));
        }
    }
    randomize(&mut store, seed + 1, 0.4);
    (store, out)
}

pub fn conv_oracle_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, stride, pad) in [((3, 3), (1, 1), (1, 1)), ((3, 2), (1, 2), (1, 0)), ((2, 3), (2, 1), (0, 2))] {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 3, 2, k, stride, pad, true, &mut r);
        randomize(&mut store, seed + 7, 1.0);
        let x = ComplexTensor::randn(&[2, 3, 5, 6], &mut r);
        let mut s = Session::new(&store, false);
        let v = s.tape.complex_constant(&x);
        let y = conv.forward(&mut s, v).unwrap();
        let got = s.tape.complex_value(y);
        let want = naive_conv2d(&x, store.value(conv.weight), Some(store.value(conv.bias.unwrap())), stride, pad);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    worst
}

pub fn matmul_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..7), r.random_range(1..7), r.random_range(1..7));
    let a = ComplexTensor::randn(&[m, k], &mut r);
    let b = ComplexTensor::randn(&[k, n], &mut r);
    let mut t = Tape::new();
    let (av, bv) = (t.complex_constant(&a), t.complex_constant(&b));
    let y = t.cmatmul(av, bv).unwrap();
    max_abs_diff(&t.complex_value(y), &naive_matmul(&a, &b))
}

pub fn mask_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, f) = (r.random_range(1..9), r.random_range(1..9));
    let m = randn(&[t, f], seed + 1).to_complex_vec();
    let x = randn(&[t, f], seed + 2).to_complex_vec();
    let got = apply_mask(
        &Array2::from_shape_vec((t, f), m.clone()).unwrap(),
        &Array2::from_shape_vec((t, f), x.clone()).unwrap(),
    )
    .unwrap();
    got.iter()
        .zip(m.iter().zip(&x))
        .map(|(g, (a, b))| {
            let want = Complex64::new(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re);
            (g - want).norm()
        })
        .fold(0.0, f64::max)
}

pub fn reverberate_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for h_len in [1, 17, 64, 65, 300] {
        let s: Vec<f64> = (0..500).map(|_| r.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..h_len).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = reverberate(&WaveForm::new(s.clone(), 8000), &WaveForm::new(h.clone(), 8000), None).unwrap();
        let want = naive_convolve(&s, &h);
        assert_eq!(got.len(), s.len());
        worst = got.samples.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        let direct = convolve_truncated(&s, &h);
        worst = direct.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    worst
}

/// Largest deviation of any branch, and of full blocks, from the oracles.
pub fn attention_oracle_error(seed: u64) -> f64 {
    let (c, t, f) = (2, 3, 5);
    let x = randn(&[2, c, t, f], seed + 11);
    let (store, branches) = attention_branches(seed, c, t, f);
    let mut worst: f64 = 0.0;
    for b in &branches {
        let (got, got_maps) = run_branch(&store, b, &x);
        let (want, want_maps) = branch_oracle(&store, b, &x);
        worst = worst.max(max_abs_diff(&got, &want));
        let flat: Vec<f64> = got_maps.iter().flat_map(|m| m.iter().copied()).collect();
        let want_flat: Vec<f64> = want_maps.iter().flatten().copied().collect();
        assert_eq!(flat.len(), want_flat.len());
        worst = flat.iter().zip(&want_flat).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    for variant in AttentionVariant::ALL {
        let mut store = ParamStore::new();
        let spec = AttentionSpec { variant, channels: c, time_len: t, freq_len: f, scaled: false };
        let block = TfAttentionBlock::new(&mut store, "b", spec, &mut rng(seed + 3));
        randomize(&mut store, seed + 4, 0.4);
        let mut s = Session::new(&store, false);
        let v = s.tape.complex_constant(&x);
        let y = block.forward(&mut s, v).unwrap();
        let got = s.tape.complex_value(y);
        let want = match &block.branches {
            None => x.clone(),
            Some((tb, fb)) => {
                let (a, _) = branch_oracle(&store, tb, &x);
                let (b, _) = branch_oracle(&store, fb, &x);
                let (xv, av, bv) = (x.to_complex_vec(), a.to_complex_vec(), b.to_complex_vec());
                let merged: Vec<Complex64> = (0..xv.len()).map(|i| xv[i] + 0.5 * (av[i] + bv[i])).collect();
                ComplexTensor::from_complex(x.shape(), &merged).unwrap()
            }
        };
        worst = worst.max(max_abs_diff(&got, &want));
    }
    worst
}

pub fn criterion_2() -> Check {
    let seeds = 0..5u64;
    let errs = [
        ("conv", seeds.clone().map(conv_oracle_error).fold(0.0, f64::max)),
        ("matmul", seeds.clone().map(matmul_oracle_error).fold(0.0, f64::max)),
        ("mask", seeds.clone().map(mask_oracle_error).fold(0.0, f64::max)),
        ("reverberate", seeds.clone().map(reverberate_oracle_error).fold(0.0, f64::max)),
        ("attention", seeds.map(attention_oracle_error).fold(0.0, f64::max)),
    ];
    let passed = errs.iter().all(|(_, e)| *e <= ORACLE_TOL);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Check::new(passed, format!("max abs deviation from scalar oracles: {detail}"))
}

// ---------------------------------------------------------------- 3

/// Largest `|Corr(Q,K) − Corr(K,Q)^H|` over seeded random matrices.
pub fn conjugate_symmetry_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (lq, lk, d) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
    let q = ComplexTensor::randn(&[lq, d], &mut r);
    let k = ComplexTensor::randn(&[lk, d], &mut r);
    let mut t = Tape::new();
    let (qv, kv) = (t.complex_constant(&q), t.complex_constant(&k));
    let qk = t.hermitian_correlation(qv, kv).unwrap();
    let kq = t.hermitian_correlation(kv, qv).unwrap();
    let kq_h = t.hermitian_transpose(kq).unwrap();
    max_abs_diff(&t.complex_value(qk), &t.complex_value(kq_h))
}

pub fn worked_correlation() -> Complex64 {
    let q = ComplexTensor::from_complex(&[1, 1], &[Complex64::new(1.0, 1.0)]).unwrap();
    let k = ComplexTensor::from_complex(&[1, 1], &[Complex64::new(1.0, -1.0)]).unwrap();
    let mut t = Tape::new();
    let (qv, kv) = (t.complex_constant(&q), t.complex_constant(&k));
    let c = t.hermitian_correlation(qv, kv).unwrap();
    t.complex_value(c).get(&[0, 0])
}

pub fn criterion_3() -> Check {
    let sym = (0..50).map(conjugate_symmetry_error).fold(0.0, f64::max);
    let z = worked_correlation();
    let exact = z == Complex64::new(0.0, 2.0);
    Check::new(
        exact && sym <= ORACLE_TOL,
        format!("conjugate symmetry max error {sym:.1e} over 50 pairs; (1+1j)·conj(1−1j) = {z}"),
    )
}

// ---------------------------------------------------------------- 4

/// Largest `|Σ_row W − 1|` over one random instance of both attention mechanisms.
pub fn row_sum_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, t, f) = (r.random_range(1..4), r.random_range(1..7), r.random_range(1..7));
    let scale = r.random_range(0.1..3.0);
    let mut store = ParamStore::new();
    let mut branches = Vec::new();
    for axis in [AttnAxis::Time, AttnAxis::Frequency] {
        branches.push(AttentionBranch::Conventional(ConventionalSa::new(&mut store, &format!("c{axis:?}"), axis, c, false, &mut r)));
        branches.push(AttentionBranch::Complex(ComplexSa::new(&mut store, &format!("x{axis:?}"), axis, c, false, &mut r)));
    }
    randomize(&mut store, seed + 1, scale);
    let x = ComplexTensor::randn(&[2, c, t, f], &mut r).scale(scale);
    let mut worst: f64 = 0.0;
    for b in &branches {
        let (_, maps) = run_branch(&store, b, &x);
        for m in maps {
            let l = *m.shape().last().unwrap();
            for row in m.as_slice().unwrap().chunks(l) {
                assert!(row.iter().all(|&w| w >= 0.0));
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}

pub fn criterion_4() -> Check {
    let worst = (0..100).map(row_sum_error).fold(0.0, f64::max);
    Check::new(worst <= STOCHASTIC_TOL, format!("max |row sum − 1| = {worst:.1e} over 100 instances, both SA variants"))
}

// ---------------------------------------------------------------- 5

pub fn parity_counts(channels: usize) -> (usize, usize) {
    let count = |variant| {
        let mut store = ParamStore::new();
        let spec = AttentionSpec { variant, channels, time_len: 7, freq_len: 9, scaled: false };
        TfAttentionBlock::new(&mut store, "a", spec, &mut rng(0));
        store.trainable_count()
    };
    (count(AttentionVariant::Conventional), count(AttentionVariant::Complex))
}

pub fn criterion_5() -> Check {
    let widths = [1, 2, 4, 8, 16, 32];
    let counts: Vec<(usize, usize, usize)> = widths.iter().map(|&c| (c, parity_counts(c).0, parity_counts(c).1)).collect();
    let passed = counts.iter().all(|&(_, a, b)| a == b && a > 0);
    let detail = counts.iter().map(|(c, a, b)| format!("C={c}: {a}/{b}")).collect::<Vec<_>>().join(", ");
    Check::new(passed, format!("conventional/complex trainable scalars per TF block: {detail}"))
}

// ---------------------------------------------------------------- 6

pub fn random_signal(seed: u64, n: usize, rate: u32) -> WaveForm {
    let mut r = rng(seed);
    WaveForm::new((0..n).map(|_| r.random_range(-1.0..1.0)).collect(), rate)
}

/// Relative RMS error of the round trip on interior samples.
pub fn round_trip_error(seed: u64, cfg: &StftConfig) -> f64 {
    let x = random_signal(seed, cfg.sample_rate as usize, cfg.sample_rate);
    let y = istft(&stft(&x, cfg).unwrap()).unwrap();
    assert_eq!(y.len(), x.len());
    let lo = cfg.frame_len;
    let hi = x.len() - cfg.frame_len;
    let diff: Vec<f64> = (lo..hi).map(|i| y.samples[i] - x.samples[i]).collect();
    rms(&diff) / rms(&x.samples[lo..hi])
}

/// The part of `x` carried by the Nyquist bin, which spectral images drop.
pub fn nyquist_component(x: &WaveForm, cfg: &StftConfig) -> WaveForm {
    let mut s = stft(x, cfg).unwrap();
    let half = cfg.fft_size / 2;
    for ((_, k), v) in s.data.indexed_iter_mut() {
        if k != half {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    istft(&Spectrogram { data: s.data, config: s.config, signal_len: s.signal_len }).unwrap()
}

/// `(rms(enhanced + nyquist − x) / rms(x), rms(nyquist) / rms(x))` for an identity mask.
pub fn identity_enhance_error(seed: u64, cfg: &Config) -> (f64, f64) {
    let x = random_signal(seed, cfg.stft.sample_rate as usize, cfg.stft.sample_rate);
    let y = enhance_with(cfg, &x, |m| Ok(unit_mask(m))).unwrap();
    assert_eq!(y.len(), x.len());
    let nyq = nyquist_component(&x, &cfg.stft);
    let diff: Vec<f64> = (0..x.len()).map(|i| y.samples[i] + nyq.samples[i] - x.samples[i]).collect();
    (rms(&diff) / rms(&x.samples), rms(&nyq.samples) / rms(&x.samples))
}

pub fn criterion_6() -> Check {
    let cfg = StftConfig::default();
    let rt = (0..20).map(|s| round_trip_error(s, &cfg)).fold(0.0, f64::max);
    let mut model_cfg = Config::default();
    model_cfg.model.image_frames = 32;
    let (mut enh, mut nyq) = (0.0f64, 0.0f64);
    for s in 0..20 {
        let (e, n) = identity_enhance_error(100 + s, &model_cfg);
        enh = enh.max(e);
        nyq = nyq.max(n);
    }
    Check::new(
        rt <= ROUND_TRIP_TOL && enh <= ROUND_TRIP_TOL,
        format!(
            "round trip rel RMS {rt:.1e} (20 signals); identity-mask enhance rel RMS {enh:.1e} after the Nyquist term, \
             which itself is {nyq:.3} rel RMS of white noise"
        ),
    )
}

// ---------------------------------------------------------------- 7

pub fn loss_of(s: &ComplexTensor, e: &ComplexTensor, c: f64, beta: f64) -> f64 {
    let mut t = Tape::new();
    let (a, b) = (t.complex_constant(s), t.complex_constant(e));
    let l = complex_loss(&mut t, a, b, c, beta).unwrap();
    t.scalar(l)
}

/// Pure magnitude and pure complex terms by direct summation.
pub fn loss_terms(s: &ComplexTensor, e: &ComplexTensor, c: f64) -> (f64, f64) {
    let (mut mag, mut cplx) = (0.0, 0.0);
    for (a, b) in s.to_complex_vec().iter().zip(e.to_complex_vec()) {
        let (ma, mb) = (a.norm(), b.norm());
        mag += (ma.powf(c) - mb.powf(c)).powi(2);
        let ca = Complex64::from_polar(ma.powf(c), a.arg());
        let cb = Complex64::from_polar(mb.powf(c), b.arg());
        cplx += (ca - cb).norm_sqr();
    }
    (mag, cplx)
}

pub fn criterion_7() -> Check {
    let mut worst_self: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for seed in 0..10 {
        let s = randn(&[2, 1, 4, 5], seed);
        let e = randn(&[2, 1, 4, 5], seed + 100);
        worst_self = worst_self.max(loss_of(&s, &s, 0.3, 0.3).abs());
        let (mag, cplx) = loss_terms(&s, &e, 0.3);
        worst_rel = worst_rel.max((loss_of(&s, &e, 0.3, 0.0) - mag).abs() / mag);
        worst_rel = worst_rel.max((loss_of(&s, &e, 0.3, 1.0) - cplx).abs() / cplx);
    }
    let one = |z: Complex64| ComplexTensor::from_complex(&[1, 1], &[z]).unwrap();
    let a = loss_of(&one(Complex64::new(1.0, 0.0)), &one(Complex64::new(0.0, 0.0)), 0.3, 0.3);
    let b = loss_of(&one(Complex64::new(1.0, 0.0)), &one(Complex64::new(0.0, 1.0)), 1.0, 0.3);
    Check::new(
        worst_self == 0.0 && worst_rel <= 1e-12 && a == 1.0 && b == 0.6,
        format!("L(S,S) max {worst_self:e}; β=0/β=1 vs direct terms rel {worst_rel:.1e}; worked examples {a} and {b}"),
    )
}

// ---------------------------------------------------------------- 8

pub const OVERFIT_PAIRS: usize = 10;
pub const OVERFIT_STEPS: usize = 500;

pub fn overfit_examples(cfg: &Config) -> Vec<dccrn::model::Example> {
    prepare_examples(cfg, &synth_pairs(&cfg.data, cfg.train.seed, 0..OVERFIT_PAIRS)).unwrap()
}

/// Largest relative deviation of any step loss from the first one with a zero learning rate.
pub fn zero_lr_spread(cfg: &Config, steps: usize) -> f64 {
    let mut cfg = cfg.clone();
    cfg.train.learning_rate = 0.0;
    cfg.train.max_steps = Some(steps);
    cfg.train.epochs = steps;
    let examples = overfit_examples(&cfg);
    cfg.train.batch_size = examples.len();
    let out = train_examples(&cfg, &examples, &TrainOutputs::default()).unwrap();
    let l0 = out.losses[0].loss;
    out.losses.iter().map(|l| (l.loss - l0).abs() / l0.abs()).fold(0.0, f64::max)
}

pub fn criterion_8() -> Check {
    let mut cfg = tiny_config();
    cfg.train.max_steps = Some(OVERFIT_STEPS);
    let examples = overfit_examples(&cfg);
    cfg.train.epochs = OVERFIT_STEPS.div_ceil(examples.len().div_ceil(cfg.train.batch_size));
    let start = Instant::now();
    let out = train_examples(&cfg, &examples, &TrainOutputs::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let means = out.epoch_means();
    let ratio = means.last().unwrap() / means[0];
    let spread = zero_lr_spread(&tiny_config(), 5);
    Check::new(
        ratio <= 0.1 && out.losses.len() == OVERFIT_STEPS && secs <= 300.0 && spread <= 1e-12,
        format!(
            "{} steps on {} images: epoch-mean loss {:.4e} → {:.4e} (ratio {ratio:.3}) in {secs:.0} s; lr=0 rel spread {spread:.1e}",
            out.losses.len(),
            examples.len(),
            means[0],
            means.last().unwrap()
        ),
    )
}

// ---------------------------------------------------------------- 9

pub const TREND_TRAIN_PAIRS: usize = 200;
pub const TREND_TEST_PAIRS: usize = 20;

pub struct TrendRow {
    pub variant: AttentionVariant,
    pub fwsegsnr: f64,
    pub cd: f64,
}

fn mean_metrics(pairs: &[(WaveForm, WaveForm)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let fw = pairs.iter().map(|(r, t)| fwsegsnr(r, t).unwrap()).sum::<f64>() / n;
    let cd = pairs.iter().map(|(r, t)| cepstral_distance(r, t).unwrap()).sum::<f64>() / n;
    (fw, cd)
}

fn load_all(manifest: &Path, rate: u32) -> Vec<AudioPair> {
    let base = manifest.parent().unwrap();
    read_manifest(manifest).unwrap().iter().map(|r| load_pair(base, r, Some(rate)).unwrap()).collect()
}

/// Unprocessed baseline and one row per trained variant.
pub fn trend(dir: &Path) -> ((f64, f64), Vec<TrendRow>) {
    let base = tiny_config();
    let train_manifest = generate_dataset(&base.data, TREND_TRAIN_PAIRS, base.train.seed, &dir.join("train")).unwrap();
    let test_manifest = generate_dataset(&base.data, TREND_TEST_PAIRS, base.train.seed + 1, &dir.join("test")).unwrap();
    let test = load_all(&test_manifest, base.stft.sample_rate);
    let unprocessed: Vec<(WaveForm, WaveForm)> = test.iter().map(|p| (p.clean.clone(), p.reverb.clone())).collect();
    let baseline = mean_metrics(&unprocessed);
    let mut rows = Vec::new();
    for variant in AttentionVariant::ALL {
        let mut cfg = base.clone();
        cfg.model.attention = variant;
        let out = train(&cfg, &train_manifest, &TrainOutputs::default()).unwrap();
        let enhanced: Vec<(WaveForm, WaveForm)> =
            test.iter().map(|p| (p.clean.clone(), out.trained.enhance(&p.reverb).unwrap())).collect();
        let (fw, cd) = mean_metrics(&enhanced);
        rows.push(TrendRow { variant, fwsegsnr: fw, cd });
    }
    (baseline, rows)
}

pub fn criterion_9() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let ((fw0, cd0), rows) = trend(dir.path());
    let passed = rows.iter().all(|r| r.fwsegsnr > fw0 && r.cd < cd0);
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.2} dB / {:.3} dB", r.variant, r.fwsegsnr, r.cd))
        .collect::<Vec<_>>()
        .join(", ");
    Check::new(
        passed,
        format!(
            "FWSegSNR / CD on {TREND_TEST_PAIRS} held-out pairs: unprocessed {fw0:.2} dB / {cd0:.3} dB; {detail} ({:.0} s)",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// `(datasets equal, loss curves equal, checkpoint directories equal)` across two runs.
pub fn determinism(root: &Path, pairs: usize, steps: usize) -> (bool, bool, bool) {
    let mut cfg = tiny_config();
    cfg.train.max_steps = Some(steps);
    cfg.train.epochs = steps;
    let run = |k: usize| {
        let data = root.join(format!("data{k}"));
        let manifest = generate_dataset(&cfg.data, pairs, 42, &data).unwrap();
        let runs = root.join(format!("run{k}"));
        let out = train(&cfg, &manifest, &TrainOutputs { dir: Some(runs.clone()) }).unwrap();
        let losses: Vec<u64> = out.losses.iter().map(|l| l.loss.to_bits()).collect();
        (dir_bytes(&data), losses, dir_bytes(&runs))
    };
    let (a, b) = (run(0), run(1));
    (a.0 == b.0 && !a.0.is_empty(), a.1 == b.1 && !a.1.is_empty(), a.2 == b.2 && !a.2.is_empty())
}

pub fn criterion_10() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let (data, losses, ckpts) = determinism(dir.path(), 4, 6);
    let reload = {
        let ckpt = dir.path().join("run0").join(dccrn::model::FINAL_CHECKPOINT);
        let a = TrainedModel::load(&ckpt).unwrap();
        let b = TrainedModel::load(&ckpt).unwrap();
        let x = random_signal(9, 4000, a.config.stft.sample_rate);
        let (ya, yb) = (a.enhance(&x).unwrap(), b.enhance(&x).unwrap());
        ya.samples.iter().zip(&yb.samples).all(|(p, q)| p.to_bits() == q.to_bits())
    };
    Check::new(
        data && losses && ckpts && reload,
        format!("datasets byte-identical: {data}; loss curves bit-identical: {losses}; checkpoints byte-identical: {ckpts}; reloaded outputs bit-identical: {reload}"),
    )
}

pub fn all() -> Vec<(usize, &'static str, fn() -> Check)> {
    vec![
        (1, "gradient suite", criterion_1 as fn() -> Check),
        (2, "oracle equivalence", criterion_2),
        (3, "hermitian correlation algebra", criterion_3),
        (4, "attention-map stochasticity", criterion_4),
        (5, "parameter parity", criterion_5),
        (6, "STFT round trip and identity enhance", criterion_6),
        (7, "loss contract", criterion_7),
        (8, "overfit smoke test", criterion_8),
        (9, "desk-scale trend", criterion_9),
        (10, "determinism", criterion_10),
    ]
}
