//! Shared fixtures and naive scalar-loop oracles for the integration tests.
#![allow(dead_code)]

pub mod criteria;

use dccrn::ctensor::{ComplexTensor, ParamKind, ParamStore};
use dccrn::datasynth::{pair_seed, synth_pair, AudioPair, DatasetConfig};
use dccrn::model::Config;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> ComplexTensor {
    ComplexTensor::randn(shape, &mut rng(seed))
}

/// Replaces every trainable parameter with Gaussian values (real kinds keep a zero imaginary part).
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        let shape = p.value.shape().to_vec();
        let v = match p.kind {
            ParamKind::Complex => ComplexTensor::randn(&shape, &mut r).scale(scale),
            ParamKind::Real => ComplexTensor::from_real(ComplexTensor::randn(&shape, &mut r).re().clone()).scale(scale),
            ParamKind::Buffer => continue,
        };
        store.set_value(id, v).unwrap();
    }
}

pub fn max_abs_diff(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.to_complex_vec().iter().zip(b.to_complex_vec()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Flat row-major index into a 4-D shape.
pub fn at(shape: &[usize], i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * shape[1] + j) * shape[2] + k) * shape[3] + l
}

/// Direct complex cross-correlation with zero padding.
pub fn naive_conv2d(
    x: &ComplexTensor,
    w: &ComplexTensor,
    bias: Option<&ComplexTensor>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> ComplexTensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, cin, t, f) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kt, kf) = (ws[0], ws[2], ws[3]);
    let to = (t + 2 * pad.0 - kt) / stride.0 + 1;
    let fo = (f + 2 * pad.1 - kf) / stride.1 + 1;
    let xv = x.to_complex_vec();
    let wv = w.to_complex_vec();
    let bv = bias.map(|b| b.to_complex_vec());
    let os = [b, cout, to, fo];
    let mut out = vec![Complex64::new(0.0, 0.0); b * cout * to * fo];
    for n in 0..b {
        for o in 0..cout {
            for i in 0..to {
                for j in 0..fo {
                    let mut acc = bv.as_ref().map_or(Complex64::new(0.0, 0.0), |b| b[o]);
                    for c in 0..cin {
                        for u in 0..kt {
                            for v in 0..kf {
                                let ti = (i * stride.0 + u) as isize - pad.0 as isize;
                                let fi = (j * stride.1 + v) as isize - pad.1 as isize;
                                if ti < 0 || fi < 0 || ti >= t as isize || fi >= f as isize {
                                    continue;
                                }
                                acc += wv[at(ws, o, c, u, v)] * xv[at(xs, n, c, ti as usize, fi as usize)];
                            }
                        }
                    }
                    out[at(&os, n, o, i, j)] = acc;
                }
            }
        }
    }
    ComplexTensor::from_complex(&os, &out).unwrap()
}

pub fn naive_matmul(a: &ComplexTensor, b: &ComplexTensor) -> ComplexTensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (av, bv) = (a.to_complex_vec(), b.to_complex_vec());
    let mut out = vec![Complex64::new(0.0, 0.0); m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += av[i * k + p] * bv[p * n + j];
            }
        }
    }
    ComplexTensor::from_complex(&[m, n], &out).unwrap()
}

/// Applies `1×1` channel mixing `w: [C, C, 1, 1]` plus bias at every position, to complex values.
fn mix(x: &[Complex64], shape: &[usize], w: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let c = shape[1];
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    for n in 0..shape[0] {
        for o in 0..c {
            for t in 0..shape[2] {
                for f in 0..shape[3] {
                    let mut acc = b[o];
                    for i in 0..c {
                        acc += w[o * c + i] * x[at(shape, n, i, t, f)];
                    }
                    out[at(shape, n, o, t, f)] = acc;
                }
            }
        }
    }
    out
}

/// `(t, f)` of attention position `l` and cross position `o`.
fn join(time: bool, l: usize, o: usize) -> (usize, usize) {
    if time {
        (l, o)
    } else {
        (o, l)
    }
}

fn softmax_rows(corr: &mut [f64], len: usize) {
    for row in corr.chunks_mut(len) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Weighted sum over the attention axis: `out[.., l, o] = Σ_l' w[l, l'] v[.., l', o]`.
fn attend(v: &[Complex64], shape: &[usize], time: bool, w: &[f64], n: usize) -> Vec<Complex64> {
    let len = if time { shape[2] } else { shape[3] };
    let other = if time { shape[3] } else { shape[2] };
    let mut out = vec![Complex64::new(0.0, 0.0); shape[1] * shape[2] * shape[3]];
    for c in 0..shape[1] {
        for l in 0..len {
            for o in 0..other {
                let mut acc = Complex64::new(0.0, 0.0);
                for lp in 0..len {
                    let (t, f) = join(time, lp, o);
                    acc += w[l * len + lp] * v[at(shape, n, c, t, f)];
                }
                let (t, f) = join(time, l, o);
                out[(c * shape[2] + t) * shape[3] + f] = acc;
            }
        }
    }
    out
}

/// Maps per batch item (row-major `[L, L]`) and branch output for the conventional variant.
pub fn naive_conventional(
    x: &ComplexTensor,
    time: bool,
    proj: &[[(ComplexTensor, ComplexTensor); 3]; 2],
    scaled: bool,
) -> (ComplexTensor, Vec<Vec<f64>>) {
    let shape = x.shape().to_vec();
    let xv = x.to_complex_vec();
    let (len, other) = if time { (shape[2], shape[3]) } else { (shape[3], shape[2]) };
    let mut out = vec![Complex64::new(0.0, 0.0); xv.len()];
    let mut maps = Vec::new();
    for (part, p) in proj.iter().enumerate() {
        let xp: Vec<Complex64> =
            xv.iter().map(|z| Complex64::new(if part == 0 { z.re } else { z.im }, 0.0)).collect();
        let qkv: Vec<Vec<Complex64>> =
            p.iter().map(|(w, b)| mix(&xp, &shape, &w.to_complex_vec(), &b.to_complex_vec())).collect();
        for n in 0..shape[0] {
            let mut corr = vec![0.0; len * len];
            for l in 0..len {
                for lp in 0..len {
                    let mut s = 0.0;
                    for c in 0..shape[1] {
                        for o in 0..other {
                            let (t1, f1) = join(time, l, o);
                            let (t2, f2) = join(time, lp, o);
                            s += qkv[0][at(&shape, n, c, t1, f1)].re * qkv[1][at(&shape, n, c, t2, f2)].re;
                        }
                    }
                    corr[l * len + lp] = if scaled { s / ((shape[1] * other) as f64).sqrt() } else { s };
                }
            }
            softmax_rows(&mut corr, len);
            let a = attend(&qkv[2], &shape, time, &corr, n);
            let base = n * shape[1] * shape[2] * shape[3];
            for (i, z) in a.iter().enumerate() {
                if part == 0 {
                    out[base + i].re = z.re;
                } else {
                    out[base + i].im = z.re;
                }
            }
            maps.push(corr);
        }
    }
    (ComplexTensor::from_complex(&shape, &out).unwrap(), maps)
}

/// Branch output and maps for the fully complex variant; `proj` is `[(w, b)]` for q, k, v.
pub fn naive_complex_sa(
    x: &ComplexTensor,
    time: bool,
    proj: &[(ComplexTensor, ComplexTensor); 3],
    scaled: bool,
) -> (ComplexTensor, Vec<Vec<f64>>) {
    let shape = x.shape().to_vec();
    let xv = x.to_complex_vec();
    let (len, other) = if time { (shape[2], shape[3]) } else { (shape[3], shape[2]) };
    let qkv: Vec<Vec<Complex64>> =
        proj.iter().map(|(w, b)| mix(&xv, &shape, &w.to_complex_vec(), &b.to_complex_vec())).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); xv.len()];
    let mut maps = Vec::new();
    for n in 0..shape[0] {
        let mut corr = vec![0.0; len * len];
        for l in 0..len {
            for lp in 0..len {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..shape[1] {
                    for o in 0..other {
                        let (t1, f1) = join(time, l, o);
                        let (t2, f2) = join(time, lp, o);
                        s += qkv[0][at(&shape, n, c, t1, f1)] * qkv[1][at(&shape, n, c, t2, f2)].conj();
                    }
                }
                let m = s.norm();
                corr[l * len + lp] = if scaled { m / ((shape[1] * other) as f64).sqrt() } else { m };
            }
        }
        softmax_rows(&mut corr, len);
        let a = attend(&qkv[2], &shape, time, &corr, n);
        let base = n * shape[1] * shape[2] * shape[3];
        out[base..base + a.len()].copy_from_slice(&a);
        maps.push(corr);
    }
    (ComplexTensor::from_complex(&shape, &out).unwrap(), maps)
}

/// `y_p[.., l, o] = Σ_l' W_p[l, l'] x_p[.., l', o] + b_p[l]` for each part `p`.
pub fn naive_sdab(x: &ComplexTensor, time: bool, parts: &[(ComplexTensor, ComplexTensor); 2]) -> ComplexTensor {
    let shape = x.shape().to_vec();
    let xv = x.to_complex_vec();
    let (len, other) = if time { (shape[2], shape[3]) } else { (shape[3], shape[2]) };
    let mut out = vec![Complex64::new(0.0, 0.0); xv.len()];
    for (part, (w, b)) in parts.iter().enumerate() {
        let (w, b) = (w.re(), b.re());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for l in 0..len {
                    for o in 0..other {
                        let mut acc = b[[l]];
                        for lp in 0..len {
                            let (t, f) = join(time, lp, o);
                            let z = xv[at(&shape, n, c, t, f)];
                            acc += w[[l, lp]] * if part == 0 { z.re } else { z.im };
                        }
                        let (t, f) = join(time, l, o);
                        let slot = &mut out[at(&shape, n, c, t, f)];
                        if part == 0 {
                            slot.re = acc;
                        } else {
                            slot.im = acc;
                        }
                    }
                }
            }
        }
    }
    ComplexTensor::from_complex(&shape, &out).unwrap()
}

/// Full causal convolution truncated to the length of `s`.
pub fn naive_convolve(s: &[f64], h: &[f64]) -> Vec<f64> {
    (0..s.len()).map(|n| (0..h.len().min(n + 1)).map(|k| h[k] * s[n - k]).sum()).collect()
}

/// A small, fast configuration for training tests.
pub fn tiny_config() -> Config {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.toml")).unwrap();
    Config::from_toml_str(&text).unwrap()
}

pub fn synth_pairs(cfg: &DatasetConfig, master: u64, range: std::ops::Range<usize>) -> Vec<AudioPair> {
    range
        .map(|i| {
            let p = synth_pair(cfg, pair_seed(master, i as u64)).unwrap();
            AudioPair { clean: p.clean, reverb: p.reverb }
        })
        .collect()
}
