//! Synthetic clean/reverberant pairs: `x = s ⊛ h + n`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::signal::{read_wav, write_wav, WaveForm};

/// Common peak level of each written pair.
pub const PEAK_LEVEL: f64 = 0.9;

/// Exponential-decay RIR parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RirSpec {
    pub t60: f64,
    pub len: usize,
    pub direct_gain: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl RirSpec {
    /// Length `⌈T60·fs⌉`, so the envelope has decayed 60 dB at the last tap.
    pub fn new(t60: f64, sample_rate: u32, seed: u64) -> Self {
        let len = ((t60 * sample_rate as f64).ceil() as usize).max(1);
        Self { t60, len, direct_gain: 1.0, sample_rate, seed }
    }

    /// Decay constant `τ = T60 / (3 ln 10)` in seconds.
    pub fn tau(&self) -> f64 {
        self.t60 / (3.0 * std::f64::consts::LN_10)
    }
}

/// `h[0] = direct_gain`, `h[n] = g[n]·exp(−n / (fs·τ))` with Gaussian `g`.
pub fn synth_rir(spec: &RirSpec) -> Result<WaveForm> {
    if !(spec.t60 > 0.0) || spec.len == 0 || spec.sample_rate == 0 {
        return Err(contract_err!("invalid RIR spec {spec:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let decay = 1.0 / (spec.sample_rate as f64 * spec.tau());
    let mut h = Vec::with_capacity(spec.len);
    h.push(spec.direct_gain);
    for n in 1..spec.len {
        let g: f64 = rng.sample(StandardNormal);
        h.push(g * (-(n as f64) * decay).exp());
    }
    Ok(WaveForm::new(h, spec.sample_rate))
}

/// Additive white Gaussian noise at an exact empirical SNR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Linear convolution truncated to `s.len()` samples.
pub fn convolve_truncated(s: &[f64], h: &[f64]) -> Vec<f64> {
    let n = s.len();
    if n == 0 || h.is_empty() {
        return vec![0.0; n];
    }
    if n.min(h.len()) <= 64 {
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate().take(i + 1) {
                acc += hk * s[i - k];
            }
            *yi = acc;
        }
        return y;
    }
    let size = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(size, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(s), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    a.iter().take(n).map(|c| c.re / size as f64).collect()
}

/// `x = s ⊛ h` (truncated to `len(s)`) plus optional noise scaled so that
/// `10·log10(P_{s⊛h} / P_n)` equals the requested SNR.
pub fn reverberate(s: &WaveForm, h: &WaveForm, noise: Option<NoiseSpec>) -> Result<WaveForm> {
    if s.sample_rate != h.sample_rate {
        return Err(contract_err!("signal rate {} differs from RIR rate {}", s.sample_rate, h.sample_rate));
    }
    let mut x = convolve_truncated(&s.samples, &h.samples);
    if let Some(ns) = noise {
        let power = mean_power(&x);
        if !(power > 0.0) {
            return Err(contract_err!("noise SNR is undefined for a silent reverberant signal"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(ns.seed);
        let n: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
        let gain = (power / (mean_power(&n) * 10f64.powf(ns.snr_db / 10.0))).sqrt();
        for (xi, ni) in x.iter_mut().zip(&n) {
            *xi += gain * ni;
        }
    }
    Ok(WaveForm::new(x, s.sample_rate))
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Seeded speech-like audio: voiced syllables of harmonic tones with slow
/// pitch glides, vibrato, formant-like spectral tilt and amplitude envelopes,
/// separated by pauses. Peak-normalized to 1.
pub fn speech_like(sample_rate: u32, n: usize, seed: u64) -> WaveForm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let nyq = fs / 2.0;
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.02..0.1) * fs) as usize;
    while pos < n {
        let dur = (rng.random_range(0.08..0.3) * fs) as usize;
        let f0 = rng.random_range(90.0..240.0);
        let glide = rng.random_range(-0.3..0.3);
        let vib_rate = rng.random_range(3.0..7.0);
        let vib_depth = rng.random_range(0.0..0.03);
        let formant = rng.random_range(300.0..(0.4 * nyq).max(400.0));
        let bandwidth = rng.random_range(200.0..600.0);
        let amp = rng.random_range(0.3..1.0);
        let harmonics = ((0.9 * nyq / f0) as usize).clamp(1, 40);
        let weights: Vec<f64> = (1..=harmonics)
            .map(|k| {
                let f = k as f64 * f0;
                (1.0 / k as f64) * (1.0 + 2.0 * (-((f - formant) / bandwidth).powi(2)).exp())
            })
            .collect();
        let mut phase = 0.0;
        let end = (pos + dur).min(n);
        for (i, o) in out[pos..end].iter_mut().enumerate() {
            let u = i as f64 / dur as f64;
            let f = f0 * (1.0 + glide * u) * (1.0 + vib_depth * (2.0 * PI * vib_rate * i as f64 / fs).sin());
            phase += 2.0 * PI * f / fs;
            let env = (PI * u).sin().powi(2);
            let mut v = 0.0;
            for (k, w) in weights.iter().enumerate() {
                if (k + 1) as f64 * f < nyq {
                    v += w * ((k + 1) as f64 * phase).sin();
                }
            }
            *o += amp * env * v;
        }
        pos = end + (rng.random_range(0.03..0.2) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x /= peak);
    }
    WaveForm::new(out, sample_rate)
}

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub t60_min: f64,
    pub t60_max: f64,
    /// `None` disables additive noise.
    pub snr_db: Option<f64>,
    pub direct_gain: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, duration_s: 2.0, t60_min: 0.3, t60_max: 0.7, snr_db: Some(25.0), direct_gain: 1.0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sample_rate > 0
            && self.duration_s > 0.0
            && self.t60_min > 0.0
            && self.t60_max >= self.t60_min
            && self.direct_gain.is_finite()
            && self.snr_db.is_none_or(f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dataset settings {self:?}")))
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

/// Seed for pair `index` under `master`, independent of generation order.
pub fn pair_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seeds of a pair seed: clean signal, T60 draw, RIR, noise.
fn sub_seed(seed: u64, k: u64) -> u64 {
    pair_seed(seed, 0x5EED_0000 + k)
}

/// A synthesized pair before quantization.
#[derive(Clone, Debug)]
pub struct Pair {
    pub clean: WaveForm,
    pub reverb: WaveForm,
    pub t60_s: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Deterministically synthesizes one pair from its seed, both signals scaled
/// by a common factor so the larger peak is [`PEAK_LEVEL`].
pub fn synth_pair(cfg: &DatasetConfig, seed: u64) -> Result<Pair> {
    cfg.validate()?;
    let t60_s = if cfg.t60_max > cfg.t60_min {
        ChaCha8Rng::seed_from_u64(sub_seed(seed, 1)).random_range(cfg.t60_min..cfg.t60_max)
    } else {
        cfg.t60_min
    };
    let clean = speech_like(cfg.sample_rate, cfg.samples(), sub_seed(seed, 0));
    let rir = rir_for(cfg, t60_s, seed)?;
    let noise = cfg.snr_db.map(|snr_db| NoiseSpec { snr_db, seed: sub_seed(seed, 3) });
    let reverb = reverberate(&clean, &rir, noise)?;
    let peak = clean.peak().max(reverb.peak());
    let g = if peak > 0.0 { PEAK_LEVEL / peak } else { 1.0 };
    let scale = |w: WaveForm| WaveForm::new(w.samples.into_iter().map(|x| x * g).collect(), w.sample_rate);
    Ok(Pair { clean: scale(clean), reverb: scale(reverb), t60_s, snr_db: cfg.snr_db, seed })
}

/// The RIR used for a pair with the given seed and T60.
pub fn rir_for(cfg: &DatasetConfig, t60_s: f64, seed: u64) -> Result<WaveForm> {
    let mut spec = RirSpec::new(t60_s, cfg.sample_rate, sub_seed(seed, 2));
    spec.direct_gain = cfg.direct_gain;
    synth_rir(&spec)
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clean_path: String,
    pub reverb_path: String,
    pub t60_s: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `n_pairs` pairs under `out_dir` (`clean/`, `reverb/`, `manifest.csv`)
/// and returns the manifest path.
pub fn generate_dataset(cfg: &DatasetConfig, n_pairs: usize, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    for sub in ["clean", "reverb"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rows: Vec<ManifestRow> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let pair = synth_pair(cfg, pair_seed(seed, i as u64))?;
            let name = format!("{i:05}.wav");
            let row = ManifestRow {
                clean_path: format!("clean/{name}"),
                reverb_path: format!("reverb/{name}"),
                t60_s: pair.t60_s,
                snr_db: pair.snr_db,
                seed: pair.seed,
            };
            write_wav(&out_dir.join(&row.clean_path), &pair.clean)?;
            write_wav(&out_dir.join(&row.reverb_path), &pair.reverb)?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let path = out_dir.join(MANIFEST_NAME);
    write_manifest(&path, &rows)?;
    Ok(path)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let want = ["clean_path", "reverb_path", "t60_s", "snr_db", "seed"];
    if header.iter().collect::<Vec<_>>() != want {
        return Err(Error::data(path, format!("manifest header must be {}", want.join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// A loaded pair of waveforms.
#[derive(Clone, Debug)]
pub struct AudioPair {
    pub clean: WaveForm,
    pub reverb: WaveForm,
}

/// Resolves a row's paths against `base` and reads both files.
pub fn load_pair(base: &Path, row: &ManifestRow, expected_rate: Option<u32>) -> Result<AudioPair> {
    let clean = read_wav(&base.join(&row.clean_path), expected_rate)?;
    let reverb = read_wav(&base.join(&row.reverb_path), expected_rate)?;
    if clean.len() != reverb.len() || clean.sample_rate != reverb.sample_rate {
        return Err(Error::data(base.join(&row.reverb_path), "clean and reverberant files differ in length or rate"));
    }
    Ok(AudioPair { clean, reverb })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::data(path, format!("{other:?}")),
        }
    } else {
        Error::data(path, e)
    }
}
