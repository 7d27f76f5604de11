//! Intrusive quality metrics: cepstral distance, log-likelihood ratio and
//! frequency-weighted segmental SNR.
//!
//! All three use 32 ms Hann frames with an 8 ms hop, and only score frames
//! whose reference energy is within [`ACTIVE_RANGE_DB`] of the loudest
//! reference frame.

use std::f64::consts::LN_10;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{contract_err, Error, Result};
use crate::signal::{hann, WaveForm};

pub const LPC_ORDER: usize = 12;
pub const FRAME_S: f64 = 0.032;
pub const HOP_S: f64 = 0.008;
pub const ACTIVE_RANGE_DB: f64 = 40.0;
pub const AUTOCORR_REG: f64 = 1e-10;
pub const LLR_KEEP: f64 = 0.95;
pub const MEL_BANDS: usize = 23;
pub const WEIGHT_EXP: f64 = 0.2;
pub const SNR_MIN_DB: f64 = -10.0;
pub const SNR_MAX_DB: f64 = 35.0;
pub const BAND_FLOOR: f64 = 1e-30;

/// Windowed analysis frames of a pair trimmed to the shorter length.
struct Frames {
    reference: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
    active: Vec<bool>,
}

fn frame_pair(reference: &WaveForm, test: &WaveForm) -> Result<Frames> {
    if reference.sample_rate != test.sample_rate {
        return Err(contract_err!("sample rates differ: {} vs {}", reference.sample_rate, test.sample_rate));
    }
    let fs = reference.sample_rate as f64;
    let len = (FRAME_S * fs).round() as usize;
    let hop = ((HOP_S * fs).round() as usize).max(1);
    let n = reference.len().min(test.len());
    if len <= LPC_ORDER || n < len {
        return Err(contract_err!("signals of {n} samples are shorter than one {len}-sample frame"));
    }
    let w = hann(len);
    let cut = |x: &[f64], start: usize| -> Vec<f64> { x[start..start + len].iter().zip(&w).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = (0..=(n - len) / hop).map(|i| i * hop).collect();
    let reference: Vec<Vec<f64>> = starts.iter().map(|&s| cut(&reference.samples, s)).collect();
    let test: Vec<Vec<f64>> = starts.iter().map(|&s| cut(&test.samples, s)).collect();
    let energy: Vec<f64> = reference.iter().map(|f| f.iter().map(|v| v * v).sum()).collect();
    let max_e = energy.iter().cloned().fold(0.0, f64::max);
    if !(max_e > 0.0) {
        return Err(contract_err!("reference signal is silent"));
    }
    let thresh = max_e * 10f64.powf(-ACTIVE_RANGE_DB / 10.0);
    let active = energy.iter().map(|&e| e > 0.0 && e >= thresh).collect();
    Ok(Frames { reference, test, active })
}

/// Autocorrelation lags `0..=order`, with `R[0]` inflated by `AUTOCORR_REG·R[0]`.
pub fn autocorrelation(frame: &[f64], order: usize) -> Vec<f64> {
    let mut r: Vec<f64> =
        (0..=order).map(|k| frame.iter().zip(frame.iter().skip(k)).map(|(a, b)| a * b).sum()).collect();
    r[0] *= 1.0 + AUTOCORR_REG;
    r
}

/// Levinson-Durbin recursion: returns `a = [1, a_1, …, a_p]` of the
/// prediction-error filter `A(z) = 1 + Σ a_k z^{-k}`, or `None` when the
/// recursion is not positive definite.
pub fn levinson(r: &[f64]) -> Option<Vec<f64>> {
    let p = r.len() - 1;
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if !(err > 0.0) {
        return None;
    }
    for i in 1..=p {
        let acc: f64 = r[i] + (1..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return None;
        }
    }
    Some(a)
}

/// Cepstrum `c_1..c_n` of the all-pole model `1/A(z)`.
pub fn lpc_cepstrum(a: &[f64], n: usize) -> Vec<f64> {
    let p = a.len() - 1;
    let mut c = vec![0.0; n + 1];
    for m in 1..=n {
        let mut acc = if m <= p { -a[m] } else { 0.0 };
        for k in 1..m {
            if m - k <= p {
                acc -= (k as f64 / m as f64) * c[k] * a[m - k];
            }
        }
        c[m] = acc;
    }
    c.split_off(1)
}

/// Per-utterance scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UtteranceMetrics {
    pub cd: f64,
    pub llr: f64,
    pub fwsegsnr: f64,
    pub frames: usize,
    pub llr_skipped: usize,
}

/// Mean cepstral distance in dB.
pub fn cepstral_distance(reference: &WaveForm, test: &WaveForm) -> Result<f64> {
    let fr = frame_pair(reference, test)?;
    let mut vals = Vec::new();
    for ((r, t), &on) in fr.reference.iter().zip(&fr.test).zip(&fr.active) {
        if !on {
            continue;
        }
        let (Some(ar), Some(at)) = (levinson(&autocorrelation(r, LPC_ORDER)), levinson(&autocorrelation(t, LPC_ORDER)))
        else {
            continue;
        };
        let (cr, ct) = (lpc_cepstrum(&ar, LPC_ORDER), lpc_cepstrum(&at, LPC_ORDER));
        let ss: f64 = cr.iter().zip(&ct).map(|(a, b)| (a - b).powi(2)).sum();
        vals.push(10.0 / LN_10 * (2.0 * ss).sqrt());
    }
    mean(&vals, "cepstral distance")
}

fn toeplitz(r: &[f64]) -> DMatrix<f64> {
    let n = r.len();
    DMatrix::from_fn(n, n, |i, j| r[i.abs_diff(j)])
}

fn quad(m: &DMatrix<f64>, a: &[f64]) -> f64 {
    let v = DVector::from_column_slice(a);
    (v.transpose() * m * &v)[(0, 0)]
}

/// Mean of the smallest 95% of frame LLRs, and the number of skipped frames.
pub fn llr(reference: &WaveForm, test: &WaveForm) -> Result<(f64, usize)> {
    let fr = frame_pair(reference, test)?;
    let mut vals = Vec::new();
    let mut skipped = 0;
    for ((r, t), &on) in fr.reference.iter().zip(&fr.test).zip(&fr.active) {
        if !on {
            continue;
        }
        let rr = autocorrelation(r, LPC_ORDER);
        let m = toeplitz(&rr);
        let coeffs = (levinson(&rr), levinson(&autocorrelation(t, LPC_ORDER)));
        let (Some(ar), Some(at)) = coeffs else {
            skipped += 1;
            continue;
        };
        if m.clone().cholesky().is_none() {
            skipped += 1;
            continue;
        }
        let (num, den) = (quad(&m, &at), quad(&m, &ar));
        if !(num > 0.0 && den > 0.0) {
            skipped += 1;
            continue;
        }
        vals.push((num / den).ln());
    }
    vals.sort_by(f64::total_cmp);
    let keep = ((vals.len() as f64) * LLR_KEEP).ceil() as usize;
    vals.truncate(keep);
    Ok((mean(&vals, "log-likelihood ratio")?, skipped))
}

/// Triangular mel filterbank over `bins` magnitude bins spanning `0..fs/2`.
pub fn mel_filterbank(bands: usize, bins: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let nyq = sample_rate as f64 / 2.0;
    let top = mel(nyq);
    let edges: Vec<f64> = (0..bands + 2).map(|i| hz(top * i as f64 / (bands + 1) as f64)).collect();
    let bin_hz = nyq / (bins - 1) as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn magnitude_spectrum(frame: &[f64], fft: &dyn rustfft::Fft<f64>, size: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::new(0.0, 0.0));
    fft.process(&mut buf);
    buf[..=size / 2].iter().map(|c| c.norm()).collect()
}

/// Frequency-weighted segmental SNR in dB.
pub fn fwsegsnr(reference: &WaveForm, test: &WaveForm) -> Result<f64> {
    let fr = frame_pair(reference, test)?;
    let size = fr.reference[0].len().next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(size);
    let bank = mel_filterbank(MEL_BANDS, size / 2 + 1, reference.sample_rate);
    let band = |mag: &[f64]| -> Vec<f64> { bank.iter().map(|f| f.iter().zip(mag).map(|(a, b)| a * b).sum()).collect() };
    let mut vals = Vec::new();
    for ((r, t), &on) in fr.reference.iter().zip(&fr.test).zip(&fr.active) {
        if !on {
            continue;
        }
        let br = band(&magnitude_spectrum(r, fft.as_ref(), size));
        let bt = band(&magnitude_spectrum(t, fft.as_ref(), size));
        let (mut num, mut den) = (0.0, 0.0);
        for (&s, &e) in br.iter().zip(&bt) {
            let w = s.powf(WEIGHT_EXP);
            if w == 0.0 {
                continue;
            }
            let snr = 10.0 * (s * s / ((s - e).powi(2)).max(BAND_FLOOR)).log10();
            num += w * snr;
            den += w;
        }
        if den > 0.0 {
            vals.push((num / den).clamp(SNR_MIN_DB, SNR_MAX_DB));
        }
    }
    mean(&vals, "frequency-weighted segmental SNR")
}

fn mean(vals: &[f64], what: &str) -> Result<f64> {
    if vals.is_empty() {
        return Err(Error::Numerical(format!("{what}: no scorable frames")));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// All three metrics for one pair.
pub fn evaluate(reference: &WaveForm, test: &WaveForm) -> Result<UtteranceMetrics> {
    let frames = frame_pair(reference, test)?.active.iter().filter(|&&a| a).count();
    let (llr_v, llr_skipped) = llr(reference, test)?;
    Ok(UtteranceMetrics {
        cd: cepstral_distance(reference, test)?,
        llr: llr_v,
        fwsegsnr: fwsegsnr(reference, test)?,
        frames,
        llr_skipped,
    })
}

/// Per-utterance scores with corpus means.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricReport {
    pub utterances: Vec<(String, UtteranceMetrics)>,
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, m: UtteranceMetrics) {
        self.utterances.push((id.into(), m));
    }

    /// `(cd, llr, fwsegsnr)` means; NaN when empty.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.utterances.len() as f64;
        let sum = self.utterances.iter().fold((0.0, 0.0, 0.0), |acc, (_, m)| (acc.0 + m.cd, acc.1 + m.llr, acc.2 + m.fwsegsnr));
        (sum.0 / n, sum.1 / n, sum.2 / n)
    }

    /// Writes `utt_id,cd,llr,fwsegsnr` rows followed by a `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let wrap = |e: csv::Error| Error::data(path, e);
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        w.write_record(["utt_id", "cd", "llr", "fwsegsnr"]).map_err(wrap)?;
        for (id, m) in &self.utterances {
            w.write_record([id.clone(), fmt(m.cd), fmt(m.llr), fmt(m.fwsegsnr)]).map_err(wrap)?;
        }
        let (cd, l, f) = self.means();
        w.write_record(["mean".to_string(), fmt(cd), fmt(l), fmt(f)]).map_err(wrap)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
