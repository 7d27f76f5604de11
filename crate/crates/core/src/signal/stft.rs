use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::WaveForm;
use crate::error::{contract_err, Error, Result};

/// Framing parameters. Frames are Hann-windowed and zero-padded to `fft_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, frame_len: 512, hop: 128, fft_size: 512 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.frame_len < 2 || self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "invalid framing: rate {} frame {} hop {}",
                self.sample_rate, self.frame_len, self.hop
            )));
        }
        if self.fft_size < self.frame_len || self.fft_size % 2 != 0 {
            return Err(Error::Config(format!(
                "fft_size {} must be even and at least frame_len {}",
                self.fft_size, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zeros prepended before framing so the first sample is covered by
    /// as many frames as any interior sample.
    pub fn lead(&self) -> usize {
        self.frame_len - self.hop
    }

    /// Frame count for a signal of `n` samples.
    pub fn frames_for(&self, n: usize) -> usize {
        (self.lead() + n).div_ceil(self.hop)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Complex spectrogram `[frames, fft_size/2 + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    /// Length of the analysed signal, used to trim synthesis output.
    pub signal_len: Option<usize>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }
}

pub fn stft(x: &WaveForm, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.samples.is_empty() {
        return Err(contract_err!("stft of an empty signal"));
    }
    if x.sample_rate != cfg.sample_rate {
        return Err(contract_err!("sample rate {} does not match configured {}", x.sample_rate, cfg.sample_rate));
    }
    let n = x.samples.len();
    let frames = cfg.frames_for(n);
    let window = hann(cfg.frame_len);
    let lead = cfg.lead();
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let mut data = Array2::zeros((frames, cfg.bins()));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..frames {
        buf.fill(Complex64::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            // Position in the original signal, accounting for the lead padding.
            let p = (t * cfg.hop + i).checked_sub(lead);
            if let Some(&s) = p.and_then(|p| x.samples.get(p)) {
                buf[i] = Complex64::new(s * w, 0.0);
            }
        }
        fft.process(&mut buf);
        for (k, v) in data.row_mut(t).iter_mut().enumerate() {
            *v = buf[k];
        }
    }
    Ok(Spectrogram { data, config: *cfg, signal_len: Some(n) })
}

/// Weighted overlap-add synthesis, normalized by the summed squared window.
pub fn istft(s: &Spectrogram) -> Result<WaveForm> {
    let cfg = &s.config;
    cfg.validate().map_err(|e| contract_err!("{e}"))?;
    if s.bins() != cfg.bins() {
        return Err(contract_err!("spectrogram has {} bins, fft_size {} needs {}", s.bins(), cfg.fft_size, cfg.bins()));
    }
    let frames = s.frames();
    let total = if frames == 0 { 0 } else { (frames - 1) * cfg.hop + cfg.frame_len };
    let window = hann(cfg.frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(cfg.fft_size);
    let mut out = vec![0.0; total];
    let mut env = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let half = cfg.fft_size / 2;
    let scale = 1.0 / cfg.fft_size as f64;
    for t in 0..frames {
        let row = s.data.row(t);
        for k in 0..=half {
            buf[k] = row[k];
        }
        // Hermitian extension; DC and Nyquist imaginary parts are ignored.
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for k in 1..half {
            buf[cfg.fft_size - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        for (i, w) in window.iter().enumerate() {
            out[t * cfg.hop + i] += buf[i].re * scale * w;
            env[t * cfg.hop + i] += w * w;
        }
    }
    let peak_env = env.iter().cloned().fold(0.0, f64::max);
    for (o, e) in out.iter_mut().zip(&env) {
        *o = if *e > 1e-8 * peak_env { *o / e } else { 0.0 };
    }
    let lead = cfg.lead().min(out.len());
    let mut samples = out.split_off(lead);
    if let Some(n) = s.signal_len {
        samples.resize(n, 0.0);
    }
    Ok(WaveForm::new(samples, cfg.sample_rate))
}
