//! TOML configuration with `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionVariant;
use crate::datasynth::DatasetConfig;
use crate::error::{Error, Result};
use crate::nnlayers::conv_output_len;
use crate::signal::{StftConfig, PSD_ALPHA};

/// Network architecture and loss settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Real feature-map widths of the encoder layers (each even; complex
    /// channel count is half). The decoder mirrors them.
    pub channels: Vec<usize>,
    /// `[time, freq]` kernel per layer, or a single entry for all layers.
    pub kernels: Vec<[usize; 2]>,
    pub strides: Vec<[usize; 2]>,
    pub pads: Vec<[usize; 2]>,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub attention: AttentionVariant,
    /// Divide correlations by `√d` before the softmax.
    pub attention_scaled: bool,
    /// Bound mask magnitudes with `tanh`.
    pub bounded_mask: bool,
    /// Frames per spectral image; image width is `fft_size / 2`.
    pub image_frames: usize,
    /// Recursive PSD smoothing of network input and target.
    pub psd_smoothing: bool,
    pub psd_alpha: f64,
    /// Magnitude compression exponent of the loss.
    pub c: f64,
    /// Weight of the complex term of the loss.
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![4, 8, 16, 32],
            kernels: vec![[3, 3]],
            strides: vec![[1, 2]],
            pads: vec![[1, 1]],
            gru_layers: 2,
            gru_hidden: 32,
            attention: AttentionVariant::Complex,
            attention_scaled: false,
            bounded_mask: false,
            image_frames: 64,
            psd_smoothing: false,
            psd_alpha: PSD_ALPHA,
            c: 0.3,
            beta: 0.3,
        }
    }
}

/// Geometry of one encoder layer and the feature map it produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeometry {
    /// Complex channels in and out.
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// Output frames and bins.
    pub t_out: usize,
    pub f_out: usize,
}

impl ModelConfig {
    fn per_layer(v: &[[usize; 2]], i: usize) -> (usize, usize) {
        let a = if v.len() == 1 { v[0] } else { v[i] };
        (a[0], a[1])
    }

    /// Validates the configuration against an input image size and returns
    /// the per-layer geometry.
    pub fn geometry(&self, image_bins: usize) -> Result<Vec<LayerGeometry>> {
        let n = self.channels.len();
        let cfg = |m: String| Err(Error::Config(m));
        if n == 0 {
            return cfg("model.channels must list at least one layer".into());
        }
        if let Some(&w) = self.channels.iter().find(|&&w| w == 0 || w % 2 != 0) {
            return cfg(format!("channel width {w} must be positive and even"));
        }
        for (name, v) in [("kernels", &self.kernels), ("strides", &self.strides), ("pads", &self.pads)] {
            if v.len() != 1 && v.len() != n {
                return cfg(format!("model.{name} needs 1 or {n} entries, got {}", v.len()));
            }
        }
        if !(self.c > 0.0) || !(0.0..=1.0).contains(&self.beta) {
            return cfg(format!("loss needs c > 0 and 0 <= beta <= 1, got c={} beta={}", self.c, self.beta));
        }
        if !(0.0..1.0).contains(&self.psd_alpha) {
            return cfg(format!("psd_alpha must be in [0, 1), got {}", self.psd_alpha));
        }
        if self.gru_layers == 0 || self.gru_hidden == 0 || self.image_frames == 0 {
            return cfg("gru_layers, gru_hidden and image_frames must be positive".into());
        }
        let (mut t, mut f) = (self.image_frames, image_bins);
        let mut c_in = 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let kernel = Self::per_layer(&self.kernels, i);
            let stride = Self::per_layer(&self.strides, i);
            let pad = Self::per_layer(&self.pads, i);
            for (axis, k, s, p, len) in [("time", kernel.0, stride.0, pad.0, t), ("freq", kernel.1, stride.1, pad.1, f)] {
                // Decoder convolutions run at stride 1 on the upsampled map and
                // must preserve its length, which needs 2p = k - 1.
                if s == 0 || 2 * p + 1 != k {
                    return cfg(format!("layer {i} {axis}: need stride > 0 and kernel = 2*pad + 1, got k={k} s={s} p={p}"));
                }
                if len % s != 0 || conv_output_len(len, k, s, p) != Some(len / s) || len / s == 0 {
                    return cfg(format!("layer {i} {axis}: length {len} is not divisible by stride {s}"));
                }
            }
            t /= stride.0;
            f /= stride.1;
            let c_out = self.channels[i] / 2;
            out.push(LayerGeometry { c_in, c_out, kernel, stride, pad, t_out: t, f_out: f });
            c_in = c_out;
        }
        Ok(out)
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 4, epochs: 20, seed: 0, max_steps: None, checkpoint_every: 1 }
    }
}

/// Complete configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub stft: StftConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
}

impl Config {
    pub fn image_bins(&self) -> usize {
        self.stft.fft_size / 2
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.data.validate()?;
        self.model.geometry(self.image_bins())?;
        if self.train.batch_size == 0 || !(self.train.learning_rate >= 0.0) {
            return Err(Error::Config("train.batch_size must be positive and learning_rate non-negative".into()));
        }
        if self.data.sample_rate != self.stft.sample_rate {
            return Err(Error::Config(format!(
                "data.sample_rate {} differs from stft.sample_rate {}",
                self.data.sample_rate, self.stft.sample_rate
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings) and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
            .map_err(|e| if let Error::Config(m) = e { Error::Config(format!("{}: {m}", path.display())) } else { e })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item.split_once('=').ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
