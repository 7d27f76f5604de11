//! STFT analysis and synthesis, spectral images, masking and spectral
//! transforms, WAV I/O.

mod image;
mod spectral;
mod stft;
mod wav;

pub use image::{images_to_tensor, make_spectral_images, reassemble, tensor_to_images, SpectralImage};
pub use spectral::{apply_mask, compress_magnitude, psd_smooth, PSD_ALPHA};
pub use stft::{hann, istft, stft, Spectrogram, StftConfig};
pub use wav::{read_wav, write_wav};

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveForm {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveForm {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}
