//! Waveform enhancement: STFT → images → mask → reassemble → inverse STFT.

use ndarray::Array2;
use num_complex::Complex64;

use crate::ctensor::ComplexTensor;
use crate::error::{contract_err, Result};
use crate::signal::{
    apply_mask, images_to_tensor, istft, make_spectral_images, psd_smooth, reassemble, stft, tensor_to_images, Spectrogram,
    SpectralImage, WaveForm,
};

use super::Config;

/// Images per forward pass during enhancement.
const ENHANCE_BATCH: usize = 8;

/// Enhances `wave` with masks produced by `mask_fn` for `[B, 1, T, F]` image batches.
pub fn enhance_with<F>(cfg: &Config, wave: &WaveForm, mut mask_fn: F) -> Result<WaveForm>
where
    F: FnMut(&ComplexTensor) -> Result<ComplexTensor>,
{
    if wave.sample_rate != cfg.stft.sample_rate {
        return Err(contract_err!("input is {} Hz but the model expects {} Hz", wave.sample_rate, cfg.stft.sample_rate));
    }
    let spec = stft(wave, &cfg.stft)?;
    let input = if cfg.model.psd_smoothing { psd_smooth(&spec.data, cfg.model.psd_alpha)? } else { spec.data.clone() };
    let images = make_spectral_images(&input, cfg.model.image_frames)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(ENHANCE_BATCH) {
        let refs: Vec<&Array2<Complex64>> = chunk.iter().map(|i| &i.data).collect();
        let masks = tensor_to_images(&mask_fn(&images_to_tensor(&refs)?)?)?;
        for (img, m) in chunk.iter().zip(masks) {
            out.push(SpectralImage { data: apply_mask(&m, &img.data)?, offset: img.offset });
        }
    }
    let data = reassemble(&out, spec.frames())?;
    istft(&Spectrogram { data, config: spec.config, signal_len: spec.signal_len })
}

/// Identity mask of the given batch shape.
pub fn unit_mask(x: &ComplexTensor) -> ComplexTensor {
    ComplexTensor::from_real(ndarray::ArrayD::ones(x.shape()))
}
