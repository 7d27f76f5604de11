use ndarray::{s, Array2, Array4};
use num_complex::Complex64;

use crate::ctensor::ComplexTensor;
use crate::error::{shape_err, Result};

/// A block of consecutive frames of the lower half of a spectrogram
/// (`[frames, fft_size/2]`, DC kept, Nyquist dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    pub data: Array2<Complex64>,
    /// Index of the first source frame.
    pub offset: usize,
}

/// Splits `spec: [T, fft/2 + 1]` into non-overlapping `frames`-long images
/// of the lower `fft/2` bins, zero-padding the final image.
pub fn make_spectral_images(spec: &Array2<Complex64>, frames: usize) -> Result<Vec<SpectralImage>> {
    let (t, bins) = spec.dim();
    if frames == 0 || bins < 2 {
        return Err(shape_err!("cannot cut {frames}-frame images from a [{t}, {bins}] spectrogram"));
    }
    let f_img = bins - 1;
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < t {
        let end = (offset + frames).min(t);
        let mut data = Array2::zeros((frames, f_img));
        data.slice_mut(s![..end - offset, ..]).assign(&spec.slice(s![offset..end, ..f_img]));
        out.push(SpectralImage { data, offset });
        offset += frames;
    }
    Ok(out)
}

/// Inverse of [`make_spectral_images`]: `[frames, f_img + 1]` with a zero Nyquist bin.
pub fn reassemble(images: &[SpectralImage], frames: usize) -> Result<Array2<Complex64>> {
    let Some(first) = images.first() else {
        return Ok(Array2::zeros((frames, 1)));
    };
    let (t_img, f_img) = first.data.dim();
    let mut out = Array2::zeros((frames, f_img + 1));
    for img in images {
        if img.data.dim() != (t_img, f_img) {
            return Err(shape_err!("image shapes differ: {:?} vs {:?}", img.data.dim(), (t_img, f_img)));
        }
        if img.offset >= frames {
            continue;
        }
        let end = (img.offset + t_img).min(frames);
        out.slice_mut(s![img.offset..end, ..f_img]).assign(&img.data.slice(s![..end - img.offset, ..]));
    }
    Ok(out)
}

/// Stacks equally-sized images into a `[B, 1, T, F]` network input.
pub fn images_to_tensor(images: &[&Array2<Complex64>]) -> Result<ComplexTensor> {
    let Some(first) = images.first() else {
        return Err(shape_err!("no images to batch"));
    };
    let (t, f) = first.dim();
    let mut re = Array4::zeros((images.len(), 1, t, f));
    let mut im = Array4::zeros((images.len(), 1, t, f));
    for (b, img) in images.iter().enumerate() {
        if img.dim() != (t, f) {
            return Err(shape_err!("image shapes differ: {:?} vs {:?}", img.dim(), (t, f)));
        }
        re.slice_mut(s![b, 0, .., ..]).assign(&img.mapv(|c| c.re));
        im.slice_mut(s![b, 0, .., ..]).assign(&img.mapv(|c| c.im));
    }
    ComplexTensor::new(re.into_dyn(), im.into_dyn())
}

/// Splits a `[B, 1, T, F]` tensor back into `B` images.
pub fn tensor_to_images(x: &ComplexTensor) -> Result<Vec<Array2<Complex64>>> {
    let sh = x.shape();
    if sh.len() != 4 || sh[1] != 1 {
        return Err(shape_err!("expected a [B,1,T,F] tensor, got {sh:?}"));
    }
    Ok((0..sh[0])
        .map(|b| {
            Array2::from_shape_fn((sh[2], sh[3]), |(t, f)| {
                Complex64::new(x.re()[[b, 0, t, f]], x.im()[[b, 0, t, f]])
            })
        })
        .collect())
}
