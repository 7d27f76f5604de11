//! Training loop: pairs → STFT → images → mask → loss → Adam.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasynth::{load_pair, read_manifest, AudioPair};
use crate::error::{Error, Result};
use crate::signal::{images_to_tensor, make_spectral_images, psd_smooth, stft};

use super::adam::Adam;
use super::loss::complex_loss;
use super::{Config, TrainedModel};
use crate::ctensor::Session;

/// One training image pair: network input and target spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Array2<Complex64>,
    pub target: Array2<Complex64>,
}

/// Cuts every pair into aligned input/target images.
pub fn prepare_examples(cfg: &Config, pairs: &[AudioPair]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in pairs {
        let mut x = stft(&p.reverb, &cfg.stft)?.data;
        let mut s = stft(&p.clean, &cfg.stft)?.data;
        if cfg.model.psd_smoothing {
            x = psd_smooth(&x, cfg.model.psd_alpha)?;
            s = psd_smooth(&s, cfg.model.psd_alpha)?;
        }
        let xi = make_spectral_images(&x, cfg.model.image_frames)?;
        let si = make_spectral_images(&s, cfg.model.image_frames)?;
        out.extend(xi.into_iter().zip(si).map(|(a, b)| Example { input: a.data, target: b.data }));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub losses: Vec<StepLoss>,
    /// Manifest rows that could not be loaded.
    pub skipped: usize,
}

impl TrainOutcome {
    /// Mean loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.losses)
    }
}

pub fn epoch_means(losses: &[StepLoss]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for l in losses {
        if out.len() <= l.epoch {
            out.resize(l.epoch + 1, (0.0, 0));
        }
        out[l.epoch].0 += l.loss;
        out[l.epoch].1 += 1;
    }
    out.into_iter().filter(|e| e.1 > 0).map(|(s, n)| s / n as f64).collect()
}

/// Where to write logs and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
}

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step(trained: &mut TrainedModel, opt: &mut Adam, batch: &[&Example]) -> Result<f64> {
    let inputs: Vec<&Array2<Complex64>> = batch.iter().map(|e| &e.input).collect();
    let targets: Vec<&Array2<Complex64>> = batch.iter().map(|e| &e.target).collect();
    let (x, s) = (images_to_tensor(&inputs)?, images_to_tensor(&targets)?);
    let (c, beta) = (trained.config.model.c, trained.config.model.beta);
    let (loss, grads, updates) = {
        let mut sess = Session::new(&trained.store, true);
        let xv = sess.tape.complex_constant(&x);
        let sv = sess.tape.complex_constant(&s);
        let est = trained.model.enhance(&mut sess, xv)?;
        let l = complex_loss(&mut sess.tape, sv, est, c, beta)?;
        let loss = sess.tape.scalar(l);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss} at optimizer step {}", opt.steps() + 1)));
        }
        let g = sess.tape.backward(l)?;
        (loss, sess.param_grads(&g), sess.take_buffer_updates())
    };
    opt.step(&mut trained.store, &grads)?;
    for (id, v) in updates {
        trained.store.set_value(id, v)?;
    }
    Ok(loss)
}

/// Trains a freshly initialized model on prepared examples.
pub fn train_examples(cfg: &Config, examples: &[Example], outputs: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let mut trained = TrainedModel::build(cfg)?;
    let mut opt = Adam::new(cfg.train.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5348_5546_464C_4521);
    let mut losses = Vec::new();
    let mut log = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOSS_LOG);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "step,epoch,loss").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let max_steps = cfg.train.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            if losses.len() >= max_steps {
                break 'epochs;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = train_step(&mut trained, &mut opt, &batch)?;
            let step = losses.len();
            losses.push(StepLoss { step, epoch, loss });
            if let Some((f, path)) = &mut log {
                writeln!(f, "{step},{epoch},{loss:e}").map_err(|e| Error::io(&*path, e))?;
            }
        }
        log::info!("epoch {epoch}: mean loss {:.6e}", epoch_means(&losses).last().copied().unwrap_or(f64::NAN));
        if let Some(dir) = &outputs.dir {
            let every = cfg.train.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 {
                trained.save(&dir.join(format!("epoch{:03}.ckpt", epoch + 1)))?;
            }
        }
    }
    if let Some(dir) = &outputs.dir {
        trained.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { trained, losses, skipped: 0 })
}

/// Loads every manifest pair, skipping unreadable ones with a warning.
pub fn load_manifest_pairs(cfg: &Config, manifest: &Path) -> Result<(Vec<AudioPair>, usize)> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    for row in &rows {
        match load_pair(base, row, Some(cfg.stft.sample_rate)) {
            Ok(p) => pairs.push(p),
            Err(e) => {
                log::warn!("skipping {}: {e}", row.reverb_path);
                skipped += 1;
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::data(manifest, format!("none of the {} listed pairs could be loaded", rows.len())));
    }
    Ok((pairs, skipped))
}

/// Full pipeline from a manifest.
pub fn train(cfg: &Config, manifest: &Path, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    let (pairs, skipped) = load_manifest_pairs(cfg, manifest)?;
    let examples = prepare_examples(cfg, &pairs)?;
    let mut out = train_examples(cfg, &examples, outputs)?;
    out.skipped = skipped;
    Ok(out)
}
