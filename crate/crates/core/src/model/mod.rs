//! Model assembly, loss, optimizer, training and enhancement.

mod adam;
mod config;
mod dccrn;
mod enhance;
mod loss;
mod train;

use std::path::Path;

pub use adam::Adam;
pub use config::{Config, LayerGeometry, ModelConfig, TrainConfig};
pub use dccrn::Dccrn;
pub use enhance::{enhance_with, unit_mask};
pub use loss::{complex_loss, complex_loss_value};
pub use train::{
    epoch_means, load_manifest_pairs, prepare_examples, train, train_examples, train_step, Example, StepLoss,
    TrainOutcome, TrainOutputs, FINAL_CHECKPOINT, LOSS_LOG,
};

use crate::ctensor::{checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::signal::WaveForm;

/// A network together with its parameters and the configuration that built it.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: Config,
    pub model: Dccrn,
    pub store: ParamStore,
}

impl TrainedModel {
    /// Fresh parameters initialized from `config.train.seed`.
    pub fn build(config: &Config) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Dccrn::new(&mut store, &config.model, config.image_bins(), config.train.seed)?;
        Ok(Self { config: config.clone(), model, store })
    }

    /// Writes parameters with the configuration embedded as TOML.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, &self.config.to_toml())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(path)?;
        let config = Config::from_toml_str(&meta).map_err(|e| Error::data(path, format!("embedded config: {e}")))?;
        let mut fresh = Self::build(&config)?;
        if fresh.store.len() != store.len() {
            return Err(Error::data(path, format!("{} parameters, model needs {}", store.len(), fresh.store.len())));
        }
        for ((_, want), (_, got)) in fresh.store.iter().zip(store.iter()) {
            if want.name != got.name || want.kind != got.kind || want.value.shape() != got.value.shape() {
                return Err(Error::data(
                    path,
                    format!("parameter {} ({:?}) does not match model parameter {}", got.name, got.value.shape(), want.name),
                ));
            }
        }
        fresh.store = store;
        Ok(fresh)
    }

    pub fn enhance(&self, wave: &WaveForm) -> Result<WaveForm> {
        enhance_with(&self.config, wave, |x| self.model.mask_value(&self.store, x))
    }
}
