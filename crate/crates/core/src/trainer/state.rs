use std::fs;
use std::path::Path;

use super::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::netcore::{checkpoint, Matrix, Network};
use crate::rng::{stream_rng, Stream};
use crate::sslcore::AvgClusteringState;

/// Everything a run carries between iterations besides optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub network: Network,
    /// Present for layermatch with Avg-Clustering enabled.
    pub avg: Option<AvgClusteringState>,
    pub model_ema: Option<Network>,
    pub prediction_ema: Option<Network>,
}

impl ModelState {
    /// Fresh state for `cfg`; all weights come from the seed's init stream.
    pub fn init(cfg: &TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(cfg.hidden.len() + 1);
        dims.push(input_dim);
        dims.extend(&cfg.hidden);
        let mut rng = stream_rng(cfg.seed, Stream::Init);
        let network = Network::xavier(&dims, cfg.activation, num_classes, &mut rng)?;
        let avg = if cfg.method == Method::LayerMatch && cfg.avg_clustering {
            Some(AvgClusteringState::new(
                &network.classifier,
                cfg.avg_period,
                cfg.avg_momentum,
                cfg.avg_step,
            )?)
        } else {
            None
        };
        let model_ema = (cfg.model_ema_momentum > 0.0).then(|| network.clone());
        let prediction_ema =
            (cfg.pseudo_from_ema && cfg.prediction_ema_momentum > 0.0).then(|| network.clone());
        Ok(Self {
            network,
            avg,
            model_ema,
            prediction_ema,
        })
    }

    /// The model used for reported accuracy: model EMA if kept, else live.
    pub fn eval_network(&self) -> &Network {
        self.model_ema.as_ref().unwrap_or(&self.network)
    }

    /// Checkpoint order: live network, `β̄` (W, b), model EMA, prediction EMA;
    /// absent parts are skipped.
    fn matrices(&self) -> Vec<&Matrix> {
        let mut out = self.network.matrices();
        if let Some(avg) = &self.avg {
            out.extend(avg.beta_bar.matrices());
        }
        for ema in [&self.model_ema, &self.prediction_ema].into_iter().flatten() {
            out.extend(ema.matrices());
        }
        out
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.network.matrices_mut();
        if let Some(avg) = &mut self.avg {
            out.extend(avg.beta_bar.matrices_mut());
        }
        for ema in [&mut self.model_ema, &mut self.prediction_ema].into_iter().flatten() {
            out.extend(ema.matrices_mut());
        }
        out
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.matrices())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    /// Fills a copy of `template` with the parameters in `bytes`. The template
    /// fixes the architecture and which optional parts are expected.
    pub fn from_checkpoint_bytes(bytes: &[u8], template: &ModelState) -> Result<Self> {
        let loaded = checkpoint::decode(bytes)?;
        let mut state = template.clone();
        let slots = state.matrices_mut();
        if slots.len() != loaded.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} matrices, architecture expects {}",
                loaded.len(),
                slots.len()
            )));
        }
        for (i, (slot, m)) in slots.into_iter().zip(loaded).enumerate() {
            if slot.shape() != m.shape() {
                return Err(Error::Format(format!(
                    "checkpoint matrix {i} is {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok(state)
    }

    pub fn load_checkpoint(path: &Path, template: &ModelState) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?, template)
    }
}
