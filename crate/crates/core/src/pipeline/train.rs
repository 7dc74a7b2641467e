//! Mini-batch training with adaptive moments. Deterministic: the shuffle
//! order comes from the seed and the epoch, and all reductions run in a
//! fixed order on one thread.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::grid::{fro_norm_sq, ComplexGrid};
use crate::nn::{Adam, AdamConfig, Model, NetConfig};
use crate::objective::{sp_nmse, LossWeights};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub loss: LossWeights,
    pub model: NetConfig,
}

impl TrainConfig {
    pub fn desk_default(model: NetConfig) -> Self {
        Self { epochs: 10, batch_size: 16, optimizer: AdamConfig::default(), seed: 0, loss: LossWeights::default(), model }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !o.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer moments must lie in [0, 1) and eps > 0".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean composite loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean composite loss on the validation set, if one was given.
    pub val_loss: Option<f64>,
    /// Validation SP-NMSE as a ratio of expectations, in dB.
    pub val_sp_nmse_db: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map(|h| h.train_loss).unwrap_or(f64::NAN)
    }
}

fn validation(model: &Model, val: &Dataset, weights: &LossWeights) -> Result<(f64, f64)> {
    let (mut loss, mut err, mut energy) = (0.0, 0.0, 0.0);
    for chunk in val.samples.chunks(32) {
        let inputs: Vec<&ComplexGrid> = chunk.iter().map(|s| &s.input).collect();
        let est = model.predict_batch(&inputs)?;
        for (e, s) in est.iter().zip(chunk) {
            loss += crate::objective::total_loss(e, &s.target, weights)?.total;
            let (sp, _) = sp_nmse(e, &s.target)?;
            let eh = fro_norm_sq(&s.target);
            err += sp * eh;
            energy += eh;
        }
    }
    Ok((loss / val.len() as f64, 10.0 * (err / energy).log10()))
}

/// Trains a fresh model. `progress` is called after every epoch.
pub fn train(
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    let (k, l) = model.arch.grid();
    if (k, l) != (data.k, data.l) {
        return Err(Error::Config(format!("model grid {k}x{l} does not match dataset {}x{}", data.k, data.l)));
    }
    let mut adam = Adam::new(cfg.optimizer, &model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let mut r = rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut r);
        let (mut sum, mut batches) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&ComplexGrid> = idx.iter().map(|&i| &data.samples[i].input).collect();
            let targets: Vec<&ComplexGrid> = idx.iter().map(|&i| &data.samples[i].target).collect();
            model.params.zero_grad();
            let losses = model.accumulate_loss_grad(&inputs, &targets, &cfg.loss).map_err(|e| {
                Error::Numerical(format!("epoch {epoch}, batch {b} (samples {idx:?}): {e}"))
            })?;
            let mean = losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64;
            let gnorm = model.params.grad_norm();
            if !mean.is_finite() || !gnorm.is_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: loss {mean}, gradient norm {gnorm} (samples {idx:?})"
                )));
            }
            adam.step(&mut model.params);
            if !model.params.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}, batch {b}: parameters became non-finite")));
            }
            sum += mean;
            batches += 1;
        }
        let (val_loss, val_sp_nmse_db) = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let (a, b) = validation(&model, v, &cfg.loss)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: sum / batches as f64,
            val_loss,
            val_sp_nmse_db,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainResult { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::pipeline::{generate_dataset, GenConfig};

    fn small() -> (Dataset, TrainConfig) {
        let mut g = GenConfig::desk_default();
        g.channel.shape = GridShape::new(8, 14, 1, 1).unwrap();
        let d = generate_dataset(&g, 8, 3, 1).unwrap();
        let mut m = crate::nn::ModelConfig::desk(8, 14);
        m.d_model = 16;
        m.d_ff = 32;
        m.layers = 1;
        let mut c = TrainConfig::desk_default(NetConfig::Transformer(m));
        c.epochs = 2;
        c.batch_size = 4;
        (d, c)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (d, mut c) = small();
        c.optimizer.lr = 0.0;
        let out = train(&d, None, &c, |_| {}).unwrap();
        let fresh = Model::new(&c.model, c.seed).unwrap();
        for id in fresh.params.ids() {
            assert_eq!(out.model.params.value(id), fresh.params.value(id), "{}", fresh.params.name(id));
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (d, c) = small();
        let a = train(&d, Some(&d), &c, |_| {}).unwrap();
        let b = train(&d, Some(&d), &c, |_| {}).unwrap();
        assert_eq!(a.final_loss().to_bits(), b.final_loss().to_bits());
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn rejects_bad_config() {
        let (d, mut c) = small();
        c.batch_size = 0;
        assert!(train(&d, None, &c, |_| {}).is_err());
    }
}
