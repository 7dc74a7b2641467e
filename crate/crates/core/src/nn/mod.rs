//! Reverse-mode tensor engine and the learned estimators built on it.
//!
//! Networks see a single antenna-pair slice as a two-channel real map. Each
//! architecture is a [`Architecture`] trait object chosen by name, so the
//! training loop and model files do not care which one is inside.

pub mod gradcheck;
pub mod io;
pub mod lstm;
mod params;
mod tape;
pub mod transformer;

use std::fmt::Debug;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use lstm::{Lstm, LstmConfig};
pub use params::{init_normal, Adam, AdamConfig, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use transformer::{ModelConfig, Transformer};

use crate::error::{Error, Result};
use crate::grid::{fro_norm_sq, ComplexGrid};
use crate::objective::{total_loss_grad, LossBreakdown, LossWeights};

pub const ARCHITECTURES: [&str; 2] = ["transformer", "lstm"];

/// A network mapping a stacked batch of encoded slices to the same layout.
pub trait Architecture: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    /// `(K, L)` of the slices it accepts.
    fn grid(&self) -> (usize, usize);
    fn init(&self, seed: u64) -> Result<ParamStore>;
    /// Real matrix view of a batch. Output layout equals input layout, and
    /// `encode` is the exact inverse of `decode`.
    fn encode(&self, grids: &[&ComplexGrid]) -> Result<Array2<f64>>;
    fn decode(&self, m: &Array2<f64>, count: usize) -> Result<Vec<ComplexGrid>>;
    fn graph(&self, tape: &mut Tape, store: &ParamStore, x: Var, count: usize) -> Result<Var>;
    fn config(&self) -> NetConfig;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetConfig {
    Transformer(ModelConfig),
    Lstm(LstmConfig),
}

impl NetConfig {
    pub fn build(&self) -> Result<Box<dyn Architecture>> {
        Ok(match self {
            NetConfig::Transformer(c) => Box::new(Transformer::new(c.clone())?),
            NetConfig::Lstm(c) => Box::new(Lstm::new(c.clone())?),
        })
    }

    /// Desk-scale defaults for a registered architecture name.
    pub fn default_for(name: &str, k: usize, l: usize) -> Result<Self> {
        match name {
            "transformer" => Ok(NetConfig::Transformer(ModelConfig::desk(k, l))),
            "lstm" => Ok(NetConfig::Lstm(LstmConfig::desk(k, l))),
            _ => Err(Error::UnknownName {
                kind: "architecture",
                name: name.to_string(),
                known: ARCHITECTURES.join(", "),
            }),
        }
    }
}

/// Per-sample input scale: `1 / rms`, or 1 for an all-zero input.
pub fn input_scale(g: &ComplexGrid) -> f64 {
    let n = g.shape().len().max(1) as f64;
    let rms = (fro_norm_sq(g) / n).sqrt();
    if rms > 0.0 && rms.is_finite() {
        1.0 / rms
    } else {
        1.0
    }
}

/// An architecture together with its trained parameters.
#[derive(Debug)]
pub struct Model {
    pub arch: Box<dyn Architecture>,
    pub params: ParamStore,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.config().build().expect("config of a built model is valid"),
            params: self.params.clone(),
        }
    }
}

impl Model {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        let arch = config.build()?;
        let params = arch.init(seed)?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(config: &NetConfig, params: ParamStore) -> Result<Self> {
        let arch = config.build()?;
        let reference = arch.init(0)?;
        if reference.len() != params.len() {
            return Err(Error::Malformed(format!(
                "expected {} parameter tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        for id in reference.ids() {
            let name = reference.name(id);
            let got = params.id(name)?;
            if params.value(got).dim() != reference.value(id).dim() {
                return Err(Error::Malformed(format!("parameter {name:?} has the wrong shape")));
            }
        }
        if !params.is_finite() {
            return Err(Error::Numerical("model parameters are not finite".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> NetConfig {
        self.arch.config()
    }

    fn scaled_batch(&self, inputs: &[&ComplexGrid]) -> Result<(Array2<f64>, Vec<f64>)> {
        let scales: Vec<f64> = inputs.iter().map(|g| input_scale(g)).collect();
        let scaled: Vec<ComplexGrid> =
            inputs.iter().zip(&scales).map(|(g, &s)| g.map(|v| v * s)).collect();
        let refs: Vec<&ComplexGrid> = scaled.iter().collect();
        Ok((self.arch.encode(&refs)?, scales))
    }

    /// Forward pass on a batch; returns the tape, output node and scales.
    pub fn forward(&self, inputs: &[&ComplexGrid]) -> Result<(Tape, Var, Vec<f64>)> {
        let (x, scales) = self.scaled_batch(inputs)?;
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let out = self.arch.graph(&mut tape, &self.params, xv, inputs.len())?;
        Ok((tape, out, scales))
    }

    pub fn predict_batch(&self, inputs: &[&ComplexGrid]) -> Result<Vec<ComplexGrid>> {
        let (tape, out, scales) = self.forward(inputs)?;
        let grids = self.arch.decode(tape.value(out), inputs.len())?;
        let res: Vec<ComplexGrid> =
            grids.into_iter().zip(&scales).map(|(g, &s)| g.map(|v| v / s)).collect();
        if res.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("network produced non-finite output".into()));
        }
        Ok(res)
    }

    pub fn predict(&self, input: &ComplexGrid) -> Result<ComplexGrid> {
        Ok(self.predict_batch(&[input])?.remove(0))
    }

    /// Adds the gradient of the mean batch loss into the parameter store and
    /// returns the per-sample loss breakdowns.
    pub fn accumulate_loss_grad(
        &mut self,
        inputs: &[&ComplexGrid],
        targets: &[&ComplexGrid],
        weights: &LossWeights,
    ) -> Result<Vec<LossBreakdown>> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InvalidArgument("need equal, non-empty input and target batches".into()));
        }
        let b = inputs.len() as f64;
        let (mut tape, out, scales) = self.forward(inputs)?;
        let raw = self.arch.decode(tape.value(out), inputs.len())?;
        let mut losses = Vec::with_capacity(inputs.len());
        let mut seeds = Vec::with_capacity(inputs.len());
        for ((o, t), &s) in raw.iter().zip(targets).zip(&scales) {
            let est = o.map(|v| v / s);
            let (loss, g) = total_loss_grad(&est, t, weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Numerical("loss is not finite".into()));
            }
            losses.push(loss);
            seeds.push(g.map(|v| v / (s * b)));
        }
        let refs: Vec<&ComplexGrid> = seeds.iter().collect();
        let seed = self.arch.encode(&refs)?;
        tape.backward_with(out, seed, &mut self.params)?;
        Ok(losses)
    }

    /// Mean batch loss without touching gradients.
    pub fn batch_loss(&self, inputs: &[&ComplexGrid], targets: &[&ComplexGrid], weights: &LossWeights) -> Result<f64> {
        let est = self.predict_batch(inputs)?;
        let mut sum = 0.0;
        for (e, t) in est.iter().zip(targets) {
            sum += crate::objective::total_loss(e, t, weights)?.total;
        }
        Ok(sum / inputs.len() as f64)
    }
}
