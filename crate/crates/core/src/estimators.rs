//! Channel estimators behind one trait, registered by name.
//!
//! Every estimator works from what a receiver has: the interpolated
//! sparse-pilot grid (whose pilot REs hold the LS estimates) and the SNR.
//! The genie alone reads the target.

use crate::baselines::{build_prior, damp_estimate, lmmse_estimate, DampConfig, SoftDelay};
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::nn::Model;
use crate::pilots::{PilotMask, PilotValues};
use crate::pipeline::GenConfig;

pub const ESTIMATORS: [&str; 6] = ["input-interp", "lmmse", "damp", "lstm", "transformer", "genie"];

/// Names that need a trained model file.
pub fn needs_model(name: &str) -> bool {
    matches!(name, "lstm" | "transformer")
}

#[derive(Debug, Clone, Copy)]
pub struct EstimationInput<'a> {
    pub input: &'a ComplexGrid,
    pub target: &'a ComplexGrid,
    pub snr_db: f64,
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid>;

    fn estimate_batch(&self, xs: &[EstimationInput]) -> Result<Vec<ComplexGrid>> {
        xs.iter().map(|x| self.estimate(x)).collect()
    }
}

/// Geometry shared by the pilot-based estimators.
#[derive(Debug, Clone)]
pub struct EstimatorContext {
    pub gen: GenConfig,
    /// Pilot REs of a pilot-bearing slot, unit pilots (LS already applied).
    pub mask: PilotMask,
}

impl EstimatorContext {
    pub fn new(gen: &GenConfig) -> Result<Self> {
        gen.validate()?;
        let s = gen.channel.shape;
        let p = &gen.sparse;
        let positions = (p.start_symbol..p.start_symbol + p.num_symbols)
            .flat_map(|l| p.pilot_subcarriers(s.k).map(move |k| (k, l)))
            .collect();
        Ok(Self { gen: gen.clone(), mask: PilotMask::from_positions(s.k, s.l, positions)? })
    }

    pub fn slice_shape(&self) -> GridShape {
        let s = self.gen.channel.shape;
        GridShape { k: s.k, l: s.l, n_rx: 1, n_tx: 1 }
    }

    /// LS values read back from the input grid at the pilot REs.
    pub fn pilot_values(&self, input: &ComplexGrid) -> Result<PilotValues> {
        if input.shape() != self.slice_shape() {
            return Err(Error::ShapeMismatch { left: input.shape(), right: self.slice_shape() });
        }
        Ok(PilotValues::new(1, 1, self.mask.positions().iter().map(|&(k, l)| input.get(k, l, 0, 0)).collect()))
    }
}

fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

struct InputInterp;

impl Estimator for InputInterp {
    fn name(&self) -> &str {
        "input-interp"
    }
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid> {
        Ok(x.input.clone())
    }
}

struct Genie;

impl Estimator for Genie {
    fn name(&self) -> &str {
        "genie"
    }
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid> {
        Ok(crate::baselines::genie_oracle(x.target))
    }
}

struct Lmmse(EstimatorContext);

impl Estimator for Lmmse {
    fn name(&self) -> &str {
        "lmmse"
    }
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid> {
        let ctx = &self.0;
        let ch = &ctx.gen.channel;
        let ks: Vec<usize> = ctx.gen.sparse.pilot_subcarriers(ch.shape.k).collect();
        let prior = build_prior(&ch.profile, ch.subcarrier_spacing, &ks, noise_variance(x.snr_db))?;
        lmmse_estimate(&ctx.pilot_values(x.input)?, &ctx.mask, &prior, ctx.slice_shape())
    }
}

struct Damp(EstimatorContext, DampConfig);

impl Estimator for Damp {
    fn name(&self) -> &str {
        "damp"
    }
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid> {
        let ctx = &self.0;
        let y = ctx.pilot_values(x.input)?;
        Ok(damp_estimate(&y, &ctx.mask, ctx.slice_shape(), &SoftDelay, noise_variance(x.snr_db), &self.1)?.0)
    }
}

/// A trained network used as an estimator.
pub struct Learned {
    name: &'static str,
    model: Model,
}

/// Samples per forward pass when estimating in bulk.
const CHUNK: usize = 32;

impl Estimator for Learned {
    fn name(&self) -> &str {
        self.name
    }
    fn estimate(&self, x: &EstimationInput) -> Result<ComplexGrid> {
        self.model.predict(x.input)
    }
    fn estimate_batch(&self, xs: &[EstimationInput]) -> Result<Vec<ComplexGrid>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            let inputs: Vec<&ComplexGrid> = chunk.iter().map(|x| x.input).collect();
            out.extend(self.model.predict_batch(&inputs)?);
        }
        Ok(out)
    }
}

/// Builds an estimator by name. Learned estimators need a model whose
/// architecture matches the name.
pub fn build_estimator(name: &str, ctx: &EstimatorContext, model: Option<Model>) -> Result<Box<dyn Estimator>> {
    Ok(match name {
        "input-interp" => Box::new(InputInterp),
        "genie" => Box::new(Genie),
        "lmmse" => Box::new(Lmmse(ctx.clone())),
        "damp" => Box::new(Damp(ctx.clone(), DampConfig::default())),
        "lstm" | "transformer" => {
            let model = model.ok_or_else(|| Error::Missing(format!("model file for estimator {name:?}")))?;
            if model.arch.name() != name {
                return Err(Error::InvalidArgument(format!(
                    "estimator {name:?} was given a {} model",
                    model.arch.name()
                )));
            }
            let (k, l) = model.arch.grid();
            let s = ctx.slice_shape();
            if (k, l) != (s.k, s.l) {
                return Err(Error::InvalidArgument(format!("model grid {k}x{l} does not match data {}x{}", s.k, s.l)));
            }
            Box::new(Learned { name: if name == "lstm" { "lstm" } else { "transformer" }, model })
        }
        _ => {
            return Err(Error::UnknownName { kind: "estimator", name: name.to_string(), known: ESTIMATORS.join(", ") })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::generate_dataset;

    #[test]
    fn registry_rejects_unknown_and_missing_models() {
        let ctx = EstimatorContext::new(&GenConfig::desk_default()).unwrap();
        assert!(matches!(build_estimator("mmse", &ctx, None), Err(Error::UnknownName { .. })));
        assert!(matches!(build_estimator("transformer", &ctx, None), Err(Error::Missing(_))));
        for name in ["input-interp", "lmmse", "damp", "genie"] {
            assert_eq!(build_estimator(name, &ctx, None).unwrap().name(), name);
        }
    }

    #[test]
    fn pilot_values_are_the_input_at_pilots() {
        let gen = GenConfig::desk_default();
        let ctx = EstimatorContext::new(&gen).unwrap();
        assert_eq!(ctx.mask.len(), 12);
        let d = generate_dataset(&gen, 2, 5, 1).unwrap();
        for s in &d.samples {
            let x = EstimationInput { input: &s.input, target: &s.target, snr_db: 15.0 };
            for name in ["input-interp", "lmmse", "damp", "genie"] {
                let e = build_estimator(name, &ctx, None).unwrap().estimate(&x).unwrap();
                assert_eq!(e.shape(), s.target.shape());
                assert!(e.is_finite());
            }
        }
    }
}
