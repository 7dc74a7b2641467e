//! Central finite-difference checks for tape graphs.
//!
//! The graph output is reduced to a scalar by a fixed random projection, so
//! every output entry contributes and non-scalar ops can be checked directly.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Model, ParamStore, Tape, Var};
use crate::error::Result;
use crate::grid::ComplexGrid;
use crate::objective::{total_loss, LossWeights};
use crate::rng;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_rel: f64,
    pub checked: usize,
}

impl CheckReport {
    fn push(&mut self, a: f64, n: f64) {
        self.max_rel = self.max_rel.max(rel_error(a, n));
        self.checked += 1;
    }
}

fn pick<R: Rng>(r: &mut R, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        sample(r, len, max).into_vec()
    }
}

/// Compares tape gradients of `sum(build(inputs) * R)` against central
/// differences on up to `per_tensor` coordinates of every input and parameter.
pub fn grad_check<F>(inputs: &[Array2<f64>], store: &mut ParamStore, build: F, seed: u64, per_tensor: usize) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Array2<f64>], store: &ParamStore| -> Result<(Tape, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
        let out = build(&mut tape, store, &vars)?;
        Ok((tape, out, vars))
    };
    let (mut tape, out, vars) = eval(inputs, store)?;
    let mut r = rng::stream(seed, &[rng::tag::PROBE]);
    let proj: Array2<f64> = Array2::from_shape_simple_fn(tape.value(out).dim(), || r.sample(StandardNormal));
    let scalar = |inputs: &[Array2<f64>], store: &ParamStore| -> Result<f64> {
        let (tape, out, _) = eval(inputs, store)?;
        Ok((tape.value(out) * &proj).sum())
    };

    store.zero_grad();
    tape.backward_with(out, proj.clone(), store)?;
    let mut report = CheckReport { max_rel: 0.0, checked: 0 };

    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).cloned().unwrap_or_else(|| Array2::zeros(inputs[i].dim()));
        for idx in pick(&mut r, inputs[i].len(), per_tensor) {
            let orig = inputs[i].as_slice().expect("standard layout")[idx];
            xs[i].as_slice_mut().expect("standard layout")[idx] = orig + STEP;
            let plus = scalar(&xs, store)?;
            xs[i].as_slice_mut().expect("standard layout")[idx] = orig - STEP;
            let minus = scalar(&xs, store)?;
            xs[i].as_slice_mut().expect("standard layout")[idx] = orig;
            report.push(analytic.as_slice().expect("standard layout")[idx], (plus - minus) / (2.0 * STEP));
        }
    }

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.grad(id).clone();
        for idx in pick(&mut r, analytic.len(), per_tensor) {
            let orig = store.value(id).as_slice().expect("standard layout")[idx];
            store.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig + STEP;
            let plus = scalar(inputs, store)?;
            store.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig - STEP;
            let minus = scalar(inputs, store)?;
            store.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig;
            report.push(analytic.as_slice().expect("standard layout")[idx], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Checks the full model loss gradient on `count` randomly chosen scalar
/// parameters.
pub fn model_grad_check(
    model: &mut Model,
    inputs: &[&ComplexGrid],
    targets: &[&ComplexGrid],
    weights: &LossWeights,
    count: usize,
    seed: u64,
) -> Result<CheckReport> {
    model.params.zero_grad();
    model.accumulate_loss_grad(inputs, targets, weights)?;
    let mean_loss = |m: &Model| -> Result<f64> {
        let est = m.predict_batch(inputs)?;
        let mut s = 0.0;
        for (e, t) in est.iter().zip(targets) {
            s += total_loss(e, t, weights)?.total;
        }
        Ok(s / inputs.len() as f64)
    };
    let ids: Vec<_> = model.params.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.params.value(id).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng::stream(seed, &[rng::tag::PROBE]);
    let mut report = CheckReport { max_rel: 0.0, checked: 0 };
    for flat in pick(&mut r, total, count) {
        let (mut t, mut idx) = (0, flat);
        while idx >= sizes[t] {
            idx -= sizes[t];
            t += 1;
        }
        let id = ids[t];
        let analytic = model.params.grad(id).as_slice().expect("standard layout")[idx];
        let orig = model.params.value(id).as_slice().expect("standard layout")[idx];
        model.params.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig + STEP;
        let plus = mean_loss(model)?;
        model.params.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig - STEP;
        let minus = mean_loss(model)?;
        model.params.value_mut(id).as_slice_mut().expect("standard layout")[idx] = orig;
        report.push(analytic, (plus - minus) / (2.0 * STEP));
    }
    Ok(report)
}

/// Checks a complex-argument scalar function whose gradient is packed as
/// `dL/dRe + j dL/dIm`, on up to `samples` entries (both parts each).
pub fn grid_grad_check<F>(x: &ComplexGrid, f: F, analytic: &ComplexGrid, samples: usize, seed: u64) -> Result<CheckReport>
where
    F: Fn(&ComplexGrid) -> Result<f64>,
{
    let mut r = rng::stream(seed, &[rng::tag::PROBE]);
    let mut report = CheckReport { max_rel: 0.0, checked: 0 };
    let mut probe = x.clone();
    for idx in pick(&mut r, x.values().len(), samples) {
        let orig = x.values()[idx];
        for (dir, a) in [(num_complex::Complex64::new(STEP, 0.0), analytic.values()[idx].re), (num_complex::Complex64::new(0.0, STEP), analytic.values()[idx].im)] {
            probe.values_mut()[idx] = orig + dir;
            let plus = f(&probe)?;
            probe.values_mut()[idx] = orig - dir;
            let minus = f(&probe)?;
            probe.values_mut()[idx] = orig;
            report.push(a, (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}
