//! Finite-difference gradient suite shared by the neural tests and the
//! acceptance run. Each entry checks one differentiable operation on one
//! random shape.

use csiforge::nn::gradcheck::{grad_check, grid_grad_check, model_grad_check, CheckReport};
use csiforge::nn::lstm::{lstm_cell, CellParams};
use csiforge::nn::transformer::{add_positional, decode_upsample, ffn, layer_norm, mhsa, patch_embed, ModelConfig};
use csiforge::nn::{Model, NetConfig, ParamStore};
use csiforge::objective::{
    corr_loss, corr_loss_grad, nmse, nmse_grad, smooth_loss, smooth_loss_grad, sp_nmse, sp_nmse_grad, total_loss,
    total_loss_grad, LossWeights,
};
use csiforge::rng::{complex_gaussian, stream};
use csiforge::{ComplexGrid, GridShape, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Entry {
    pub op: &'static str,
    pub shape: String,
    pub report: CheckReport,
}

fn randn(seed: u64, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let mut r = stream(seed, &[rows as u64, cols as u64]);
    Array2::from_shape_simple_fn((rows, cols), || scale * r.sample::<f64, _>(StandardNormal))
}

fn store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, &(name, r, c)) in shapes.iter().enumerate() {
        s.add(name, randn(seed.wrapping_add(i as u64 * 7919), r, c, 0.5)).unwrap();
    }
    s
}

fn cgrid(seed: u64, k: usize, l: usize) -> ComplexGrid {
    let mut r = stream(seed, &[k as u64, l as u64]);
    ComplexGrid::from_fn(GridShape::slice(k, l).unwrap(), |_, _, _, _| complex_gaussian(&mut r, 1.0))
}

const PER_TENSOR: usize = 12;

pub fn run_all() -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut push = |op: &'static str, shape: String, report: CheckReport| out.push(Entry { op, shape, report });

    for (i, &(rows, pd, d)) in [(6usize, 16usize, 8usize), (10, 6, 4), (3, 12, 12)].iter().enumerate() {
        let mut s = store(100 + i as u64, &[("embed.w", pd, d), ("embed.b", 1, d)]);
        let x = randn(1 + i as u64, rows, pd, 1.0);
        let r = grad_check(&[x], &mut s, |t, s, v| patch_embed(t, s, v[0]), i as u64, PER_TENSOR)?;
        push("patch_embed", format!("{rows}x{pd}->{d}"), r);
    }

    for (i, &(p, d, count)) in [(6usize, 8usize, 1usize), (4, 4, 3), (5, 12, 2)].iter().enumerate() {
        let mut s = store(200 + i as u64, &[("pos", p, d)]);
        let x = randn(11 + i as u64, p * count, d, 1.0);
        let r = grad_check(
            &[x],
            &mut s,
            |t, s, v| {
                let table = t.param(s, s.id("pos")?);
                add_positional(t, v[0], table, count)
            },
            i as u64,
            PER_TENSOR,
        )?;
        push("add_positional", format!("{count}x{p}x{d}"), r);
    }

    for (i, &(p, d, h, count)) in [(6usize, 8usize, 2usize, 1usize), (5, 12, 3, 2), (3, 4, 1, 3)].iter().enumerate() {
        let mut s = store(
            300 + i as u64,
            &[("a.wqkv", d, 3 * d), ("a.bqkv", 1, 3 * d), ("a.wo", d, d), ("a.bo", 1, d)],
        );
        let x = randn(21 + i as u64, p * count, d, 1.0);
        let r = grad_check(&[x], &mut s, |t, s, v| mhsa(t, s, "a", v[0], count, h), i as u64, PER_TENSOR)?;
        push("attention", format!("{count}x{p}x{d} h{h}"), r);
    }

    for (i, &(rows, d)) in [(4usize, 8usize), (7, 3), (2, 16)].iter().enumerate() {
        let mut s = store(400 + i as u64, &[("n.g", 1, d), ("n.b", 1, d)]);
        let x = randn(31 + i as u64, rows, d, 2.0);
        let r = grad_check(&[x], &mut s, |t, s, v| layer_norm(t, s, "n", v[0]), i as u64, PER_TENSOR)?;
        push("layer_norm", format!("{rows}x{d}"), r);
    }

    for (i, &(rows, d, ff)) in [(4usize, 8usize, 16usize), (6, 4, 5), (3, 10, 20)].iter().enumerate() {
        let mut s = store(500 + i as u64, &[("f.w1", d, ff), ("f.b1", 1, ff), ("f.w2", ff, d), ("f.b2", 1, d)]);
        let x = randn(41 + i as u64, rows, d, 1.0);
        let r = grad_check(&[x], &mut s, |t, s, v| ffn(t, s, "f", v[0]), i as u64, PER_TENSOR)?;
        push("ffn", format!("{rows}x{d}x{ff}"), r);
    }

    for (i, &(k, l, pk, pl, d)) in [(8usize, 4usize, 4usize, 2usize, 8usize), (6, 6, 3, 3, 4), (4, 2, 1, 2, 12)].iter().enumerate() {
        let cfg = ModelConfig { k, l, patch_k: pk, patch_l: pl, d_model: d, layers: 1, heads: 1, d_ff: 4, learned_pos: false };
        let mut s = store(600 + i as u64, &[("decoder.w", d, 2 * pk * pl), ("decoder.b", 1, 2)]);
        let x = randn(51 + i as u64, cfg.tokens() * 2, d, 1.0);
        let r = grad_check(&[x], &mut s, |t, s, v| decode_upsample(t, s, &cfg, v[0]), i as u64, PER_TENSOR)?;
        push("decoder", format!("{k}x{l} patch {pk}x{pl} d{d}"), r);
    }

    for (i, &(rows, inp, hd)) in [(3usize, 2usize, 4usize), (5, 6, 3), (2, 4, 8)].iter().enumerate() {
        let mut s = store(700 + i as u64, &[("lstm.l0.wx", inp, 4 * hd), ("lstm.l0.wh", hd, 4 * hd), ("lstm.l0.b", 1, 4 * hd)]);
        let xs = [randn(61 + i as u64, rows, inp, 1.0), randn(71 + i as u64, rows, hd, 0.5), randn(81 + i as u64, rows, hd, 1.0)];
        let r = grad_check(
            &xs,
            &mut s,
            |t, s, v| {
                let p = CellParams::load(t, s, 0)?;
                let (h, c) = lstm_cell(t, p, v[0], v[1], v[2])?;
                t.concat_cols(&[h, c])
            },
            i as u64,
            PER_TENSOR,
        )?;
        push("lstm_cell", format!("{rows}x{inp} hidden {hd}"), r);
    }

    let w = LossWeights::default();
    for (i, &(k, l)) in [(4usize, 3usize), (8, 2), (5, 5)].iter().enumerate() {
        let x = cgrid(900 + i as u64, k, l);
        let h = cgrid(950 + i as u64, k, l);
        let shape = format!("{k}x{l}");
        let g = nmse_grad(&x, &h)?.1;
        push("nmse", shape.clone(), grid_grad_check(&x, |e| nmse(e, &h), &g, 16, i as u64)?);
        let g = sp_nmse_grad(&x, &h)?.2;
        push("sp_nmse", shape.clone(), grid_grad_check(&x, |e| Ok(sp_nmse(e, &h)?.0), &g, 16, i as u64)?);
        let g = corr_loss_grad(&x, &h)?.1;
        push("corr", shape.clone(), grid_grad_check(&x, |e| corr_loss(e, &h), &g, 16, i as u64)?);
        let g = smooth_loss_grad(&x, &w).1;
        push("smooth", shape.clone(), grid_grad_check(&x, |e| Ok(smooth_loss(e, &w)), &g, 16, i as u64)?);
        let g = total_loss_grad(&x, &h, &w)?.1;
        push("total", shape, grid_grad_check(&x, |e| Ok(total_loss(e, &h, &w)?.total), &g, 16, i as u64)?);
    }

    for (i, &(name, k, l)) in [("transformer", 8usize, 4usize), ("transformer", 16, 6), ("transformer", 48, 14), ("lstm", 6, 3), ("lstm", 12, 4), ("lstm", 48, 14)]
        .iter()
        .enumerate()
    {
        let mut m = Model::new(&NetConfig::default_for(name, k, l)?, 1000 + i as u64)?;
        let xs = [cgrid(1100 + i as u64, k, l), cgrid(1200 + i as u64, k, l)];
        let hs = [cgrid(1300 + i as u64, k, l), cgrid(1400 + i as u64, k, l)];
        let r = model_grad_check(&mut m, &[&xs[0], &xs[1]], &[&hs[0], &hs[1]], &w, 20, i as u64)?;
        push(if name == "lstm" { "model_lstm" } else { "model_transformer" }, format!("{k}x{l}"), r);
    }

    Ok(out)
}
