//! Patch-attention encoder: patch embedding, positional table, pre-norm
//! encoder layers and a stride-equals-kernel transposed-convolution decoder.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::params::{init_normal, ParamStore};
use super::tape::{Tape, Var};
use super::Architecture;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub l: usize,
    pub patch_k: usize,
    pub patch_l: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Learn the positional table instead of using the fixed sinusoidal one.
    #[serde(default)]
    pub learned_pos: bool,
}

impl ModelConfig {
    pub fn desk(k: usize, l: usize) -> Self {
        Self { k, l, patch_k: 4, patch_l: 2, d_model: 64, layers: 4, heads: 4, d_ff: 128, learned_pos: false }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_k == 0 || self.patch_l == 0 || self.k % self.patch_k != 0 || self.l % self.patch_l != 0 {
            return bad(format!(
                "grid {}x{} is not divisible into {}x{} patches",
                self.k, self.l, self.patch_k, self.patch_l
            ));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.d_model < 4 || self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be a positive multiple of 4", self.d_model));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.k / self.patch_k) * (self.l / self.patch_l)
    }

    /// Real features per patch (two channels).
    pub fn patch_dim(&self) -> usize {
        self.patch_k * self.patch_l * 2
    }
}

/// Fixed 2-D sinusoidal table: the first half of the channels encodes the
/// frequency-patch index, the second half the time-patch index.
pub fn sinusoidal_table(cfg: &ModelConfig) -> Array2<f64> {
    let (nk, nl) = (cfg.k / cfg.patch_k, cfg.l / cfg.patch_l);
    let half = cfg.d_model / 2;
    let mut t = Array2::zeros((nk * nl, cfg.d_model));
    for ik in 0..nk {
        for il in 0..nl {
            let row = ik * nl + il;
            for (offset, pos) in [(0, ik), (half, il)] {
                for i in 0..half / 2 {
                    let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64);
                    t[[row, offset + 2 * i]] = (pos as f64 * freq).sin();
                    t[[row, offset + 2 * i + 1]] = (pos as f64 * freq).cos();
                }
            }
        }
    }
    t
}

/// Rows are tokens (frequency-patch major), columns `(dk * patch_l + dl) * 2 + channel`.
pub fn patchify(cfg: &ModelConfig, grids: &[&ComplexGrid]) -> Result<Array2<f64>> {
    let p = cfg.tokens();
    let nl = cfg.l / cfg.patch_l;
    let mut out = Array2::zeros((grids.len() * p, cfg.patch_dim()));
    for (b, g) in grids.iter().enumerate() {
        let s = g.shape();
        if s.k != cfg.k || s.l != cfg.l || s.pairs() != 1 {
            return Err(Error::InvalidArgument(format!(
                "model expects a {}x{} single-pair slice, got {s}",
                cfg.k, cfg.l
            )));
        }
        for k in 0..cfg.k {
            for l in 0..cfg.l {
                let v = g.get(k, l, 0, 0);
                let row = b * p + (k / cfg.patch_k) * nl + l / cfg.patch_l;
                let col = ((k % cfg.patch_k) * cfg.patch_l + l % cfg.patch_l) * 2;
                out[[row, col]] = v.re;
                out[[row, col + 1]] = v.im;
            }
        }
    }
    Ok(out)
}

pub fn unpatchify(cfg: &ModelConfig, m: &Array2<f64>, count: usize) -> Result<Vec<ComplexGrid>> {
    let p = cfg.tokens();
    if m.dim() != (count * p, cfg.patch_dim()) {
        return Err(Error::InvalidArgument(format!("decoder output has shape {:?}", m.dim())));
    }
    let nl = cfg.l / cfg.patch_l;
    let shape = GridShape::slice(cfg.k, cfg.l)?;
    Ok((0..count)
        .map(|b| {
            ComplexGrid::from_fn(shape, |k, l, _, _| {
                let row = b * p + (k / cfg.patch_k) * nl + l / cfg.patch_l;
                let col = ((k % cfg.patch_k) * cfg.patch_l + l % cfg.patch_l) * 2;
                Complex64::new(m[[row, col]], m[[row, col + 1]])
            })
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub cfg: ModelConfig,
    table: Array2<f64>,
}

impl Transformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let table = sinusoidal_table(&cfg);
        Ok(Self { cfg, table })
    }
}

fn param(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    Ok(tape.param(store, store.id(name)?))
}

/// `z_p = W_e x_p + b_e` for every patch row of `x`.
pub fn patch_embed(tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
    let w = param(tape, store, "embed.w")?;
    let b = param(tape, store, "embed.b")?;
    let z = tape.matmul(x, w)?;
    tape.add_row(z, b)
}

/// Adds a `tokens x d` table to each of the `count` stacked sequences.
pub fn add_positional(tape: &mut Tape, tokens: Var, table: Var, count: usize) -> Result<Var> {
    let tiled = tape.tile_rows(table, count)?;
    tape.add(tokens, tiled)
}

/// Multi-head self-attention with output projection (no residual).
pub fn mhsa(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, count: usize, heads: usize) -> Result<Var> {
    let d = tape.value(x).ncols();
    let wqkv = param(tape, store, &format!("{prefix}.wqkv"))?;
    let bqkv = param(tape, store, &format!("{prefix}.bqkv"))?;
    let qkv = tape.matmul(x, wqkv)?;
    let qkv = tape.add_row(qkv, bqkv)?;
    let q = tape.slice_cols(qkv, 0, d)?;
    let k = tape.slice_cols(qkv, d, d)?;
    let v = tape.slice_cols(qkv, 2 * d, d)?;
    let a = tape.attention(q, k, v, count, heads)?;
    let wo = param(tape, store, &format!("{prefix}.wo"))?;
    let bo = param(tape, store, &format!("{prefix}.bo"))?;
    let o = tape.matmul(a, wo)?;
    tape.add_row(o, bo)
}

/// Two-layer feedforward block with GELU.
pub fn ffn(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w1 = param(tape, store, &format!("{prefix}.w1"))?;
    let b1 = param(tape, store, &format!("{prefix}.b1"))?;
    let w2 = param(tape, store, &format!("{prefix}.w2"))?;
    let b2 = param(tape, store, &format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let g = param(tape, store, &format!("{prefix}.g"))?;
    let b = param(tape, store, &format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b)
}

/// `layers` pre-norm encoder layers.
pub fn encoder_forward(tape: &mut Tape, store: &ParamStore, cfg: &ModelConfig, mut x: Var, count: usize) -> Result<Var> {
    for i in 0..cfg.layers {
        let h = layer_norm(tape, store, &format!("layer{i}.ln1"), x)?;
        let a = mhsa(tape, store, &format!("layer{i}.attn"), h, count, cfg.heads)?;
        x = tape.add(x, a)?;
        let h = layer_norm(tape, store, &format!("layer{i}.ln2"), x)?;
        let f = ffn(tape, store, &format!("layer{i}.ffn"), h)?;
        x = tape.add(x, f)?;
        if tape.value(x).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite activations in encoder layer {i}")));
        }
    }
    Ok(x)
}

/// Per-token linear map back to a patch; the two output-channel biases are
/// shared by every position in the patch.
pub fn decode_upsample(tape: &mut Tape, store: &ParamStore, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let w = param(tape, store, "decoder.w")?;
    let b = param(tape, store, "decoder.b")?;
    let y = tape.matmul(x, w)?;
    let reps: Vec<Var> = vec![b; cfg.patch_k * cfg.patch_l];
    let bias = tape.concat_cols(&reps)?;
    tape.add_row(y, bias)
}

impl Architecture for Transformer {
    fn name(&self) -> &'static str {
        "transformer"
    }

    fn grid(&self) -> (usize, usize) {
        (self.cfg.k, self.cfg.l)
    }

    fn init(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.cfg;
        let d = c.d_model;
        let mut r = rng::stream(seed, &[tag::INIT]);
        let mut s = ParamStore::new();
        let zeros = |n| Array2::zeros((1, n));
        let ones = |n| Array2::ones((1, n));
        let resid_gain = 1.0 / ((2 * c.layers.max(1)) as f64).sqrt();
        s.add("embed.w", init_normal(&mut r, c.patch_dim(), d, 1.0))?;
        s.add("embed.b", zeros(d))?;
        if c.learned_pos {
            s.add("pos", self.table.clone())?;
        }
        for i in 0..c.layers {
            s.add(&format!("layer{i}.ln1.g"), ones(d))?;
            s.add(&format!("layer{i}.ln1.b"), zeros(d))?;
            s.add(&format!("layer{i}.attn.wqkv"), init_normal(&mut r, d, 3 * d, 1.0))?;
            s.add(&format!("layer{i}.attn.bqkv"), zeros(3 * d))?;
            s.add(&format!("layer{i}.attn.wo"), init_normal(&mut r, d, d, resid_gain))?;
            s.add(&format!("layer{i}.attn.bo"), zeros(d))?;
            s.add(&format!("layer{i}.ln2.g"), ones(d))?;
            s.add(&format!("layer{i}.ln2.b"), zeros(d))?;
            s.add(&format!("layer{i}.ffn.w1"), init_normal(&mut r, d, c.d_ff, 1.0))?;
            s.add(&format!("layer{i}.ffn.b1"), zeros(c.d_ff))?;
            s.add(&format!("layer{i}.ffn.w2"), init_normal(&mut r, c.d_ff, d, resid_gain))?;
            s.add(&format!("layer{i}.ffn.b2"), zeros(d))?;
        }
        s.add("decoder.w", init_normal(&mut r, d, c.patch_dim(), 1.0))?;
        s.add("decoder.b", zeros(2))?;
        Ok(s)
    }

    fn encode(&self, grids: &[&ComplexGrid]) -> Result<Array2<f64>> {
        patchify(&self.cfg, grids)
    }

    fn decode(&self, m: &Array2<f64>, count: usize) -> Result<Vec<ComplexGrid>> {
        unpatchify(&self.cfg, m, count)
    }

    fn graph(&self, tape: &mut Tape, store: &ParamStore, x: Var, count: usize) -> Result<Var> {
        let z = patch_embed(tape, store, x)?;
        let table = if self.cfg.learned_pos {
            param(tape, store, "pos")?
        } else {
            tape.input(self.table.clone())
        };
        let z = add_positional(tape, z, table, count)?;
        let z = encoder_forward(tape, store, &self.cfg, z, count)?;
        decode_upsample(tape, store, &self.cfg, z)
    }

    fn config(&self) -> super::NetConfig {
        super::NetConfig::Transformer(self.cfg.clone())
    }
}
