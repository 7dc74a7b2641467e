//! Two-layer LSTM run along the subcarrier axis of each OFDM symbol, on the
//! two-channel real representation.

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
pub struct LstmConfig {
    pub k: usize,
    pub l: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl LstmConfig {
    pub fn desk(k: usize, l: usize) -> Self {
        Self { k, l, hidden: 32, layers: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("invalid LSTM configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub cfg: LstmConfig,
}

impl Lstm {
    pub fn new(cfg: LstmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

/// Handles to one layer's weights on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CellParams {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

impl CellParams {
    pub fn load(tape: &mut Tape, store: &ParamStore, layer: usize) -> Result<Self> {
        Ok(Self {
            wx: tape.param(store, store.id(&format!("lstm.l{layer}.wx"))?),
            wh: tape.param(store, store.id(&format!("lstm.l{layer}.wh"))?),
            b: tape.param(store, store.id(&format!("lstm.l{layer}.b"))?),
        })
    }
}

/// One LSTM step with gates ordered input, forget, cell, output.
/// Returns `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, p: CellParams, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = tape.value(h).ncols();
    let gx = tape.matmul(x, p.wx)?;
    let gh = tape.matmul(h, p.wh)?;
    let g = tape.add(gx, gh)?;
    let g = tape.add_row(g, p.b)?;
    let i = tape.slice_cols(g, 0, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(g, hidden, hidden)?;
    let f = tape.sigmoid(f);
    let cand = tape.slice_cols(g, 2 * hidden, hidden)?;
    let cand = tape.tanh(cand);
    let o = tape.slice_cols(g, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Rows are `(sample, symbol)` sequences, columns `2k + channel`.
pub fn sequences(cfg: &LstmConfig, grids: &[&ComplexGrid]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((grids.len() * cfg.l, 2 * cfg.k));
    for (b, g) in grids.iter().enumerate() {
        let s = g.shape();
        if s.k != cfg.k || s.l != cfg.l || s.pairs() != 1 {
            return Err(Error::InvalidArgument(format!(
                "LSTM expects a {}x{} single-pair slice, got {s}",
                cfg.k, cfg.l
            )));
        }
        for l in 0..cfg.l {
            for (k, v) in g.symbol(l, 0, 0).iter().enumerate() {
                out[[b * cfg.l + l, 2 * k]] = v.re;
                out[[b * cfg.l + l, 2 * k + 1]] = v.im;
            }
        }
    }
    Ok(out)
}

impl Architecture for Lstm {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn grid(&self) -> (usize, usize) {
        (self.cfg.k, self.cfg.l)
    }

    fn init(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.cfg;
        let hd = c.hidden;
        let mut r = rng::stream(seed, &[tag::INIT]);
        let mut s = ParamStore::new();
        for layer in 0..c.layers {
            let input = if layer == 0 { 2 } else { hd };
            s.add(&format!("lstm.l{layer}.wx"), init_normal(&mut r, input, 4 * hd, 1.0))?;
            s.add(&format!("lstm.l{layer}.wh"), init_normal(&mut r, hd, 4 * hd, 1.0))?;
            // Forget-gate bias starts at one.
            let mut b = Array2::zeros((1, 4 * hd));
            b.slice_mut(ndarray::s![.., hd..2 * hd]).fill(1.0);
            s.add(&format!("lstm.l{layer}.b"), b)?;
        }
        s.add("lstm.out.w", init_normal(&mut r, hd, 2, 1.0))?;
        s.add("lstm.out.b", Array2::zeros((1, 2)))?;
        Ok(s)
    }

    fn encode(&self, grids: &[&ComplexGrid]) -> Result<Array2<f64>> {
        sequences(&self.cfg, grids)
    }

    fn decode(&self, m: &Array2<f64>, count: usize) -> Result<Vec<ComplexGrid>> {
        let c = &self.cfg;
        if m.dim() != (count * c.l, 2 * c.k) {
            return Err(Error::InvalidArgument(format!("LSTM output has shape {:?}", m.dim())));
        }
        let shape = GridShape::slice(c.k, c.l)?;
        Ok((0..count)
            .map(|b| {
                ComplexGrid::from_fn(shape, |k, l, _, _| Complex64::new(m[[b * c.l + l, 2 * k]], m[[b * c.l + l, 2 * k + 1]]))
            })
            .collect())
    }

    fn graph(&self, tape: &mut Tape, store: &ParamStore, x: Var, _count: usize) -> Result<Var> {
        let c = &self.cfg;
        let rows = tape.value(x).nrows();
        let cells: Vec<CellParams> = (0..c.layers).map(|i| CellParams::load(tape, store, i)).collect::<Result<_>>()?;
        let wo = tape.param(store, store.id("lstm.out.w")?);
        let bo = tape.param(store, store.id("lstm.out.b")?);
        let zero = tape.input(Array2::zeros((rows, c.hidden)));
        let mut state = vec![(zero, zero); c.layers];
        let mut outputs = Vec::with_capacity(c.k);
        for k in 0..c.k {
            let mut inp = tape.slice_cols(x, 2 * k, 2)?;
            for (layer, p) in cells.iter().enumerate() {
                let (h, cc) = lstm_cell(tape, *p, inp, state[layer].0, state[layer].1)?;
                state[layer] = (h, cc);
                inp = h;
            }
            let y = tape.matmul(inp, wo)?;
            outputs.push(tape.add_row(y, bo)?);
        }
        tape.concat_cols(&outputs)
    }

    fn config(&self) -> super::NetConfig {
        super::NetConfig::Lstm(self.cfg.clone())
    }
}
