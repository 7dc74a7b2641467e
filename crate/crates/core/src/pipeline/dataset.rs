//! Paired `(interpolated sparse-pilot estimate, true channel)` samples and
//! their binary file format.
//!
//! Layout: `CSIDSET1`, then little-endian u32 version, K, L, nRx, nTx, u64
//! sample count and f32 nominal SNR (40 bytes). Each sample stores the input
//! then the target, K*L complex values in k-fastest order, f32 real then f32
//! imaginary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::parallel_map;
use crate::channel::{draw_effective_snr, gen_window, ChannelConfig};
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::pilots::{build_window_mask, gen_pilot_symbols, interp_sparse, ls_at_pilots, observe, NoiseSpec, PilotConfig};
use crate::rng::{self, derive_seed, tag};

pub const MAGIC: &[u8; 8] = b"CSIDSET1";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 40;
/// Slots per processing window: one pilot-bearing slot and one held slot.
pub const WINDOW_SLOTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub realization: u64,
    pub seed: u64,
    pub snr_db: f64,
    pub rx: usize,
    pub tx: usize,
    /// Slot of the processing window this sample covers.
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: ComplexGrid,
    pub target: ComplexGrid,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub l: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub snr_db: f32,
    pub samples: Vec<SamplePair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn slice_shape(&self) -> GridShape {
        GridShape { k: self.k, l: self.l, n_rx: 1, n_tx: 1 }
    }

    /// Samples grouped by realization, in first-seen order.
    pub fn realizations(&self) -> Vec<u64> {
        let mut set = std::collections::HashSet::new();
        self.samples.iter().map(|s| s.meta.realization).filter(|r| set.insert(*r)).collect()
    }

    pub fn subset(&self, keep: impl Fn(&SamplePair) -> bool) -> Dataset {
        Dataset { samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(), ..self.header_only() }
    }

    fn header_only(&self) -> Dataset {
        Dataset { k: self.k, l: self.l, n_rx: self.n_rx, n_tx: self.n_tx, snr_db: self.snr_db, samples: Vec::new() }
    }
}

/// Everything needed to synthesize samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub channel: ChannelConfig,
    pub sparse: PilotConfig,
    pub dense: PilotConfig,
}

impl GenConfig {
    pub fn desk_default() -> Self {
        Self { channel: ChannelConfig::desk_default(), sparse: PilotConfig::sparse(), dense: PilotConfig::dense() }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.sparse.validate(&self.channel.shape)?;
        self.dense.validate(&self.channel.shape)
    }
}

fn to_f32(v: Complex64) -> Complex64 {
    Complex64::new(v.re as f32 as f64, v.im as f32 as f64)
}

/// One realization: a two-slot fading window, sparse observation, LS,
/// interpolation and hold. Returns one sample per antenna pair, cut from
/// slot `index mod 2` of the window so both pilot and held slots appear.
pub fn generate_realization(cfg: &GenConfig, master_seed: u64, index: u64) -> Result<Vec<SamplePair>> {
    let seed = derive_seed(master_seed, &[tag::REALIZATION, index]);
    let shape = cfg.channel.shape;
    let h = gen_window(&cfg.channel, WINDOW_SLOTS, seed)?;
    let snr_db = draw_effective_snr(&cfg.channel, seed)?;
    let mask = gen_pilot_symbols(build_window_mask(&cfg.sparse, &shape, 0, WINDOW_SLOTS)?, seed);
    let y = observe(&h, &mask, NoiseSpec::from_snr_db(snr_db), seed)?;
    let input = interp_sparse(&ls_at_pilots(&y, &mask)?, &mask, h.shape())?;
    let slot = (index as usize) % WINDOW_SLOTS;
    let mut out = Vec::with_capacity(shape.pairs());
    for r in 0..shape.n_rx {
        for t in 0..shape.n_tx {
            let cut = |g: &ComplexGrid| -> Result<ComplexGrid> { Ok(g.pair(r, t).symbols(slot * shape.l, shape.l)?.map(to_f32)) };
            out.push(SamplePair {
                input: cut(&input)?,
                target: cut(&h)?,
                meta: SampleMeta { realization: index, seed, snr_db, rx: r, tx: t, slot },
            });
        }
    }
    Ok(out)
}

/// `realizations` windows, each contributing nRx*nTx samples, ordered by
/// realization then antenna pair. Values are rounded to f32 so the
/// in-memory dataset equals what the file stores.
pub fn generate_dataset(cfg: &GenConfig, realizations: usize, master_seed: u64, threads: usize) -> Result<Dataset> {
    if realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    cfg.validate()?;
    let parts = parallel_map(realizations, threads, |i| generate_realization(cfg, master_seed, i as u64))?;
    let s = cfg.channel.shape;
    Ok(Dataset {
        k: s.k,
        l: s.l,
        n_rx: s.n_rx,
        n_tx: s.n_tx,
        snr_db: cfg.channel.nominal_snr_db as f32,
        samples: parts.into_iter().flatten().collect(),
    })
}

pub fn file_size(k: usize, l: usize, count: usize) -> u64 {
    HEADER_BYTES + (count * 2 * k * l * 8) as u64
}

pub fn to_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(file_size(d.k, d.l, d.len()) as usize);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, d.k as u32, d.l as u32, d.n_rx as u32, d.n_tx as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.extend_from_slice(&d.snr_db.to_le_bytes());
    let shape = d.slice_shape();
    for s in &d.samples {
        for g in [&s.input, &s.target] {
            if g.shape() != shape {
                return Err(Error::ShapeMismatch { left: g.shape(), right: shape });
            }
            for v in g.values() {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a dataset; per-sample metadata other than the index is not stored
/// in the file and comes back as defaults (realization = sample index).
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: String::from_utf8_lossy(MAGIC).into() });
    }
    if (bytes.len() as u64) < HEADER_BYTES {
        return Err(Error::Truncated { expected: HEADER_BYTES, found: bytes.len() as u64 });
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let (k, l, n_rx, n_tx) = (u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize, u32_at(bytes, 20) as usize, u32_at(bytes, 24) as usize);
    let count = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
    let snr_db = f32::from_le_bytes(bytes[36..40].try_into().expect("4 bytes"));
    let shape = GridShape::new(k, l, 1, 1).map_err(|e| Error::Malformed(format!("header: {e}")))?;
    if n_rx == 0 || n_tx == 0 {
        return Err(Error::Malformed("header: zero antennas".into()));
    }
    let expected = (count as u128) * 2 * (k * l * 8) as u128 + HEADER_BYTES as u128;
    if (bytes.len() as u128) < expected {
        return Err(Error::Truncated { expected: expected.min(u64::MAX as u128) as u64, found: bytes.len() as u64 });
    }
    if (bytes.len() as u128) > expected {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() as u128 - expected)));
    }
    let per = k * l;
    let mut at = HEADER_BYTES as usize;
    let mut read_grid = || -> Result<ComplexGrid> {
        let vals = (0..per)
            .map(|i| {
                let o = at + 8 * i;
                let re = f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
                let im = f32::from_le_bytes(bytes[o + 4..o + 8].try_into().expect("4 bytes"));
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        at += 8 * per;
        ComplexGrid::from_vec(shape, vals)
    };
    let pairs = n_rx * n_tx;
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let input = read_grid()?;
        let target = read_grid()?;
        if !target.is_finite() {
            return Err(Error::Malformed(format!("sample {i} has a non-finite target")));
        }
        let meta = SampleMeta {
            realization: (i / pairs) as u64,
            seed: 0,
            snr_db: snr_db as f64,
            rx: (i % pairs) / n_tx,
            tx: i % n_tx,
            slot: (i / pairs) % WINDOW_SLOTS,
        };
        samples.push(SamplePair { input, target, meta });
    }
    Ok(Dataset { k, l, n_rx, n_tx, snr_db, samples })
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(d)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, path)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.txt");
    PathBuf::from(s)
}

/// Seeds and the generating configuration as `key = value` lines.
pub fn sidecar_text(cfg: &GenConfig, realizations: usize, master_seed: u64, config_echo: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = CSIDSET1 v{VERSION}");
    let _ = writeln!(s, "master_seed = {master_seed}");
    let _ = writeln!(s, "realizations = {realizations}");
    let _ = writeln!(s, "samples = {}", realizations * cfg.channel.shape.pairs());
    let _ = writeln!(s, "window_slots = {WINDOW_SLOTS}");
    let _ = writeln!(s, "realization_seed = derive(master_seed, [{}, index])", tag::REALIZATION);
    let _ = writeln!(
        s,
        "generator = {}",
        serde_json::to_string(cfg).map_err(|e| e.to_string()).unwrap_or_default()
    );
    s.push_str(config_echo);
    s
}

/// Split fractions or explicit counts, applied to realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    Fractions { train: f64, val: f64 },
    Counts { train: usize, val: usize, test: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions { train: 0.8, val: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle of realizations into train/val/test; all antenna pairs of
/// a realization land in the same partition.
pub fn split_dataset(d: &Dataset, spec: SplitSpec, seed: u64) -> Result<Split> {
    use rand::seq::SliceRandom;
    let mut reals = d.realizations();
    let n = reals.len();
    let (a, b, c) = match spec {
        SplitSpec::Fractions { train, val } => {
            if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
                return Err(Error::Config(format!("bad split fractions {train}/{val}")));
            }
            let a = (train * n as f64).round() as usize;
            let b = ((val * n as f64).round() as usize).min(n - a);
            (a, b, n - a - b)
        }
        SplitSpec::Counts { train, val, test } => {
            if train + val + test > n {
                return Err(Error::Config(format!("split {train}+{val}+{test} exceeds {n} realizations")));
            }
            (train, val, test)
        }
    };
    let mut r = rng::stream(seed, &[tag::SPLIT]);
    reals.shuffle(&mut r);
    let part = |ids: &[u64]| {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        d.subset(|s| sorted.binary_search(&s.meta.realization).is_ok())
    };
    Ok(Split { train: part(&reals[..a]), val: part(&reals[a..a + b]), test: part(&reals[a + b..a + b + c]) })
}
