//! Run configuration: a TOML document with the sections `channel`, `pilots`,
//! `model`, `train` and `eval`. Every key has a desk-scale default, unknown
//! keys are rejected, and `section.key=value` overrides apply on top.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::nn::{AdamConfig, LstmConfig, ModelConfig, NetConfig};
use crate::objective::{LossWeights, PrimaryLoss};
use crate::pilots::{Density, PilotConfig};
use crate::pipeline::{EvalOptions, GenConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub k: usize,
    pub l: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub subcarrier_spacing_hz: f64,
    pub tau_rms_ns: f64,
    pub max_doppler_hz: f64,
    pub snr_db: f64,
    pub shadowing_std_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            k: 48,
            l: 14,
            n_rx: 1,
            n_tx: 1,
            subcarrier_spacing_hz: 15e3,
            tau_rms_ns: 251.0,
            max_doppler_hz: 50.0,
            snr_db: 15.0,
            shadowing_std_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotSpec {
    pub comb: usize,
    pub comb_offset: usize,
    pub num_symbols: usize,
    pub start_symbol: usize,
    pub slot_period: usize,
}

impl PilotSpec {
    fn from_config(c: &PilotConfig) -> Self {
        Self {
            comb: c.comb,
            comb_offset: c.comb_offset,
            num_symbols: c.num_symbols,
            start_symbol: c.start_symbol,
            slot_period: c.slot_period,
        }
    }

    fn to_config(&self, label: Density) -> PilotConfig {
        PilotConfig {
            comb: self.comb,
            comb_offset: self.comb_offset,
            num_symbols: self.num_symbols,
            start_symbol: self.start_symbol,
            slot_period: self.slot_period,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PilotsSection {
    pub sparse: PilotSpec,
    pub dense: PilotSpec,
}

impl Default for PilotsSection {
    fn default() -> Self {
        Self { sparse: PilotSpec::from_config(&PilotConfig::sparse()), dense: PilotSpec::from_config(&PilotConfig::dense()) }
    }
}

/// Hyperparameters for both architectures; `arch` picks which apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: String,
    pub patch_k: usize,
    pub patch_l: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub learned_pos: bool,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = ModelConfig::desk(1, 1);
        let l = LstmConfig::desk(1, 1);
        Self {
            arch: "transformer".into(),
            patch_k: t.patch_k,
            patch_l: t.patch_l,
            d_model: t.d_model,
            layers: t.layers,
            heads: t.heads,
            d_ff: t.d_ff,
            learned_pos: t.learned_pos,
            lstm_hidden: l.hidden,
            lstm_layers: l.layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// `"sp-nmse"` or `"nmse"`.
    pub primary: String,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_t: f64,
    pub lambda_f: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = AdamConfig::default();
        let w = LossWeights::default();
        Self {
            epochs: 12,
            batch_size: 16,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            seed: 0,
            primary: "sp-nmse".into(),
            beta: w.beta,
            gamma: w.gamma,
            lambda_t: w.lambda_t,
            lambda_f: w.lambda_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub estimators: Vec<String>,
    /// Link SNR points for BER; empty means the dataset SNR.
    pub ber_snr_db: Vec<f64>,
    pub ber_bits: u64,
    pub seed: u64,
    pub heatmaps: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { estimators: EvalOptions::all_estimators(), ber_snr_db: Vec::new(), ber_bits: 100_000, seed: 0, heatmaps: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub channel: ChannelSection,
    pub pilots: PilotsSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

fn parse_value(raw: &str) -> toml::Value {
    // Bare words that are not valid TOML values are taken as strings.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses `text` and applies `section.key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, raw) =
                o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not section.key=value")))?;
            let mut parts: Vec<&str> = path.trim().split('.').collect();
            let key = parts.pop().filter(|k| !k.is_empty() && !parts.is_empty()).ok_or_else(|| {
                Error::Config(format!("override {o:?} needs a section, as in train.epochs=5"))
            })?;
            let mut node = &mut table;
            for p in parts {
                node = node
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{p} is not a section")))?;
            }
            node.insert(key.to_string(), parse_value(raw.trim()));
        }
        // Layer over the defaults so partially given tables keep their other fields.
        let mut full = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        merge(&mut full, table);
        let cfg: RunConfig = toml::Value::Table(full).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    /// Resolved configuration as TOML; identical configs give identical text.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config()?.validate()?;
        self.net_config()?;
        self.train_config()?.validate()?;
        for e in &self.eval.estimators {
            if !crate::estimators::ESTIMATORS.contains(&e.as_str()) {
                return Err(Error::UnknownName {
                    kind: "estimator",
                    name: e.clone(),
                    known: crate::estimators::ESTIMATORS.join(", "),
                });
            }
        }
        Ok(())
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        let c = &self.channel;
        let shape = GridShape::new(c.k, c.l, c.n_rx, c.n_tx)?;
        let mut channel =
            ChannelConfig::tdlc(shape, c.subcarrier_spacing_hz, c.tau_rms_ns * 1e-9, c.max_doppler_hz, c.snr_db)?;
        channel.shadowing_std_db = c.shadowing_std_db;
        let g = GenConfig {
            channel,
            sparse: self.pilots.sparse.to_config(Density::Sparse),
            dense: self.pilots.dense.to_config(Density::Dense),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let m = &self.model;
        let (k, l) = (self.channel.k, self.channel.l);
        let cfg = match m.arch.as_str() {
            "transformer" => NetConfig::Transformer(ModelConfig {
                k,
                l,
                patch_k: m.patch_k,
                patch_l: m.patch_l,
                d_model: m.d_model,
                layers: m.layers,
                heads: m.heads,
                d_ff: m.d_ff,
                learned_pos: m.learned_pos,
            }),
            "lstm" => NetConfig::Lstm(LstmConfig { k, l, hidden: m.lstm_hidden, layers: m.lstm_layers }),
            other => NetConfig::default_for(other, k, l)?,
        };
        cfg.build()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let primary = match t.primary.as_str() {
            "sp-nmse" => PrimaryLoss::SpNmse,
            "nmse" => PrimaryLoss::Nmse,
            other => {
                return Err(Error::UnknownName { kind: "primary loss", name: other.into(), known: "sp-nmse, nmse".into() })
            }
        };
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps, weight_decay: t.weight_decay },
            seed: t.seed,
            loss: LossWeights { beta: t.beta, gamma: t.gamma, lambda_t: t.lambda_t, lambda_f: t.lambda_f, primary },
            model: self.net_config()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_options(&self, heatmap_dir: Option<std::path::PathBuf>, threads: usize) -> EvalOptions {
        EvalOptions {
            estimators: self.eval.estimators.clone(),
            ber_snr_db: self.eval.ber_snr_db.clone(),
            ber_bits: self.eval.ber_bits,
            seed: self.eval.seed,
            heatmap_dir: if self.eval.heatmaps { heatmap_dir } else { None },
            threads,
        }
    }
}
