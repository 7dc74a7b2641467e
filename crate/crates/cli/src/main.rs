//! `csiforge`: dataset generation, training, evaluation and rate sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csiforge::config::RunConfig;
use csiforge::estimators::{needs_model, EstimatorContext};
use csiforge::nn::{self, Model};
use csiforge::pilots::overhead_fraction;
use csiforge::pipeline::{self, evaluate, generate_dataset, read_dataset, sidecar_path, sidecar_text, train, write_dataset};
use csiforge::rate::{self, RateParams};
use csiforge::{grid::db_to_linear, Error};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "csiforge", version, about = "Sparse-pilot MIMO-OFDM channel estimation workbench")]
struct Cli {
    /// TOML run configuration (sections channel, pilots, model, train, eval).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, as in `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for generation and evaluation (default: CSIFORGE_THREADS or all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a dataset file and its metadata sidecar.
    Gen(GenArgs),
    /// Train a model on a dataset file.
    Train(TrainArgs),
    /// Evaluate estimators and write the CSV report set.
    Eval(EvalArgs),
    /// Rate gain from pilot reduction, with a sweep over the pilot fraction.
    Rate(RateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Channel realizations; each yields one sample per antenna pair.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nominal SNR in dB (overrides channel.snr_db).
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset, evaluated after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV, one row per epoch.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Architecture name (transformer or lstm).
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset files; one report row per estimator and file.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Trained model files, matched to estimators by architecture.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated estimator names (default: eval.estimators).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    ber_bits: Option<u64>,
}

#[derive(Args, Debug)]
struct RateArgs {
    #[arg(long)]
    alpha0: f64,
    #[arg(long)]
    alpha1: f64,
    #[arg(long, allow_hyphen_values = true)]
    rho_db: f64,
    #[arg(long)]
    tc: f64,
    /// Enforce reliable reconstruction: the sparse configuration keeps the dense effective SNR.
    #[arg(long)]
    assume_reliable: bool,
    /// Sweep CSV path; printed to stdout when absent.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    points: u64,
}

type CliResult<T> = Result<T, (u8, String)>;

fn code_for(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 4,
        Error::Config(_) | Error::UnknownName { .. } | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

trait OrExit<T> {
    fn or_exit(self, what: &str) -> CliResult<T>;
}

impl<T> OrExit<T> for csiforge::Result<T> {
    fn or_exit(self, what: &str) -> CliResult<T> {
        self.map_err(|e| (code_for(&e), format!("{what}: {e}")))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Loads the configuration and prints its resolved form and hash.
fn resolve(cli: &Cli, extra: &[String]) -> CliResult<RunConfig> {
    let mut overrides = cli.overrides.clone();
    overrides.extend_from_slice(extra);
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides).or_exit("configuration")?;
    let echo = cfg.echo();
    println!("# resolved configuration");
    for line in echo.lines() {
        println!("#   {line}");
    }
    println!("config_hash = {}", sha256_hex(echo.as_bytes()));
    Ok(cfg)
}

fn threads(cli: &Cli) -> usize {
    cli.threads.map(|t| t as usize).unwrap_or_else(pipeline::thread_budget)
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CliResult<()> {
    let extra: Vec<String> = a.snr_db.map(|s| format!("channel.snr_db={s}")).into_iter().collect();
    let cfg = resolve(cli, &extra)?;
    let gen = cfg.gen_config().or_exit("configuration")?;
    let shape = gen.channel.shape;
    let dense = overhead_fraction(&gen.dense, &shape).or_exit("pilot overhead")?;
    let sparse = overhead_fraction(&gen.sparse, &shape).or_exit("pilot overhead")?;
    let d = generate_dataset(&gen, a.count as usize, a.seed, threads(cli)).or_exit("generation")?;
    write_dataset(&d, &a.out).or_exit(&format!("writing {}", a.out.display()))?;
    let side = sidecar_path(&a.out);
    std::fs::write(&side, sidecar_text(&gen, a.count as usize, a.seed, &cfg.echo()))
        .map_err(|e| (3, format!("writing {}: {e}", side.display())))?;
    let ratio = dense / sparse;
    println!("eta_dense = {dense} ({:.6})", *dense.numer() as f64 / *dense.denom() as f64);
    println!("eta_sparse = {sparse} ({:.6})", *sparse.numer() as f64 / *sparse.denom() as f64);
    println!("overhead_ratio = {ratio}");
    println!("samples = {}", d.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(e) = a.epochs {
        extra.push(format!("train.epochs={e}"));
    }
    if let Some(lr) = a.lr {
        extra.push(format!("train.lr={lr:e}"));
    }
    if let Some(s) = a.seed {
        extra.push(format!("train.seed={s}"));
    }
    if let Some(arch) = &a.arch {
        extra.push(format!("model.arch=\"{arch}\""));
    }
    let cfg = resolve(cli, &extra)?;
    let tc = cfg.train_config().or_exit("configuration")?;
    let data = read_dataset(&a.data).or_exit(&format!("reading {}", a.data.display()))?;
    let val = a.val.as_ref().map(|p| read_dataset(p).or_exit(&format!("reading {}", p.display()))).transpose()?;
    let init = Model::new(&tc.model, tc.seed).or_exit("model")?;
    println!("initial_params_sha256 = {}", sha256_hex(&nn::io::to_bytes(&init).or_exit("model")?));
    let result = train(&data, val.as_ref(), &tc, |s| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {}  ({:.1}s)",
            s.epoch,
            s.train_loss,
            s.val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            s.seconds
        );
    })
    .or_exit("training")?;
    nn::io::save(&result.model, &a.out).or_exit(&format!("writing {}", a.out.display()))?;
    println!("final_params_sha256 = {}", sha256_hex(&nn::io::to_bytes(&result.model).or_exit("model")?));
    println!("final_loss = {:e}", result.final_loss());
    if let Some(path) = &a.history {
        let mut s = String::from("# epoch, mean training loss, validation loss, validation SP-NMSE in dB (empty without --val)\n");
        s.push_str("epoch,train_loss,val_loss,val_sp_nmse_db\n");
        for h in &result.history {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
            let _ = writeln!(s, "{},{:e},{},{}", h.epoch, h.train_loss, opt(h.val_loss), opt(h.val_sp_nmse_db));
        }
        std::fs::write(path, s).map_err(|e| (3, format!("writing {}: {e}", path.display())))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(list) = &a.estimators {
        let quoted: Vec<String> = list.iter().map(|s| format!("\"{}\"", s.trim())).collect();
        extra.push(format!("eval.estimators=[{}]", quoted.join(",")));
    }
    if let Some(b) = a.ber_bits {
        extra.push(format!("eval.ber_bits={b}"));
    }
    let cfg = resolve(cli, &extra)?;
    let mut missing: Vec<String> =
        a.data.iter().chain(&a.model).filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    let models: Vec<Model> = a
        .model
        .iter()
        .filter(|p| p.exists())
        .map(|p| nn::io::load(p).or_exit(&format!("reading {}", p.display())))
        .collect::<CliResult<_>>()?;
    for e in cfg.eval.estimators.iter().filter(|e| needs_model(e)) {
        if !models.iter().any(|m| m.arch.name() == e.as_str()) {
            missing.push(format!("--model for estimator {e}"));
        }
    }
    if !missing.is_empty() {
        return Err((3, format!("missing inputs: {}", missing.join(", "))));
    }
    let datasets = a
        .data
        .iter()
        .map(|p| read_dataset(p).or_exit(&format!("reading {}", p.display())))
        .collect::<CliResult<Vec<_>>>()?;
    let gen = cfg.gen_config().or_exit("configuration")?;
    let ctx = EstimatorContext::new(&gen).or_exit("configuration")?;
    let opts = cfg.eval_options(Some(a.out.join("heatmaps")), threads(cli));
    let refs: Vec<&pipeline::Dataset> = datasets.iter().collect();
    let report = evaluate(&refs, &ctx, &models, &opts).or_exit("evaluation")?;
    let files = report.write_csv_set(&a.out).or_exit(&format!("writing {}", a.out.display()))?;
    println!("{:<14} {:>7} {:>10} {:>10} {:>11}", "estimator", "snr_db", "nmse_db", "sp_nmse_db", "ber");
    for r in &report.rows {
        println!(
            "{:<14} {:>7} {:>10} {:>10} {:>11}",
            r.estimator,
            r.snr_db,
            pipeline::format_db(r.nmse_db),
            pipeline::format_db(r.sp_nmse_db),
            r.ber.first().map_or("-".into(), |b| format!("{:.3e}", b.ber))
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_rate(cli: &Cli, a: &RateArgs) -> CliResult<()> {
    resolve(cli, &[])?;
    for (name, v) in [("alpha0", a.alpha0), ("alpha1", a.alpha1)] {
        if !(v > 0.0 && v < 1.0) {
            return Err((2, format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let rho = db_to_linear(a.rho_db);
    let p0 = RateParams::new(a.tc, rho, a.alpha0).or_exit("rate parameters")?;
    let p1 = RateParams::new(a.tc, rho, a.alpha1).or_exit("rate parameters")?;
    let pinned = a.assume_reliable.then(|| rate::rho_eff(&p0));
    let g = rate::gain_lower_bound(&p0, &p1, pinned).or_exit("rate gain")?;
    println!("rho_eff0 = {:.6}", g.rho_eff0);
    println!("rho_eff1 = {:.6}", g.rho_eff1);
    println!("gain = {:.9}", g.gain);
    println!("overhead_term = {:.9}", g.overhead_term);
    println!("bound = {:.9}", g.bound);
    println!("hypothesis_holds = {}", g.hypothesis_holds);
    let (lo, hi) = (a.alpha1.min(a.alpha0), a.alpha1.max(a.alpha0));
    let n = a.points as usize;
    let alphas: Vec<f64> = if lo == hi {
        vec![lo]
    } else {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    };
    let rows = rate::sweep(a.tc, rho, &alphas).or_exit("rate sweep")?;
    match &a.sweep {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| (3, format!("writing {}: {e}", path.display())))?;
            rate::write_sweep_csv(&rows, std::io::BufWriter::new(f)).or_exit("rate sweep")?;
            println!("wrote {}", path.display());
        }
        None => rate::write_sweep_csv(&rows, std::io::stdout().lock()).or_exit("rate sweep")?,
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(cli, a),
        Cmd::Train(a) => cmd_train(cli, a),
        Cmd::Eval(a) => cmd_eval(cli, a),
        Cmd::Rate(a) => cmd_rate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
