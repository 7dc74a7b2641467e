//! Evaluation sweeps: NMSE and SP-NMSE as ratios of expectations, the
//! per-subcarrier error profile, BER and heatmap export.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_rational::Ratio;

use super::{ber_link_sim, parallel_map, BerLink, BerPoint, BerSpec, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{build_estimator, needs_model, EstimationInput, EstimatorContext};
use crate::grid::{fro_norm_sq, ComplexGrid};
use crate::nn::Model;
use crate::objective::sp_nmse;
use crate::pilots::overhead_fraction;

/// Reported dB values are clamped here; the CSV shows `<=-100`.
pub const DB_FLOOR: f64 = -100.0;

/// Samples per estimation job.
const CHUNK: usize = 32;

/// `sum(num) / sum(den)`: the mean error energy over the mean reference energy.
pub fn ratio_of_expectations(pairs: &[(f64, f64)]) -> Result<f64> {
    let (num, den) = pairs.iter().fold((0.0, 0.0), |(a, b), &(n, d)| (a + n, b + d));
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::ZeroReference)
    }
}

/// dB with the floor applied, so a zero error gives exactly `DB_FLOOR`.
pub fn db_or_floor(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

pub fn format_db(db: f64) -> String {
    if db <= DB_FLOOR {
        "<=-100".to_string()
    } else {
        format!("{db:.4}")
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub estimators: Vec<String>,
    /// Link SNR points for the BER simulation; empty means the dataset SNR.
    pub ber_snr_db: Vec<f64>,
    /// Bits per BER point; 0 skips the link simulation.
    pub ber_bits: u64,
    pub seed: u64,
    /// Writes |H| heatmaps of the first sample per estimator when set.
    pub heatmap_dir: Option<PathBuf>,
    pub threads: usize,
}

impl EvalOptions {
    pub fn all_estimators() -> Vec<String> {
        crate::estimators::ESTIMATORS.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// Nominal SNR of the evaluated dataset.
    pub snr_db: f64,
    pub samples: usize,
    pub nmse: f64,
    pub nmse_db: f64,
    pub sp_nmse: f64,
    pub sp_nmse_db: f64,
    /// Mean of |alpha*| over samples: how far the output scale drifts.
    pub mean_abs_alpha: f64,
    /// Mean |H_hat - H| per subcarrier over samples and symbols.
    pub subcarrier_mae: Vec<f64>,
    pub ber: Vec<BerPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EstimatorSummary>,
    pub eta_dense: Ratio<u64>,
    pub eta_sparse: Ratio<u64>,
}

impl EvalReport {
    pub fn row(&self, estimator: &str, snr_db: f64) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.estimator == estimator && r.snr_db == snr_db)
    }

    /// Writes `nmse_vs_snr.csv`, `subcarrier_error.csv` and `ber_vs_snr.csv`.
    /// Each starts with a `#` line documenting its columns.
    pub fn write_csv_set(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut open = |name: &str, doc: &str, header: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            let path = dir.join(name);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "# {doc}")?;
            writeln!(f, "{header}")?;
            written.push(path);
            Ok(f)
        };
        let mut f = open(
            "nmse_vs_snr.csv",
            &format!(
                "estimator, snr_db, samples, nmse_db and sp_nmse_db (ratio of expectations; <=-100 marks the floor), mean_abs_alpha; eta_dense={} eta_sparse={}",
                self.eta_dense, self.eta_sparse
            ),
            "estimator,snr_db,samples,nmse_db,sp_nmse_db,mean_abs_alpha",
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{:.6}",
                r.estimator,
                r.snr_db,
                r.samples,
                format_db(r.nmse_db),
                format_db(r.sp_nmse_db),
                r.mean_abs_alpha
            )?;
        }
        f.flush()?;
        let mut f = open(
            "subcarrier_error.csv",
            "estimator, snr_db, subcarrier index, mean |H_hat - H| over samples and symbols",
            "estimator,snr_db,subcarrier,mae",
        )?;
        for r in &self.rows {
            for (k, v) in r.subcarrier_mae.iter().enumerate() {
                writeln!(f, "{},{},{k},{v:.6e}", r.estimator, r.snr_db)?;
            }
        }
        f.flush()?;
        let mut f = open(
            "ber_vs_snr.csv",
            "estimator, est_snr_db (estimation SNR), link_snr_db (Es/N0), bits, errors (erasures count 0.5), ber, std_err",
            "estimator,est_snr_db,link_snr_db,bits,errors,ber,std_err",
        )?;
        for r in &self.rows {
            for p in &r.ber {
                writeln!(
                    f,
                    "{},{},{},{},{},{:.6e},{:.3e}",
                    r.estimator, r.snr_db, p.snr_db, p.bits, p.errors, p.ber, p.std_err
                )?;
            }
        }
        f.flush()?;
        Ok(written)
    }
}

/// |H[k, l]| as CSV: K rows of L comma-separated values, 6 significant digits.
pub fn export_heatmap(grid: &ComplexGrid, path: &Path) -> Result<()> {
    let s = grid.shape();
    if s.pairs() != 1 {
        return Err(Error::InvalidArgument(format!("heatmap needs one antenna pair, got {}", s.pairs())));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for k in 0..s.k {
        let row: Vec<String> = (0..s.l).map(|l| format!("{:.5e}", grid.get(k, l, 0, 0).norm())).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

struct SampleStats {
    err: f64,
    sp_err: f64,
    energy: f64,
    abs_alpha: f64,
    abs_err_k: Vec<f64>,
}

fn sample_stats(est: &ComplexGrid, target: &ComplexGrid) -> Result<SampleStats> {
    let diff = est.sub(target)?;
    let energy = fro_norm_sq(target);
    let (sp, alpha) = sp_nmse(est, target)?;
    let s = target.shape();
    let mut abs_err_k = vec![0.0; s.k];
    for (i, d) in diff.values().iter().enumerate() {
        abs_err_k[i % s.k] += d.norm();
    }
    Ok(SampleStats { err: fro_norm_sq(&diff), sp_err: sp * energy, energy, abs_alpha: alpha.norm(), abs_err_k })
}

/// Runs every requested estimator over every dataset. `models` supplies the
/// learned estimators, matched by architecture name.
pub fn evaluate(datasets: &[&Dataset], ctx: &EstimatorContext, models: &[Model], opts: &EvalOptions) -> Result<EvalReport> {
    if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::InvalidArgument("evaluation needs nonempty datasets".into()));
    }
    let missing: Vec<&str> = opts
        .estimators
        .iter()
        .filter(|n| needs_model(n) && !models.iter().any(|m| m.arch.name() == n.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("model files for estimators: {}", missing.join(", "))));
    }
    let shape = ctx.gen.channel.shape;
    let eta_dense = overhead_fraction(&ctx.gen.dense, &shape)?;
    let eta_sparse = overhead_fraction(&ctx.gen.sparse, &shape)?;
    if let Some(dir) = &opts.heatmap_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for d in datasets {
        let ds = d.slice_shape();
        if ds != ctx.slice_shape() {
            return Err(Error::ShapeMismatch { left: ds, right: ctx.slice_shape() });
        }
        let snr_db = d.snr_db as f64;
        if let Some(dir) = &opts.heatmap_dir {
            export_heatmap(&d.samples[0].target, &dir.join(format!("truth_snr{snr_db}.csv")))?;
        }
        for name in &opts.estimators {
            let model = models.iter().find(|m| m.arch.name() == name.as_str()).cloned();
            let est = build_estimator(name, ctx, if needs_model(name) { model } else { None })?;
            let chunks = d.len().div_ceil(CHUNK);
            let parts = parallel_map(chunks, opts.threads, |c| {
                let block = &d.samples[c * CHUNK..((c + 1) * CHUNK).min(d.len())];
                let xs: Vec<EstimationInput> = block
                    .iter()
                    .map(|s| EstimationInput { input: &s.input, target: &s.target, snr_db })
                    .collect();
                let out = est.estimate_batch(&xs)?;
                let stats = out.iter().zip(block).map(|(e, s)| sample_stats(e, &s.target)).collect::<Result<Vec<_>>>()?;
                Ok((out, stats))
            })?;
            let (estimates, stats): (Vec<ComplexGrid>, Vec<SampleStats>) =
                parts.into_iter().flat_map(|(o, s)| o.into_iter().zip(s)).unzip();
            if let Some(g) = estimates.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("estimator {name} produced non-finite output ({:?})", g.shape())));
            }
            let nmse = ratio_of_expectations(&stats.iter().map(|s| (s.err, s.energy)).collect::<Vec<_>>())?;
            let sp = ratio_of_expectations(&stats.iter().map(|s| (s.sp_err, s.energy)).collect::<Vec<_>>())?;
            let per_k = (d.len() * d.l) as f64;
            let mut subcarrier_mae = vec![0.0; d.k];
            for s in &stats {
                for (m, v) in subcarrier_mae.iter_mut().zip(&s.abs_err_k) {
                    *m += v / per_k;
                }
            }
            if let Some(dir) = &opts.heatmap_dir {
                export_heatmap(&estimates[0], &dir.join(format!("{name}_snr{snr_db}.csv")))?;
            }
            let ber = if opts.ber_bits > 0 {
                let links: Vec<BerLink> = d
                    .samples
                    .iter()
                    .zip(&estimates)
                    .map(|(s, e)| BerLink {
                        truth: &s.target,
                        estimate: e,
                        pilots: ctx.gen.sparse.is_active_slot(s.meta.slot).then_some(&ctx.mask),
                    })
                    .collect();
                let link_snr = if opts.ber_snr_db.is_empty() { vec![snr_db] } else { opts.ber_snr_db.clone() };
                let spec = BerSpec { snr_db: link_snr, min_bits: opts.ber_bits, seed: opts.seed };
                ber_link_sim(&links, &spec, opts.threads)?
            } else {
                Vec::new()
            };
            rows.push(EstimatorSummary {
                estimator: name.clone(),
                snr_db,
                samples: d.len(),
                nmse,
                nmse_db: db_or_floor(nmse),
                sp_nmse: sp,
                sp_nmse_db: db_or_floor(sp),
                mean_abs_alpha: stats.iter().map(|s| s.abs_alpha).sum::<f64>() / stats.len() as f64,
                subcarrier_mae,
                ber,
            });
        }
    }
    Ok(EvalReport { rows, eta_dense, eta_sparse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::pipeline::{generate_dataset, GenConfig};
    use num_complex::Complex64;

    #[test]
    fn ratio_of_expectations_is_not_mean_of_ratios() {
        // Equal error energy, reference energies 1 and 100.
        let pairs = [(1.0, 1.0), (1.0, 100.0)];
        let roe = ratio_of_expectations(&pairs).unwrap();
        let mor = (1.0 + 0.01) / 2.0;
        assert!((roe - 2.0 / 101.0).abs() < 1e-15);
        assert!((roe - mor).abs() > 0.4);
        assert!(ratio_of_expectations(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn floor_sentinel() {
        assert_eq!(db_or_floor(0.0), DB_FLOOR);
        assert_eq!(format_db(db_or_floor(0.0)), "<=-100");
        assert_eq!(format_db(db_or_floor(0.5)), "-3.0103");
    }

    #[test]
    fn heatmap_shape_and_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let g = ComplexGrid::from_fn(GridShape::slice(5, 3).unwrap(), |k, l, _, _| {
            Complex64::new(0.1234567 * (k + 1) as f64, l as f64)
        });
        export_heatmap(&g, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let rows: Vec<Vec<f64>> = text.lines().map(|r| r.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 5);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 3);
            for (l, &v) in row.iter().enumerate() {
                let want = g.get(k, l, 0, 0).norm();
                assert!((v - want).abs() <= 1e-5 * want);
            }
        }
        let c = ComplexGrid::from_elem(GridShape::slice(4, 2).unwrap(), Complex64::new(0.6, 0.8));
        export_heatmap(&c, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().flat_map(|r| r.split(',')).all(|v| v == "1.00000e0"));
    }

    #[test]
    fn genie_hits_floor_and_learned_needs_model() {
        let gen = GenConfig::desk_default();
        let ctx = EstimatorContext::new(&gen).unwrap();
        let d = generate_dataset(&gen, 3, 2, 1).unwrap();
        let opts = EvalOptions {
            estimators: vec!["genie".into(), "input-interp".into()],
            ber_snr_db: vec![],
            ber_bits: 10_000,
            seed: 1,
            heatmap_dir: None,
            threads: 1,
        };
        let r = evaluate(&[&d], &ctx, &[], &opts).unwrap();
        let g = r.row("genie", 15.0).unwrap();
        assert_eq!(g.nmse_db, DB_FLOOR);
        assert_eq!(g.subcarrier_mae.len(), 48);
        assert!(r.row("input-interp", 15.0).unwrap().nmse_db > DB_FLOOR);
        assert!(g.ber[0].ber <= r.row("input-interp", 15.0).unwrap().ber[0].ber);
        let opts = EvalOptions { estimators: vec!["transformer".into()], ..opts };
        assert!(matches!(evaluate(&[&d], &ctx, &[], &opts), Err(Error::Missing(_))));
    }
}
