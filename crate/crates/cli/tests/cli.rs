use std::path::Path;
use std::process::{Command, Output};

fn csiforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csiforge")).args(args).env("CSIFORGE_THREADS", "1").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_MODEL: [&str; 8] =
    ["--set", "model.d_model=8", "--set", "model.d_ff=16", "--set", "model.layers=1", "--set", "model.heads=2"];

#[test]
fn gen_reports_overheads_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csid");
    let b = dir.path().join("b.csid");
    let o = csiforge(&["gen", "--count", "10", "--seed", "42", "--out", p(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "overhead_ratio"), "16");
    assert!(value(&text, "eta_dense").starts_with("1/7"));
    assert!(value(&text, "eta_sparse").starts_with("1/112"));
    assert_eq!(std::fs::metadata(&a).unwrap().len(), csiforge::pipeline::file_size(48, 14, 10));
    assert!(a.with_extension("csid.meta.txt").exists());
    let o2 = csiforge(&["gen", "--count", "10", "--seed", "42", "--out", p(&b)]);
    assert_eq!(value(&text, "config_hash"), value(&stdout(&o2), "config_hash"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csid");
    assert_eq!(csiforge(&["gen", "--count", "0", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(csiforge(&["gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(csiforge(&["gen", "--out", p(&out), "--set", "train.nope=1"]).status.code(), Some(2));
    assert_eq!(
        csiforge(&["rate", "--alpha0", "1.5", "--alpha1", "0.1", "--rho-db", "15", "--tc", "168"]).status.code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn train_writes_history_and_lr_zero_keeps_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csid");
    assert!(csiforge(&["gen", "--count", "6", "--seed", "1", "--out", p(&data)]).status.success());
    let model = dir.path().join("m.bin");
    let hist = dir.path().join("h.csv");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&model), "--history", p(&hist), "--epochs", "3"];
    args.extend(SMALL_MODEL);
    let o = csiforge(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<String> = std::fs::read_to_string(&hist)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(csiforge::nn::io::load(&model).is_ok());

    args.extend(["--lr", "0"]);
    let text = stdout(&csiforge(&args));
    assert_eq!(value(&text, "initial_params_sha256"), value(&text, "final_params_sha256"));

    let missing = dir.path().join("none.csid");
    assert_eq!(csiforge(&["train", "--data", p(&missing), "--out", p(&model)]).status.code(), Some(3));
}

#[test]
fn eval_writes_report_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csid");
    assert!(csiforge(&["gen", "--count", "4", "--seed", "3", "--out", p(&data)]).status.success());
    let out = dir.path().join("report");

    // Learned estimators without model files are rejected, naming what is missing.
    let o = csiforge(&["eval", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("transformer") && err.contains("lstm"), "{err}");

    let model = dir.path().join("m.bin");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&model), "--epochs", "1"];
    args.extend(SMALL_MODEL);
    assert!(csiforge(&args).status.success());
    let mut args = vec![
        "eval",
        "--data",
        p(&data),
        "--model",
        p(&model),
        "--out",
        p(&out),
        "--estimators",
        "genie,input-interp,lmmse,damp,transformer",
        "--ber-bits",
        "10000",
    ];
    args.extend(SMALL_MODEL);
    let o = csiforge(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let nmse = std::fs::read_to_string(out.join("nmse_vs_snr.csv")).unwrap();
    let mut lines = nmse.lines();
    assert!(lines.next().unwrap().starts_with("# "));
    assert_eq!(lines.next().unwrap(), "estimator,snr_db,samples,nmse_db,sp_nmse_db,mean_abs_alpha");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    let genie = rows.iter().find(|r| r.starts_with("genie,")).unwrap();
    assert!(genie.contains(",<=-100,<=-100,"), "{genie}");
    for f in ["subcarrier_error.csv", "ber_vs_snr.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("# "));
    }
    let ber = std::fs::read_to_string(out.join("ber_vs_snr.csv")).unwrap();
    assert_eq!(ber.lines().count(), 2 + 5);
    let heat = std::fs::read_to_string(out.join("heatmaps").join("transformer_snr15.csv")).unwrap();
    assert_eq!(heat.lines().count(), 48);
    assert!(heat.lines().all(|l| l.split(',').count() == 14));
}

#[test]
fn rate_reports_gain_and_hypothesis() {
    let base = ["rate", "--alpha0", "0.142857", "--alpha1", "0.0089286", "--rho-db", "15", "--tc", "168"];
    let mut args = base.to_vec();
    args.push("--assume-reliable");
    let o = csiforge(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    let gain: f64 = value(&text, "gain").parse().unwrap();
    let overhead: f64 = value(&text, "overhead_term").parse().unwrap();
    let bound: f64 = value(&text, "bound").parse().unwrap();
    // With equal effective SNRs the gain is exactly the overhead term. The
    // log2(1 + x) bound sits above it: g is concave, so g(x) <= log2(1 + x).
    assert!(gain > 0.0 && (gain - overhead).abs() < 1e-8, "{gain} {overhead}");
    assert!(overhead < bound, "{overhead} {bound}");
    assert_eq!(value(&text, "hypothesis_holds"), "true");
    assert!(text.contains("alpha,sigma_e2,rho_eff,rate_bits_per_re"));

    let text = stdout(&csiforge(&base));
    assert_eq!(value(&text, "hypothesis_holds"), "false");

    let o = csiforge(&["rate", "--alpha0", "0.1", "--alpha1", "0.1", "--rho-db", "10", "--tc", "56", "--assume-reliable"]);
    let text = stdout(&o);
    assert_eq!(value(&text, "gain").parse::<f64>().unwrap(), 0.0);
    assert_eq!(value(&text, "hypothesis_holds"), "true");

    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("s.csv");
    let mut args = base.to_vec();
    args.extend(["--sweep", p(&sweep), "--points", "5"]);
    assert!(csiforge(&args).status.success());
    assert_eq!(std::fs::read_to_string(&sweep).unwrap().lines().count(), 6);
}
