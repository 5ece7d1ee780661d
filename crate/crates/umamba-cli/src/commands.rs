//! Command implementations behind the thin argument-parsing shell. Every
//! command resolves a run directory, echoes the effective config there first,
//! then does its work, so a crashed run still records what it was asked to do.

use crate::config::RunConfig;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use umamba::bench::{bench_scaling, ScalingReport};
use umamba::checkpoint::load_model;
use umamba::data::{windows, Dataset, Standardizer, WindowPlan};
use umamba::model::{Forecaster, LinearModel, RepeatLast, UmambaModel};
use umamba::rng::{SeedStreams, STREAM_INIT};
use umamba::train::{evaluate_with, train, write_history_csv, EvalSpace};
use umamba::{Error, Result};

pub struct TrainArgs {
    pub config: PathBuf,
    pub outdir: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

pub struct EvaluateArgs {
    pub config: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub split: String,
    pub space: String,
    pub outdir: Option<String>,
    pub no_forecasts: bool,
}

pub struct PredictArgs {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub split: String,
    pub window: usize,
    pub outdir: Option<String>,
}

pub struct AblateArgs {
    pub config: PathBuf,
    pub outdir: Option<String>,
    pub epochs: Option<usize>,
    pub space: String,
}

pub struct BenchArgs {
    pub config: Option<PathBuf>,
    pub lengths: Vec<usize>,
    pub channels: usize,
    pub horizon: usize,
    pub repeats: usize,
    pub seed: u64,
    pub outdir: Option<String>,
}

pub struct PlotsArgs {
    pub out: PathBuf,
    pub runs: Vec<PathBuf>,
    pub scaling: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
}

/// Train, validation and test plans derived from one config.
struct SplitPlans {
    train: WindowPlan,
    val: WindowPlan,
    test: WindowPlan,
}

fn build_plans(cfg: &RunConfig, ds: &Dataset) -> Result<SplitPlans> {
    let s = cfg.data.split;
    let segments = ds.split((s[0], s[1], s[2]))?;
    let mut train_seg = segments[0].clone();
    if cfg.data.train_fraction < 1.0 {
        let keep = (train_seg.len() as f64 * cfg.data.train_fraction).floor() as usize;
        train_seg.end = train_seg.start + keep;
    }
    let l = cfg.data.lookback;
    let t = cfg.data.horizon;
    let reach = cfg.data.border_lookback;
    Ok(SplitPlans {
        train: windows(&train_seg, l, t, 1, false)?,
        val: windows(&segments[1], l, t, 1, reach)?,
        test: windows(&segments[2], l, t, 1, reach)?,
    })
}

fn build_model(
    cfg: &RunConfig,
    n_channels: usize,
) -> Result<Box<dyn Forecaster + Send + Sync>> {
    let mut rng = SeedStreams::new(cfg.run.seed).stream(STREAM_INIT);
    let (n, l, t) = (n_channels, cfg.data.lookback, cfg.data.horizon);
    Ok(match cfg.model.kind.as_str() {
        "umamba" => Box::new(UmambaModel::new(cfg.model_config(n)?, &mut rng)?),
        "linear" => Box::new(LinearModel::new(n, l, t, &mut rng)),
        "repeat_last" => Box::new(RepeatLast::new(n, l, t)),
        other => return Err(Error::Config(format!("unknown model kind '{other}'"))),
    })
}

fn parse_space(s: &str) -> Result<EvalSpace> {
    match s {
        "raw" => Ok(EvalSpace::Raw),
        "standardized" => Ok(EvalSpace::Standardized),
        other => Err(Error::Config(format!(
            "unknown evaluation space '{other}' (expected raw | standardized)"
        ))),
    }
}

/// Maps a split name to its segment index; lookback may reach into the
/// previous split only for val and test, and only when the config asks.
fn split_index(split: &str, border_lookback: bool) -> Result<(usize, bool)> {
    match split {
        "train" => Ok((0, false)),
        "val" => Ok((1, border_lookback)),
        "test" => Ok((2, border_lookback)),
        other => Err(Error::Config(format!(
            "unknown split '{other}' (expected train | val | test)"
        ))),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    let outdir = cfg.resolve_outdir(args.outdir.as_deref());
    std::fs::create_dir_all(&outdir)?;
    cfg.echo(&outdir)?;
    let ds = cfg.load_dataset()?;
    let plans = build_plans(&cfg, &ds)?;
    let mut model = build_model(&cfg, ds.n_channels())?;
    let settings = cfg.train_settings();
    let run = train(&mut model, &ds, &plans.train, &plans.val, &settings, &outdir.join("model.umts"))?;
    write_history_csv(&outdir.join("history.csv"), &run)?;
    if let Some(last) = run.history.last() {
        log::info!(
            "trained {} for {} epochs: best epoch {}, final val mse {:.6}",
            cfg.model.kind,
            run.history.len(),
            run.best_epoch,
            last.val_mse
        );
    }
    Ok(outdir)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<PathBuf> {
    if args.checkpoints.is_empty() {
        return Err(Error::Config("evaluate needs at least one --checkpoint".into()));
    }
    let cfg = RunConfig::load(&args.config)?;
    let space = parse_space(&args.space)?;
    let outdir = cfg.resolve_outdir(args.outdir.as_deref());
    std::fs::create_dir_all(&outdir)?;
    cfg.echo(&outdir)?;
    let ds = cfg.load_dataset()?;
    let s = cfg.data.split;
    let segments = ds.split((s[0], s[1], s[2]))?;
    let (seg_idx, reach) = split_index(&args.split, cfg.data.border_lookback)?;
    let standardizer = match space {
        EvalSpace::Raw => None,
        EvalSpace::Standardized => Some(Standardizer::fit(&ds, &segments[0])),
    };

    let mut table = csv::Writer::from_path(outdir.join("metrics.csv"))?;
    table.write_record(["horizon", "split", "space", "mse", "mae", "windows"])?;
    for ckpt in &args.checkpoints {
        let model = load_model(ckpt)?;
        if model.n_channels() != ds.n_channels() {
            return Err(Error::Config(format!(
                "{}: checkpoint has {} channels, dataset {} has {}",
                ckpt.display(),
                model.n_channels(),
                ds.name,
                ds.n_channels()
            )));
        }
        let plan = windows(&segments[seg_idx], model.lookback(), model.horizon(), 1, reach)?;
        let metrics = evaluate_with(&model, &ds, &plan, space, standardizer.as_ref())?;
        table.write_record([
            model.horizon().to_string(),
            args.split.clone(),
            args.space.clone(),
            metrics.mse.to_string(),
            metrics.mae.to_string(),
            metrics.count.to_string(),
        ])?;
        log::info!(
            "{} h={} {} {}-space: mse {:.6} mae {:.6} over {} windows",
            ckpt.display(),
            model.horizon(),
            args.split,
            args.space,
            metrics.mse,
            metrics.mae,
            metrics.count
        );
        if !args.no_forecasts {
            let path = outdir.join(format!("forecasts_h{}.csv", model.horizon()));
            write_forecasts(&path, &ds, &plan, &model, None)?;
        }
    }
    table.flush()?;
    Ok(outdir)
}

/// Forecast CSV: one row per (window, channel, step), raw scale.
fn write_forecasts(
    path: &Path,
    ds: &Dataset,
    plan: &WindowPlan,
    model: &(impl Forecaster + ?Sized),
    only_window: Option<usize>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window", "channel", "step", "truth", "prediction"])?;
    let indices: Vec<usize> = match only_window {
        Some(i) => vec![i],
        None => (0..plan.len()).collect(),
    };
    for i in indices {
        let (x, y) = plan.pair(ds, i);
        let pred = model.forecast(&x)?;
        for c in 0..ds.n_channels() {
            for s in 0..plan.t {
                w.write_record([
                    i.to_string(),
                    ds.channel_names[c].clone(),
                    s.to_string(),
                    y.data()[c * plan.t + s].to_string(),
                    pred.data()[c * plan.t + s].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PathBuf> {
    let cfg = RunConfig::load(&args.config)?;
    let outdir = cfg.resolve_outdir(args.outdir.as_deref());
    std::fs::create_dir_all(&outdir)?;
    cfg.echo(&outdir)?;
    let ds = cfg.load_dataset()?;
    let s = cfg.data.split;
    let segments = ds.split((s[0], s[1], s[2]))?;
    let (seg_idx, reach) = split_index(&args.split, cfg.data.border_lookback)?;
    let model = load_model(&args.checkpoint)?;
    let plan = windows(&segments[seg_idx], model.lookback(), model.horizon(), 1, reach)?;
    if args.window >= plan.len() {
        return Err(Error::Config(format!(
            "window {} out of range: {} split has {} windows",
            args.window,
            args.split,
            plan.len()
        )));
    }
    let path = outdir.join(format!("forecast_window{}.csv", args.window));
    write_forecasts(&path, &ds, &plan, &model, Some(args.window))?;
    Ok(outdir)
}

/// The documented variant grid, in emission order.
const ABLATION_VARIANTS: [&str; 6] =
    ["full", "no_cam", "no_rml", "ull_only", "single_scale", "single_rml"];

fn ablation_config(base: &RunConfig, variant: &str) -> RunConfig {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "no_cam" => cfg.model.use_cam = false,
        "no_rml" => cfg.model.use_rml = false,
        "ull_only" => {
            cfg.model.use_cam = false;
            cfg.model.use_rml = false;
        }
        "single_scale" => cfg.model.scales = vec![cfg.model.scales[0]],
        "single_rml" => cfg.model.k = 1,
        other => unreachable!("unknown variant {other}"),
    }
    cfg
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<PathBuf> {
    let mut base = RunConfig::load(&args.config)?;
    if base.model.kind != "umamba" {
        return Err(Error::Config(format!(
            "ablate needs model.kind = umamba, got '{}'",
            base.model.kind
        )));
    }
    if let Some(epochs) = args.epochs {
        base.train.epochs = epochs;
    }
    let space = parse_space(&args.space)?;
    let outdir = base.resolve_outdir(args.outdir.as_deref());
    std::fs::create_dir_all(&outdir)?;
    base.echo(&outdir)?;
    let ds = base.load_dataset()?;
    let standardizer = match space {
        EvalSpace::Raw => None,
        EvalSpace::Standardized => {
            let s = base.data.split;
            Some(Standardizer::fit(&ds, &ds.split((s[0], s[1], s[2]))?[0]))
        }
    };

    let mut file = std::fs::File::create(outdir.join("ablation.csv"))?;
    writeln!(file, "# single_scale keeps only the widest scale, so its skip feeds the decoder directly")?;
    let mut table = csv::Writer::from_writer(file);
    table.write_record(["variant", "use_rml", "use_cam", "n_scales", "k", "test_mse", "test_mae"])?;
    for variant in ABLATION_VARIANTS {
        let cfg = ablation_config(&base, variant);
        let plans = build_plans(&cfg, &ds)?;
        let mut model = build_model(&cfg, ds.n_channels())?;
        let run = train(
            &mut model,
            &ds,
            &plans.train,
            &plans.val,
            &cfg.train_settings(),
            &outdir.join(format!("{variant}.umts")),
        )?;
        write_history_csv(&outdir.join(format!("history_{variant}.csv")), &run)?;
        let metrics = evaluate_with(&model, &ds, &plans.test, space, standardizer.as_ref())?;
        table.write_record([
            variant.to_string(),
            cfg.model.use_rml.to_string(),
            cfg.model.use_cam.to_string(),
            cfg.model.scales.len().to_string(),
            cfg.model.k.to_string(),
            metrics.mse.to_string(),
            metrics.mae.to_string(),
        ])?;
        log::info!("{variant}: test mse {:.6} mae {:.6}", metrics.mse, metrics.mae);
    }
    table.flush()?;
    Ok(outdir)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<PathBuf> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let outdir = cfg.resolve_outdir(args.outdir.as_deref());
    std::fs::create_dir_all(&outdir)?;
    cfg.echo(&outdir)?;
    let mut base = cfg.model_config(args.channels)?;
    base.lookback = args.lengths.first().copied().unwrap_or(base.lookback);
    base.horizon = args.horizon;
    let report = bench_scaling(&args.lengths, args.channels, &base, args.repeats, args.seed)?;
    write_scaling_csv(&outdir.join("scaling.csv"), &report)?;
    println!(
        "model exponent {:.3}, quadratic reference exponent {:.3} ({} repeats)",
        report.model_exponent, report.quadratic_exponent, report.repeats
    );
    Ok(outdir)
}

fn write_scaling_csv(path: &Path, report: &ScalingReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "# model_exponent={} quadratic_exponent={} repeats={}",
        report.model_exponent, report.quadratic_exponent, report.repeats
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "l",
        "model_seconds",
        "model_peak_bytes",
        "quadratic_seconds",
        "quadratic_peak_bytes",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.l.to_string(),
            row.model_seconds.to_string(),
            row.model_peak_bytes.to_string(),
            row.quadratic_seconds.to_string(),
            row.quadratic_peak_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn require_artifact(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!("missing artifact: {}", path.display())));
    }
    Ok(())
}

pub fn cmd_emit_plots(args: &PlotsArgs) -> Result<()> {
    if args.runs.is_empty() && args.scaling.is_none() && args.forecasts.is_none() {
        return Err(Error::Config(
            "emit-plots needs at least one of --run, --scaling, --forecasts".into(),
        ));
    }
    std::fs::create_dir_all(&args.out)?;

    if let Some(src) = &args.forecasts {
        require_artifact(src)?;
        emit_overlay(src, &args.out.join("plot_overlay.csv"))?;
    }
    if let Some(src) = &args.scaling {
        require_artifact(src)?;
        emit_scaling(src, &args.out.join("plot_scaling.csv"))?;
    }
    if !args.runs.is_empty() {
        emit_sweeps(&args.runs, &args.out)?;
    }
    Ok(())
}

/// First window only: T rows per channel, ready to overlay truth/prediction.
fn emit_overlay(src: &Path, dst: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(src)?;
    let mut w = csv::Writer::from_path(dst)?;
    w.write_record(["channel", "step", "truth", "prediction"])?;
    let mut first: Option<String> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", src.display())))?;
        let window = rec.get(0).unwrap_or_default().to_string();
        match &first {
            None => first = Some(window),
            Some(f) if *f != window => break,
            Some(_) => {}
        }
        w.write_record([&rec[1], &rec[2], &rec[3], &rec[4]])?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy per-model scaling rows: model, l, seconds, bytes.
fn emit_scaling(src: &Path, dst: &Path) -> Result<()> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(src)?;
    let mut w = csv::Writer::from_path(dst)?;
    w.write_record(["model", "l", "seconds", "bytes"])?;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", src.display())))?;
        w.write_record(["umamba", &rec[0], &rec[1], &rec[2]])?;
        w.write_record(["quadratic", &rec[0], &rec[3], &rec[4]])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run per metrics line, keyed by lookback and by train fraction.
fn emit_sweeps(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut lb = csv::Writer::from_path(out.join("plot_lookback.csv"))?;
    lb.write_record(["model", "lookback", "horizon", "mse"])?;
    let mut fr = csv::Writer::from_path(out.join("plot_fraction.csv"))?;
    fr.write_record(["model", "train_fraction", "horizon", "mse"])?;
    for run in runs {
        let cfg_path = run.join("config.toml");
        require_artifact(&cfg_path)?;
        let cfg = RunConfig::load(&cfg_path)?;
        let metrics_path = run.join("metrics.csv");
        require_artifact(&metrics_path)?;
        let mut r = csv::Reader::from_path(&metrics_path)?;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?;
            lb.write_record([
                cfg.model.kind.clone(),
                cfg.data.lookback.to_string(),
                rec[0].to_string(),
                rec[3].to_string(),
            ])?;
            fr.write_record([
                cfg.model.kind.clone(),
                cfg.data.train_fraction.to_string(),
                rec[0].to_string(),
                rec[3].to_string(),
            ])?;
        }
    }
    lb.flush()?;
    fr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_toy_csv(dir: &Path, rows: usize, constant: Option<f64>) -> PathBuf {
        let path = dir.join("toy.csv");
        let mut s = String::from("date,alpha,beta\n");
        for i in 0..rows {
            let day = 1 + i / 24;
            let hour = i % 24;
            let (a, b) = match constant {
                Some(c) => (c, c),
                None => {
                    let t = i as f64;
                    ((t / 24.0 * std::f64::consts::TAU).sin(), (t / 17.0).cos())
                }
            };
            s.push_str(&format!("2020-01-{day:02} {hour:02}:00:00,{a},{b}\n"));
        }
        std::fs::write(&path, s).unwrap();
        path
    }

    fn toy_config(dir: &Path, kind: &str, constant: Option<f64>) -> PathBuf {
        let csv = write_toy_csv(dir, 400, constant);
        let mut cfg = RunConfig::default();
        cfg.data.path = csv.to_string_lossy().into_owned();
        cfg.data.lookback = 16;
        cfg.data.horizon = 8;
        cfg.model.kind = kind.into();
        cfg.model.scales = vec![12, 6];
        cfg.model.k = 1;
        cfg.model.d_state = 2;
        cfg.train.epochs = 2;
        cfg.train.batch_size = Some(8);
        let path = dir.join("run.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        path
    }

    fn count_lines(path: &Path) -> usize {
        std::fs::read_to_string(path).unwrap().lines().count()
    }

    #[test]
    fn train_produces_artifacts_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "umamba", None);
        let mk = |name: &str| TrainArgs {
            config: config.clone(),
            outdir: Some(dir.path().join(name).to_string_lossy().into_owned()),
            seed: Some(7),
            epochs: None,
        };
        let a = cmd_train(&mk("a")).unwrap();
        let b = cmd_train(&mk("b")).unwrap();
        for f in ["config.toml", "history.csv", "model.umts"] {
            assert!(a.join(f).exists(), "{f} missing");
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f} differs between identical runs"
            );
        }
        // header plus one row per epoch
        assert_eq!(count_lines(&a.join("history.csv")), 3);
    }

    #[test]
    fn evaluate_perfect_oracle_scores_zero() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "repeat_last", Some(3.25));
        let run = cmd_train(&TrainArgs {
            config: config.clone(),
            outdir: Some(dir.path().join("run").to_string_lossy().into_owned()),
            seed: None,
            epochs: Some(1),
        })
        .unwrap();
        let out = cmd_evaluate(&EvaluateArgs {
            config,
            checkpoints: vec![run.join("model.umts")],
            split: "test".into(),
            space: "raw".into(),
            outdir: Some(run.to_string_lossy().into_owned()),
            no_forecasts: false,
        })
        .unwrap();
        let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        let row = metrics.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "8");
        assert_eq!(fields[3], "0", "mse: {row}");
        assert_eq!(fields[4], "0", "mae: {row}");
        // test split holds 40 rows -> 17 windows; 2 channels x 8 steps each
        assert_eq!(count_lines(&out.join("forecasts_h8.csv")), 1 + 17 * 2 * 8);
    }

    #[test]
    fn predict_writes_one_window() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "linear", None);
        let run = cmd_train(&TrainArgs {
            config: config.clone(),
            outdir: Some(dir.path().join("run").to_string_lossy().into_owned()),
            seed: None,
            epochs: Some(1),
        })
        .unwrap();
        let out = cmd_predict(&PredictArgs {
            config,
            checkpoint: run.join("model.umts"),
            split: "val".into(),
            window: 3,
            outdir: Some(run.to_string_lossy().into_owned()),
        })
        .unwrap();
        assert_eq!(count_lines(&out.join("forecast_window3.csv")), 1 + 2 * 8);
    }

    #[test]
    fn predict_rejects_out_of_range_window() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "repeat_last", None);
        let run = cmd_train(&TrainArgs {
            config: config.clone(),
            outdir: Some(dir.path().join("run").to_string_lossy().into_owned()),
            seed: None,
            epochs: Some(1),
        })
        .unwrap();
        let err = cmd_predict(&PredictArgs {
            config,
            checkpoint: run.join("model.umts"),
            split: "test".into(),
            window: 999,
            outdir: Some(run.to_string_lossy().into_owned()),
        })
        .unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn ablate_emits_the_six_variant_grid() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "umamba", None);
        let out = cmd_ablate(&AblateArgs {
            config,
            outdir: Some(dir.path().join("ab").to_string_lossy().into_owned()),
            epochs: Some(1),
            space: "raw".into(),
        })
        .unwrap();
        let text = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with('#'), "comment line first: {}", lines[0]);
        assert!(lines[1].starts_with("variant,"), "{}", lines[1]);
        assert_eq!(lines.len(), 2 + 6);
        let names: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ABLATION_VARIANTS);
        for v in ABLATION_VARIANTS {
            assert!(out.join(format!("{v}.umts")).exists(), "{v} checkpoint");
        }
        let ull = lines[2..].iter().find(|l| l.starts_with("ull_only")).unwrap();
        assert!(ull.contains("false,false"), "{ull}");
    }

    #[test]
    fn bench_writes_scaling_table() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "umamba", None);
        let out = cmd_bench(&BenchArgs {
            config: Some(config),
            lengths: vec![16, 32, 64, 128],
            channels: 2,
            horizon: 8,
            repeats: 5,
            seed: 1,
            outdir: Some(dir.path().join("bench").to_string_lossy().into_owned()),
        })
        .unwrap();
        let text = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# model_exponent="), "{}", lines[0]);
        assert_eq!(lines[1], "l,model_seconds,model_peak_bytes,quadratic_seconds,quadratic_peak_bytes");
        assert_eq!(lines.len(), 2 + 4);
    }

    #[test]
    fn emit_plots_builds_each_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), "repeat_last", None);
        let run = cmd_train(&TrainArgs {
            config: config.clone(),
            outdir: Some(dir.path().join("run").to_string_lossy().into_owned()),
            seed: None,
            epochs: Some(1),
        })
        .unwrap();
        cmd_evaluate(&EvaluateArgs {
            config: config.clone(),
            checkpoints: vec![run.join("model.umts")],
            split: "test".into(),
            space: "raw".into(),
            outdir: Some(run.to_string_lossy().into_owned()),
            no_forecasts: false,
        })
        .unwrap();
        let bench = cmd_bench(&BenchArgs {
            config: Some(config),
            lengths: vec![16, 32, 64, 128],
            channels: 2,
            horizon: 8,
            repeats: 5,
            seed: 1,
            outdir: Some(dir.path().join("bench").to_string_lossy().into_owned()),
        })
        .unwrap();
        let out = dir.path().join("plots");
        cmd_emit_plots(&PlotsArgs {
            out: out.clone(),
            runs: vec![run.clone()],
            scaling: Some(bench.join("scaling.csv")),
            forecasts: Some(run.join("forecasts_h8.csv")),
        })
        .unwrap();
        // one window: 8 steps for each of 2 channels
        assert_eq!(count_lines(&out.join("plot_overlay.csv")), 1 + 2 * 8);
        // two models per measured length
        assert_eq!(count_lines(&out.join("plot_scaling.csv")), 1 + 2 * 4);
        assert_eq!(count_lines(&out.join("plot_lookback.csv")), 1 + 1);
        assert_eq!(count_lines(&out.join("plot_fraction.csv")), 1 + 1);
    }

    #[test]
    fn emit_plots_names_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let ghost = dir.path().join("ghost");
        let err = cmd_emit_plots(&PlotsArgs {
            out: dir.path().join("plots"),
            runs: vec![ghost.clone()],
            scaling: None,
            forecasts: None,
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing artifact"), "{msg}");
        assert!(msg.contains("ghost"), "{msg}");
        let none = cmd_emit_plots(&PlotsArgs {
            out: dir.path().join("plots"),
            runs: vec![],
            scaling: None,
            forecasts: None,
        })
        .unwrap_err();
        assert!(none.to_string().contains("at least one"), "{none}");
    }
}
