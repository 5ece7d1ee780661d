//! Optimization loop: Adam with bias correction, global-norm clipping,
//! epoch-wise shuffling, best-validation checkpointing, and the window-level
//! evaluator.
//!
//! Determinism contract: with one seed, the parameter trajectory, history,
//! and checkpoint bytes are identical run to run. Shuffle order is keyed by
//! epoch, dropout masks by (epoch, window start), so neither thread count nor
//! batch assembly order can change the result; gradient and metric sums are
//! always reduced in window order.

use crate::checkpoint;
use crate::data::{Dataset, MetricAccum, Metrics, Standardizer, WindowPlan};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::params::ParamStore;
use crate::rng::{SeedStreams, STREAM_DROPOUT, STREAM_SHUFFLE};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::path::Path;
use std::time::Instant;

/// Adam state: one pair of moment tensors per parameter, in store order.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = (0..store.len()).map(|i| Tensor::zeros(store.get(i).shape().to_vec())).collect();
        let v = (0..store.len()).map(|i| Tensor::zeros(store.get(i).shape().to_vec())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter. The step counter increments before
    /// bias correction, so the first call uses step = 1.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Parameter(format!(
                "got {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != store.get(i).shape() {
                return Err(Error::Parameter(format!(
                    "gradient shape {:?} does not match parameter {} of shape {:?}",
                    g.shape(),
                    store.name(i),
                    store.get(i).shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {}",
                    store.name(i)
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..grads.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(i).data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate multiplier applied each epoch past `decay_after`.
    pub lr_decay: f64,
    pub decay_after: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.8,
            decay_after: 3,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose validation MSE was lowest; 0 means initialization.
    pub best_epoch: usize,
    pub seed: u64,
}

/// Mean loss and summed gradients over one batch of windows, reduced in
/// window order regardless of how many workers computed them.
fn batch_grads<M: Forecaster + Sync>(
    model: &M,
    ds: &Dataset,
    plan: &WindowPlan,
    batch: &[usize],
    epoch: usize,
    streams: &SeedStreams,
) -> Result<(f64, Vec<Tensor>)> {
    let per_window: Vec<(f64, Vec<Option<Vec<f64>>>)> = batch
        .par_iter()
        .map(|&wi| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
            let (x, y) = plan.pair(ds, wi);
            let mut tape = crate::autodiff::Tape::new();
            let leaves = model.params().leaves_on(&mut tape);
            let mut rng = streams.stream_at(STREAM_DROPOUT, &[epoch as u64, plan.starts[wi] as u64]);
            let loss = model.loss_on_tape(&mut tape, &leaves, &x, &y, true, &mut rng)?;
            tape.backward(loss)?;
            let grads = leaves.iter().map(|&lf| tape.grad(lf).map(|g| g.to_vec())).collect();
            Ok((tape.value(loss).data()[0], grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let store = model.params();
    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut grads: Vec<Tensor> =
        (0..store.len()).map(|i| Tensor::zeros(store.get(i).shape().to_vec())).collect();
    for (loss, gs) in &per_window {
        loss_sum += loss;
        for (i, g) in gs.iter().enumerate() {
            if let Some(g) = g {
                let acc = grads[i].data_mut();
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b * scale;
                }
            }
        }
    }
    Ok((loss_sum * scale, grads))
}

/// Fit the model: per-epoch shuffled minibatches, Adam with decayed learning
/// rate, validation after each epoch, best checkpoint kept on disk and
/// reloaded into the model at the end (so the returned weights are exactly
/// the checkpointed single-precision ones).
pub fn train<M: Forecaster + Sync>(
    model: &mut M,
    ds: &Dataset,
    train_plan: &WindowPlan,
    val_plan: &WindowPlan,
    settings: &TrainSettings,
    checkpoint_path: &Path,
) -> Result<TrainRun> {
    if train_plan.is_empty() {
        return Err(Error::Data("training plan holds no windows".into()));
    }
    let streams = SeedStreams::new(settings.seed);
    let header = model.header_lines();
    checkpoint::save(checkpoint_path, &header, model.params())?;

    let mut history = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    let mut opt = Adam::new(model.params(), settings.lr);

    for epoch in 1..=settings.epochs {
        let started = Instant::now();
        opt.lr = settings.lr * settings.lr_decay.powi(epoch.saturating_sub(settings.decay_after) as i32);

        let mut order: Vec<usize> = (0..train_plan.len()).collect();
        order.shuffle(&mut streams.stream_at(STREAM_SHUFFLE, &[epoch as u64]));

        let mut loss_sum = 0.0;
        let mut window_count = 0usize;
        for batch in order.chunks(settings.batch_size) {
            let (loss, mut grads) = batch_grads(model, ds, train_plan, batch, epoch, &streams)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: batch loss {loss}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            window_count += batch.len();
            clip_global_norm(&mut grads, settings.clip_norm);
            opt.step(model.params_mut(), &grads)?;
        }
        let train_loss = loss_sum / window_count as f64;

        let val = evaluate(model, ds, val_plan, EvalSpace::Raw)?;
        if val.mse < best.1 {
            best = (epoch, val.mse);
            checkpoint::save(checkpoint_path, &header, model.params())?;
        }
        let seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.6} val_mse {:.6} val_mae {:.6} ({seconds:.1}s)",
            val.mse,
            val.mae
        );
        history.push(EpochStats { epoch, train_loss, val_mse: val.mse, val_mae: val.mae, seconds });
    }

    let (_, entries) = checkpoint::load(checkpoint_path)?;
    model.params_mut().load_from(&entries)?;
    Ok(TrainRun { history, best_epoch: best.0, seed: settings.seed })
}

/// Which scale the reported errors live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSpace {
    /// Original data units (forecast already denormalized).
    #[default]
    Raw,
    /// Dataset-level z-scores from a fitted standardizer.
    Standardized,
}

/// Score every window of the plan at stride 1 (or whatever the plan holds).
/// Per-window subtotals are merged in plan order, so results are bit-stable
/// across worker counts.
pub fn evaluate<M: Forecaster + Sync>(
    model: &M,
    ds: &Dataset,
    plan: &WindowPlan,
    space: EvalSpace,
) -> Result<Metrics> {
    evaluate_with(model, ds, plan, space, None)
}

pub fn evaluate_with<M: Forecaster + Sync>(
    model: &M,
    ds: &Dataset,
    plan: &WindowPlan,
    space: EvalSpace,
    standardizer: Option<&Standardizer>,
) -> Result<Metrics> {
    let st = match (space, standardizer) {
        (EvalSpace::Raw, _) => None,
        (EvalSpace::Standardized, Some(st)) => Some(st),
        (EvalSpace::Standardized, None) => {
            return Err(Error::Config(
                "standardized-space evaluation needs a fitted standardizer".into(),
            ))
        }
    };
    let accums: Vec<MetricAccum> = (0..plan.len())
        .into_par_iter()
        .map(|i| -> Result<MetricAccum> {
            let (x, y) = plan.pair(ds, i);
            let pred = model.forecast(&x)?;
            let (truth, pred) = match st {
                Some(st) => (st.apply(&y)?, st.apply(&pred)?),
                None => (y, pred),
            };
            let mut acc = MetricAccum::new();
            acc.add(&truth, &pred)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MetricAccum::new();
    for a in &accums {
        total.merge(a);
    }
    total.finish()
}

/// History CSV: epoch, train_loss, val_mse, val_mae, seconds. Seconds are
/// floored to whole numbers so reruns of a deterministic job produce
/// byte-identical files.
pub fn history_csv(run: &TrainRun) -> String {
    let mut out = String::from("epoch,train_loss,val_mse,val_mae,seconds\n");
    for h in &run.history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch,
            h.train_loss,
            h.val_mse,
            h.val_mae,
            h.seconds.floor() as u64
        ));
    }
    out
}

pub fn write_history_csv(path: &Path, run: &TrainRun) -> Result<()> {
    std::fs::write(path, history_csv(run))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{windows, Segment};
    use crate::model::{LinearModel, ModelConfig, RepeatLast, UmambaModel};
    use crate::rng::STREAM_INIT;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::from_parts(vec![1], vec![v]));
        s
    }

    #[test]
    fn adam_first_step_hand_value() {
        let mut store = scalar_store(1.0);
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Tensor::from_parts(vec![1], vec![1.0])]).unwrap();
        let p = store.get(0).data()[0];
        assert!((p - 0.900_000_000_999_999_88).abs() < 1e-15, "got {p:.17}");
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut store = scalar_store(0.75);
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Tensor::zeros(vec![1])]).unwrap();
        assert_eq!(store.get(0).data()[0], 0.75);
    }

    #[test]
    fn adam_two_runs_bit_identical() {
        let run = || {
            let mut store = scalar_store(1.0);
            let mut opt = Adam::new(&store, 0.05);
            for k in 1..=25 {
                let g = (k as f64 * 0.3).sin();
                opt.step(&mut store, &[Tensor::from_parts(vec![1], vec![g])]).unwrap();
            }
            store.get(0).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut store = scalar_store(1.0);
        let mut opt = Adam::new(&store, 0.1);
        let err =
            opt.step(&mut store, &[Tensor::from_parts(vec![1], vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains('p'), "names the parameter: {err}");
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn adam_step_descends_quadratic() {
        for lr in [1e-2, 1e-3, 1e-4] {
            let mut store = scalar_store(1.0);
            let mut opt = Adam::new(&store, lr);
            let g = 2.0 * store.get(0).data()[0]; // d(p^2)/dp
            opt.step(&mut store, &[Tensor::from_parts(vec![1], vec![g])]).unwrap();
            let p = store.get(0).data()[0];
            assert!(p * p < 1.0, "lr {lr} loss rose to {}", p * p);
        }
    }

    #[test]
    fn clip_leaves_small_gradients_alone_and_scales_large() {
        let mut grads = vec![Tensor::from_parts(vec![2], vec![3.0, 4.0])];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].data(), &[3.0, 4.0]);

        let mut grads = vec![Tensor::from_parts(vec![2], vec![30.0, 40.0])];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 50.0);
        assert!((grads[0].data()[0] - 3.0).abs() < 1e-12);
        assert!((grads[0].data()[1] - 4.0).abs() < 1e-12);
    }

    fn toy_setup(points: usize) -> (Dataset, WindowPlan, WindowPlan) {
        let ds = Dataset::synthetic_sine(points, 24.0);
        let segs = ds.split((0.7, 0.2, 0.1)).unwrap();
        let train = windows(&segs[0], 24, 8, 1, false).unwrap();
        let val = windows(&segs[1], 24, 8, 1, false).unwrap();
        (ds, train, val)
    }

    fn toy_model(seed: u64) -> UmambaModel {
        let cfg = ModelConfig {
            scales: vec![32, 16],
            k: 1,
            d_state: 2,
            dropout: 0.1,
            ..ModelConfig::new(1, 24, 8)
        };
        let mut rng = SeedStreams::new(seed).stream(STREAM_INIT);
        UmambaModel::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn sine_training_converges() {
        let (ds, train_plan, val_plan) = toy_setup(500);
        let mut model = toy_model(7);
        let settings = TrainSettings { epochs: 3, batch_size: 16, ..TrainSettings::default() };
        let dir = tempfile::tempdir().unwrap();
        let run =
            train(&mut model, &ds, &train_plan, &val_plan, &settings, &dir.path().join("m.umts"))
                .unwrap();
        let first = run.history.first().unwrap().train_loss;
        let last = run.history.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "loss barely moved: {first} -> {last}");
        // monotone trend with a 10% tolerance band
        for pair in run.history.windows(2) {
            assert!(
                pair[1].train_loss <= pair[0].train_loss * 1.1,
                "loss rose beyond the band: {} -> {}",
                pair[0].train_loss,
                pair[1].train_loss
            );
        }
        assert!(run.best_epoch >= 1);
    }

    #[test]
    fn same_seed_same_history_and_checkpoint() {
        let go = || {
            let (ds, train_plan, val_plan) = toy_setup(260);
            let mut model = toy_model(9);
            let settings =
                TrainSettings { epochs: 2, batch_size: 8, seed: 5, ..TrainSettings::default() };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.umts");
            let run = train(&mut model, &ds, &train_plan, &val_plan, &settings, &path).unwrap();
            (history_csv(&run), std::fs::read(&path).unwrap(), run)
        };
        let (csv_a, ckpt_a, run_a) = go();
        let (csv_b, ckpt_b, run_b) = go();
        assert_eq!(csv_a, csv_b);
        assert_eq!(ckpt_a, ckpt_b);
        for (a, b) in run_a.history.iter().zip(&run_b.history) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_mse.to_bits(), b.val_mse.to_bits());
        }
    }

    #[test]
    fn zero_epochs_checkpoint_equals_initialization() {
        let (ds, train_plan, val_plan) = toy_setup(260);
        let mut model = toy_model(11);
        let init: Vec<Tensor> =
            (0..model.params().len()).map(|i| model.params().get(i).clone()).collect();
        let settings = TrainSettings { epochs: 0, ..TrainSettings::default() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.umts");
        let run = train(&mut model, &ds, &train_plan, &val_plan, &settings, &path).unwrap();
        assert!(run.history.is_empty());
        assert_eq!(run.best_epoch, 0);
        let (_, entries) = checkpoint::load(&path).unwrap();
        for (i, (_, t)) in entries.iter().enumerate() {
            let quantized: Vec<f64> = init[i].data().iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(t.data(), &quantized[..]);
        }
    }

    #[test]
    fn checkpoint_round_trip_gives_bit_identical_metrics() {
        let (ds, train_plan, val_plan) = toy_setup(260);
        let mut model = toy_model(13);
        let settings = TrainSettings { epochs: 1, batch_size: 8, ..TrainSettings::default() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.umts");
        train(&mut model, &ds, &train_plan, &val_plan, &settings, &path).unwrap();

        let direct = evaluate(&model, &ds, &val_plan, EvalSpace::Raw).unwrap();
        let mut reloaded = toy_model(999); // same shape, different weights
        let (_, entries) = checkpoint::load(&path).unwrap();
        reloaded.params_mut().load_from(&entries).unwrap();
        let via_disk = evaluate(&reloaded, &ds, &val_plan, EvalSpace::Raw).unwrap();
        assert_eq!(direct.mse.to_bits(), via_disk.mse.to_bits());
        assert_eq!(direct.mae.to_bits(), via_disk.mae.to_bits());
        assert_eq!(direct.count, via_disk.count);
    }

    #[test]
    fn repeat_last_on_unit_ramp_mae() {
        let ds = Dataset::synthetic_ramp(100);
        let seg = Segment { role: "test", start: 0, end: 100 };
        let plan = windows(&seg, 8, 4, 1, false).unwrap();
        let model = RepeatLast::new(1, 8, 4);
        let m = evaluate(&model, &ds, &plan, EvalSpace::Raw).unwrap();
        assert!((m.mae - 2.5).abs() < 1e-12);
        assert!((m.mse - 7.5).abs() < 1e-12); // mean of 1,4,9,16
        assert_eq!(m.count, plan.len());
    }

    #[test]
    fn perfect_model_on_constant_data_scores_zero() {
        let values = Tensor::full(vec![60, 1], 3.25);
        let ds = Dataset::from_values("const", vec!["v".into()], values, "synthetic");
        let seg = Segment { role: "test", start: 0, end: 60 };
        let plan = windows(&seg, 8, 4, 1, false).unwrap();
        let model = RepeatLast::new(1, 8, 4);
        let m = evaluate(&model, &ds, &plan, EvalSpace::Raw).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
    }

    #[test]
    fn evaluate_matches_window_at_a_time_loop() {
        let (ds, _, val_plan) = toy_setup(260);
        let model = toy_model(17);
        let all = evaluate(&model, &ds, &val_plan, EvalSpace::Raw).unwrap();
        // Same association as evaluate: one sub-accumulator per window, merged
        // in plan order. This must agree to the bit.
        let mut merged = MetricAccum::new();
        for i in 0..val_plan.len() {
            let (x, y) = val_plan.pair(&ds, i);
            let mut one = MetricAccum::new();
            one.add(&y, &model.forecast(&x).unwrap()).unwrap();
            merged.merge(&one);
        }
        let manual = merged.finish().unwrap();
        assert_eq!(all.mse.to_bits(), manual.mse.to_bits());
        assert_eq!(all.mae.to_bits(), manual.mae.to_bits());
        // A single flat accumulator associates the sums differently; it may
        // differ by rounding but not by anything material.
        let mut flat = MetricAccum::new();
        for i in 0..val_plan.len() {
            let (x, y) = val_plan.pair(&ds, i);
            flat.add(&y, &model.forecast(&x).unwrap()).unwrap();
        }
        let loose = flat.finish().unwrap();
        assert!((all.mse - loose.mse).abs() <= 1e-12 * all.mse.abs().max(1.0));
        assert!((all.mae - loose.mae).abs() <= 1e-12 * all.mae.abs().max(1.0));
    }

    #[test]
    fn standardized_space_requires_standardizer() {
        let (ds, _, val_plan) = toy_setup(260);
        let model = toy_model(19);
        assert!(evaluate(&model, &ds, &val_plan, EvalSpace::Standardized).is_err());
        let segs = ds.split((0.7, 0.2, 0.1)).unwrap();
        let st = Standardizer::fit(&ds, &segs[0]);
        let m = evaluate_with(&model, &ds, &val_plan, EvalSpace::Standardized, Some(&st)).unwrap();
        assert!(m.mse.is_finite());
    }

    #[test]
    fn linear_baseline_trains() {
        let (ds, train_plan, val_plan) = toy_setup(500);
        let mut rng = SeedStreams::new(21).stream(STREAM_INIT);
        let mut model = LinearModel::new(1, 24, 8, &mut rng);
        let settings = TrainSettings { epochs: 3, batch_size: 16, ..TrainSettings::default() };
        let dir = tempfile::tempdir().unwrap();
        let run =
            train(&mut model, &ds, &train_plan, &val_plan, &settings, &dir.path().join("l.umts"))
                .unwrap();
        let first = run.history.first().unwrap().train_loss;
        let last = run.history.last().unwrap().train_loss;
        assert!(last < first);
    }

    #[test]
    fn history_csv_layout() {
        let run = TrainRun {
            history: vec![EpochStats {
                epoch: 1,
                train_loss: 0.5,
                val_mse: 0.25,
                val_mae: 0.4,
                seconds: 0.73,
            }],
            best_epoch: 1,
            seed: 3,
        };
        assert_eq!(history_csv(&run), "epoch,train_loss,val_mse,val_mae,seconds\n1,0.5,0.25,0.4,0\n");
    }
}
