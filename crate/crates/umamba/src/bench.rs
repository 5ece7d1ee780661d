//! Sequence-length scaling benchmark with a deliberately naive quadratic
//! self-attention reference, plus the allocation meter both rely on.
//!
//! The meter is a wrapper around the system allocator keeping live-byte and
//! peak counters; the crate installs it globally so peak heap usage around a
//! forward call can be read without OS-specific RSS sampling. Timings are
//! medians over repeated single-threaded forward passes.

use crate::error::{Error, Result};
use crate::model::{Forecaster, ModelConfig, UmambaModel};
use crate::rng::{SeedStreams, STREAM_BENCH, STREAM_INIT};
use crate::tensor::Tensor;
use rand::Rng;
use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

/// System allocator with live/peak byte counters.
pub struct MeteredAlloc;

unsafe impl GlobalAlloc for MeteredAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let live = LIVE_BYTES.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE_BYTES.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: MeteredAlloc = MeteredAlloc;

/// Start a fresh peak measurement from the current live count.
pub fn reset_peak() {
    PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Highest live-byte count seen since the last reset.
pub fn peak_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

/// One full-attention layer pass over an L x width sequence: scores = QK^T
/// (L x L), row softmax, times V. Exists purely as an O(L^2) anchor for the
/// exponent comparison, so the width stays small and fixed.
pub fn quadratic_attention_reference(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let kt = k.transpose();
    let mut scores = q.matmul(&kt)?;
    let l = scores.rows();
    let w = scores.cols();
    {
        let data = scores.data_mut();
        for r in 0..l {
            let row = &mut data[r * w..(r + 1) * w];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
    }
    scores.matmul(v)
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub l: usize,
    pub model_seconds: f64,
    pub model_peak_bytes: usize,
    pub quadratic_seconds: f64,
    pub quadratic_peak_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Fitted log-log slope of seconds versus L.
    pub model_exponent: f64,
    pub quadratic_exponent: f64,
    pub repeats: usize,
}

/// Least-squares slope of ln(y) on ln(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Width of the attention reference tokens; small so the L x L score matrix
/// dominates as soon as L reaches the hundreds.
const ATTN_WIDTH: usize = 8;
/// Forward passes per timed repeat, amortizing timer granularity.
const INNER_PASSES: usize = 4;

/// Time model forwards and the quadratic reference across lookback lengths.
/// Needs at least 3 lengths spanning 8x or more, strictly increasing. Runs
/// single-threaded; medians are over `repeats` (minimum 5) timed repeats.
pub fn bench_scaling(
    lengths: &[usize],
    n_channels: usize,
    base: &ModelConfig,
    repeats: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if lengths.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 lookback lengths, got {}",
            lengths.len()
        )));
    }
    if !lengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(format!("lookback lengths must increase: {lengths:?}")));
    }
    let span = lengths[lengths.len() - 1] as f64 / lengths[0] as f64;
    if span < 8.0 {
        return Err(Error::Config(format!(
            "lookback lengths must span at least 8x, got {span:.2}x"
        )));
    }
    let repeats = repeats.max(5);
    let streams = SeedStreams::new(seed);

    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let cfg = ModelConfig { lookback: l, ..base.clone() };
        let mut init_rng = streams.stream_at(STREAM_INIT, &[l as u64]);
        let model = UmambaModel::new(cfg, &mut init_rng)?;
        let mut data_rng = streams.stream_at(STREAM_BENCH, &[l as u64]);
        let x = Tensor::from_fn(vec![n_channels, l], |_| data_rng.gen_range(-1.0..1.0));
        let q = Tensor::from_fn(vec![l, ATTN_WIDTH], |_| data_rng.gen_range(-1.0..1.0));
        let k = Tensor::from_fn(vec![l, ATTN_WIDTH], |_| data_rng.gen_range(-1.0..1.0));
        let v = Tensor::from_fn(vec![l, ATTN_WIDTH], |_| data_rng.gen_range(-1.0..1.0));

        // warmup, and the peak measurement while nothing is being timed
        reset_peak();
        let baseline = live_bytes();
        let out = model.forecast(&x)?;
        if !out.is_finite() {
            return Err(Error::Numeric("benchmark forward produced non-finite output".into()));
        }
        let model_peak = peak_bytes().saturating_sub(baseline);
        drop(out);
        reset_peak();
        let baseline = live_bytes();
        quadratic_attention_reference(&q, &k, &v)?;
        let quad_peak = peak_bytes().saturating_sub(baseline);

        let mut model_times = Vec::with_capacity(repeats);
        let mut quad_times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            for _ in 0..INNER_PASSES {
                let _ = model.forecast(&x)?;
            }
            model_times.push(t0.elapsed().as_secs_f64() / INNER_PASSES as f64);
            let t0 = Instant::now();
            for _ in 0..INNER_PASSES {
                let _ = quadratic_attention_reference(&q, &k, &v)?;
            }
            quad_times.push(t0.elapsed().as_secs_f64() / INNER_PASSES as f64);
        }
        let model_seconds = median(model_times);
        let quadratic_seconds = median(quad_times);
        if model_seconds < 1e-3 || quadratic_seconds < 1e-3 {
            log::warn!(
                "L={l}: sub-millisecond medians ({model_seconds:.2e}s model, \
                 {quadratic_seconds:.2e}s reference); timer resolution may dominate"
            );
        }
        rows.push(ScalingRow {
            l,
            model_seconds,
            model_peak_bytes: model_peak,
            quadratic_seconds,
            quadratic_peak_bytes: quad_peak,
        });
    }

    let ls: Vec<f64> = rows.iter().map(|r| r.l as f64).collect();
    let model_exponent = log_log_slope(&ls, &rows.iter().map(|r| r.model_seconds).collect::<Vec<_>>());
    let quadratic_exponent =
        log_log_slope(&ls, &rows.iter().map(|r| r.quadratic_seconds).collect::<Vec<_>>());
    Ok(ScalingReport { rows, model_exponent, quadratic_exponent, repeats })
}
