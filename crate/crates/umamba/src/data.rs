//! Dataset ingestion, chronological splitting, sliding windows, and metrics.
//!
//! Files are plain CSV: a header row, a leading timestamp or index column,
//! then one numeric column per channel. Values live in a rows x channels
//! matrix; windows come out channel-major (N x width) the way the model eats
//! them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Known benchmark datasets: name, channels, rows, sampling interval.
/// Loading under one of these names enforces the extents exactly.
pub const MANIFEST: &[(&str, usize, usize, &str)] = &[
    ("ETTh1", 7, 17420, "1h"),
    ("ETTh2", 7, 17420, "1h"),
    ("ETTm1", 7, 69680, "15min"),
    ("ETTm2", 7, 69680, "15min"),
    ("weather", 21, 52696, "10min"),
    ("electricity", 321, 26304, "1h"),
    ("traffic", 862, 17544, "1h"),
];

pub fn manifest_entry(name: &str) -> Option<(usize, usize, &'static str)> {
    MANIFEST.iter().find(|(n, ..)| *n == name).map(|&(_, c, r, f)| (c, r, f))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub channel_names: Vec<String>,
    /// rows x channels, row index is time.
    pub values: Tensor,
    pub freq: String,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.cols()
    }

    pub fn from_values(name: &str, channel_names: Vec<String>, values: Tensor, freq: &str) -> Self {
        Dataset { name: name.into(), channel_names, values, freq: freq.into() }
    }

    /// Parse a CSV file. With a declared name the channel and row counts must
    /// match the manifest exactly. Timestamps must never decrease; a repeated
    /// stamp only warns because the canonical weather file contains one.
    pub fn load_csv(path: &Path, declared_name: Option<&str>) -> Result<Dataset> {
        if let Some(name) = declared_name {
            if manifest_entry(name).is_none() {
                let known: Vec<&str> = MANIFEST.iter().map(|(n, ..)| *n).collect();
                return Err(Error::Config(format!(
                    "unknown dataset name '{name}', known: {}",
                    known.join(", ")
                )));
            }
        }

        // byte records throughout: the weather header is not valid UTF-8
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path)?;
        let mut records = reader.byte_records();

        let header = match records.next() {
            Some(r) => r.map_err(|e| Error::Data(format!("cannot read header: {e}")))?,
            None => return Err(Error::Data(format!("{}: empty file", path.display()))),
        };
        if header.len() < 2 {
            return Err(Error::Data(format!(
                "{}: need a timestamp column plus at least one channel",
                path.display()
            )));
        }
        let channel_names: Vec<String> = header
            .iter()
            .skip(1)
            .map(|b| String::from_utf8_lossy(b).into_owned())
            .collect();
        let n = channel_names.len();

        let mut data: Vec<f64> = Vec::new();
        let mut prev_stamp: Option<Vec<u8>> = None;
        let mut line = 1usize; // header is line 1
        for rec in records {
            let rec = rec.map_err(|e| Error::Data(format!("row read failed near line {line}: {e}")))?;
            line += 1;
            if rec.len() != n + 1 {
                return Err(Error::Parse {
                    row: line,
                    col: rec.len(),
                    msg: format!("expected {} fields, found {}", n + 1, rec.len()),
                });
            }
            let stamp = rec[0].to_vec();
            if let Some(prev) = &prev_stamp {
                if stamp < *prev {
                    return Err(Error::Data(format!(
                        "timestamps go backwards at line {line}: '{}' after '{}'",
                        String::from_utf8_lossy(&stamp),
                        String::from_utf8_lossy(prev)
                    )));
                }
                if stamp == *prev {
                    log::warn!(
                        "duplicate timestamp '{}' at line {line}",
                        String::from_utf8_lossy(&stamp)
                    );
                }
            }
            prev_stamp = Some(stamp);
            for (j, cell) in rec.iter().enumerate().skip(1) {
                let text = std::str::from_utf8(cell)
                    .map_err(|_| Error::Parse { row: line, col: j + 1, msg: "non-utf8 cell".into() })?
                    .trim();
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    row: line,
                    col: j + 1,
                    msg: format!("not a number: '{text}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: line,
                        col: j + 1,
                        msg: format!("non-finite value '{text}'"),
                    });
                }
                data.push(v);
            }
        }
        let rows = data.len() / n;
        if rows == 0 {
            return Err(Error::Data(format!("{}: no data rows", path.display())));
        }

        let (name, freq) = match declared_name {
            Some(name) => {
                let (want_c, want_r, freq) = manifest_entry(name).unwrap();
                if n != want_c || rows != want_r {
                    return Err(Error::Data(format!(
                        "{name}: expected {want_c} channels x {want_r} rows, found {n} x {rows}"
                    )));
                }
                (name.to_string(), freq.to_string())
            }
            None => {
                let stem =
                    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, "unknown".to_string())
            }
        };

        Ok(Dataset { name, channel_names, values: Tensor::from_parts(vec![rows, n], data), freq })
    }

    /// Chronological 3-way split by row index. The +1e-9 nudge counters the
    /// downward drift of products like 0.7*17420, which lands a hair under
    /// the exact integer in binary floating point.
    pub fn split(&self, ratios: (f64, f64, f64)) -> Result<[Segment; 3]> {
        let (a, b, c) = ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {ratios:?} summing to {}",
                a + b + c
            )));
        }
        let r = self.n_rows() as f64;
        let n_train = ((a * r) + 1e-9).floor() as usize;
        let n_val = ((b * r) + 1e-9).floor() as usize;
        if n_train + n_val >= self.n_rows() {
            return Err(Error::Config(format!(
                "split leaves no test rows ({} train + {} val of {})",
                n_train,
                n_val,
                self.n_rows()
            )));
        }
        let segs = [
            Segment { role: "train", start: 0, end: n_train },
            Segment { role: "val", start: n_train, end: n_train + n_val },
            Segment { role: "test", start: n_train + n_val, end: self.n_rows() },
        ];
        log::info!(
            "split {}: train [0, {}), val [{}, {}), test [{}, {})",
            self.name,
            segs[0].end,
            segs[1].start,
            segs[1].end,
            segs[2].start,
            segs[2].end
        );
        Ok(segs)
    }

    /// One channel-major window: rows [start, start+len) transposed to N x len.
    pub fn window(&self, start: usize, len: usize) -> Tensor {
        let n = self.n_channels();
        debug_assert!(start + len <= self.n_rows());
        Tensor::from_fn(vec![n, len], |idx| {
            let (c, t) = (idx / len, idx % len);
            self.values.at2(start + t, c)
        })
    }

    /// Pure deterministic sine, one channel.
    pub fn synthetic_sine(points: usize, period: f64) -> Dataset {
        let values = Tensor::from_fn(vec![points, 1], |i| {
            (2.0 * std::f64::consts::PI * i as f64 / period).sin()
        });
        Dataset::from_values("sine", vec!["value".into()], values, "synthetic")
    }

    /// Slope-one ramp, one channel.
    pub fn synthetic_ramp(points: usize) -> Dataset {
        let values = Tensor::from_fn(vec![points, 1], |i| i as f64);
        Dataset::from_values("ramp", vec!["value".into()], values, "synthetic")
    }
}

/// A half-open row range of one dataset with its role name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub role: &'static str,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// The ordered lookback starts of every window over one segment.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub l: usize,
    pub t: usize,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Materialize window i as (lookback N x L, target N x T).
    pub fn pair(&self, ds: &Dataset, i: usize) -> (Tensor, Tensor) {
        let s = self.starts[i];
        (ds.window(s, self.l), ds.window(s + self.l, self.t))
    }
}

/// Enumerate window starts: floor((len - L - T)/stride) + 1 windows, each
/// with its lookback and target inside the segment. With `reach_back` the
/// lookback may borrow up to L rows before the segment (targets never move),
/// adding up to L/stride extra windows at the front.
pub fn windows(seg: &Segment, l: usize, t: usize, stride: usize, reach_back: bool) -> Result<WindowPlan> {
    if stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    if seg.len() < l + t {
        return Err(Error::Data(format!(
            "{} segment holds {} rows but one window needs L+T = {}",
            seg.role,
            seg.len(),
            l + t
        )));
    }
    let first = if reach_back { seg.start.saturating_sub(l) } else { seg.start };
    let last = seg.end - l - t;
    let starts: Vec<usize> = (first..=last).step_by(stride).collect();
    Ok(WindowPlan { starts, l, t })
}

/// Per-channel z-score transform fitted on one segment (population std,
/// floored) and applied to channel-major windows.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset, seg: &Segment) -> Standardizer {
        let n = ds.n_channels();
        let rows = seg.len() as f64;
        let mut mean = vec![0.0; n];
        for r in seg.start..seg.end {
            for c in 0..n {
                mean[c] += ds.values.at2(r, c);
            }
        }
        for m in &mut mean {
            *m /= rows;
        }
        let mut var = vec![0.0; n];
        for r in seg.start..seg.end {
            for c in 0..n {
                let d = ds.values.at2(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / rows).sqrt().max(1e-5)).collect();
        Standardizer { mean, std }
    }

    /// Standardize an N x W channel-major window.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                left: x.shape().to_vec(),
                right: vec![self.mean.len()],
            });
        }
        let w = x.cols();
        Ok(Tensor::from_fn(x.shape().to_vec(), |idx| {
            let c = idx / w;
            (x.data()[idx] - self.mean[c]) / self.std[c]
        }))
    }
}

/// Aggregated forecast errors over a set of windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean of raw (signed) errors; a bias diagnostic, not a quality score.
    pub signed_me: f64,
    /// Evaluated window count.
    pub count: usize,
}

/// Running error sums; add windows in any order, totals are element-weighted
/// so the result is independent of batching and ordering.
#[derive(Debug, Clone, Default)]
pub struct MetricAccum {
    sq: f64,
    abs: f64,
    signed: f64,
    elems: usize,
    windows: usize,
}

impl MetricAccum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, truth: &Tensor, pred: &Tensor) -> Result<()> {
        if truth.shape() != pred.shape() {
            return Err(Error::ShapeMismatch {
                op: "metrics",
                left: truth.shape().to_vec(),
                right: pred.shape().to_vec(),
            });
        }
        for (t, p) in truth.data().iter().zip(pred.data()) {
            let e = t - p;
            self.sq += e * e;
            self.abs += e.abs();
            self.signed += e;
        }
        self.elems += truth.numel();
        self.windows += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccum) {
        self.sq += other.sq;
        self.abs += other.abs;
        self.signed += other.signed;
        self.elems += other.elems;
        self.windows += other.windows;
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.elems == 0 {
            return Err(Error::Data("no windows were evaluated".into()));
        }
        let n = self.elems as f64;
        Ok(Metrics {
            mse: self.sq / n,
            mae: self.abs / n,
            signed_me: self.signed / n,
            count: self.windows,
        })
    }
}

pub fn mse(truth: &Tensor, pred: &Tensor) -> Result<f64> {
    let mut acc = MetricAccum::new();
    acc.add(truth, pred)?;
    Ok(acc.finish()?.mse)
}

pub fn mae(truth: &Tensor, pred: &Tensor) -> Result<f64> {
    let mut acc = MetricAccum::new();
    acc.add(truth, pred)?;
    Ok(acc.finish()?.mae)
}

pub fn signed_me(truth: &Tensor, pred: &Tensor) -> Result<f64> {
    let mut acc = MetricAccum::new();
    acc.add(truth, pred)?;
    Ok(acc.finish()?.signed_me)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_tiny_fixture() {
        let f = write_csv("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n");
        let ds = Dataset::load_csv(f.path(), None).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_channels(), 2);
        assert_eq!(ds.channel_names, vec!["a", "b"]);
        assert_eq!(ds.values.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn parse_error_reports_row_and_column() {
        let f = write_csv("date,a,b\n2020-01-01,1,2\n2020-01-02,oops,4\n");
        let err = Dataset::load_csv(f.path(), None).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 3);
                assert_eq!(col, 2);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn nan_cell_is_a_hard_error() {
        let f = write_csv("date,a\n2020-01-01,1\n2020-01-02,NaN\n");
        let err = Dataset::load_csv(f.path(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, col: 2, .. }), "got {err}");
    }

    #[test]
    fn backwards_timestamps_rejected() {
        let f = write_csv("date,a\n2020-01-02,1\n2020-01-01,2\n");
        let err = Dataset::load_csv(f.path(), None).unwrap_err();
        assert!(err.to_string().contains("backwards"));
    }

    #[test]
    fn duplicate_timestamp_only_warns() {
        let f = write_csv("date,a\n2020-01-01,1\n2020-01-01,2\n");
        assert!(Dataset::load_csv(f.path(), None).is_ok());
    }

    #[test]
    fn unknown_declared_name_rejected() {
        let f = write_csv("date,a\n2020-01-01,1\n");
        let err = Dataset::load_csv(f.path(), Some("ETTh9")).unwrap_err();
        assert!(err.to_string().contains("ETTh9"));
    }

    #[test]
    fn manifest_mismatch_cites_expected_and_found() {
        let f = write_csv("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n");
        let err = Dataset::load_csv(f.path(), Some("ETTh1")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("7") && msg.contains("17420") && msg.contains("2"), "got {msg}");
    }

    #[test]
    fn etth1_matches_manifest() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ETTh1.csv");
        if !path.exists() {
            eprintln!("skipping: {} not present", path.display());
            return;
        }
        let ds = Dataset::load_csv(&path, Some("ETTh1")).unwrap();
        assert_eq!(ds.n_channels(), 7);
        assert_eq!(ds.n_rows(), 17420);
    }

    #[test]
    fn weather_matches_manifest() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/weather.csv");
        if !path.exists() {
            eprintln!("skipping: {} not present", path.display());
            return;
        }
        let ds = Dataset::load_csv(&path, Some("weather")).unwrap();
        assert_eq!(ds.n_channels(), 21);
        assert_eq!(ds.n_rows(), 52696);
    }

    fn counted(rows: usize) -> Dataset {
        Dataset::synthetic_ramp(rows)
    }

    #[test]
    fn split_100_rows() {
        let segs = counted(100).split((0.7, 0.2, 0.1)).unwrap();
        assert_eq!(segs[0], Segment { role: "train", start: 0, end: 70 });
        assert_eq!(segs[1], Segment { role: "val", start: 70, end: 90 });
        assert_eq!(segs[2], Segment { role: "test", start: 90, end: 100 });
    }

    #[test]
    fn split_etth1_rows() {
        let segs = counted(17420).split((0.7, 0.2, 0.1)).unwrap();
        assert_eq!(segs[0].len(), 12194);
        assert_eq!(segs[1].len(), 3484);
        assert_eq!(segs[2].len(), 1742);
    }

    #[test]
    fn split_rejects_bad_ratio_sum() {
        assert!(counted(100).split((0.7, 0.2, 0.09)).is_err());
        assert!(counted(100).split((0.7, 0.3, 0.0)).is_err());
    }

    #[test]
    fn window_counts_match_formula() {
        let seg = Segment { role: "train", start: 0, end: 200 };
        assert_eq!(windows(&seg, 96, 96, 1, false).unwrap().len(), 9);
        let seg = Segment { role: "train", start: 0, end: 192 };
        assert_eq!(windows(&seg, 96, 96, 1, false).unwrap().len(), 1);
        let seg = Segment { role: "train", start: 0, end: 300 };
        assert_eq!(windows(&seg, 96, 96, 10, false).unwrap().len(), 11);
    }

    #[test]
    fn short_segment_rejected() {
        let seg = Segment { role: "val", start: 0, end: 191 };
        let err = windows(&seg, 96, 96, 1, false).unwrap_err();
        assert!(err.to_string().contains("val"));
    }

    #[test]
    fn windows_are_contiguous_and_ordered() {
        let ds = counted(30);
        let seg = Segment { role: "train", start: 0, end: 30 };
        let plan = windows(&seg, 4, 2, 1, false).unwrap();
        assert_eq!(plan.len(), 25);
        for (i, s) in plan.starts.iter().enumerate() {
            assert_eq!(*s, i);
            let (x, y) = plan.pair(&ds, i);
            assert_eq!(x.data()[3] + 1.0, y.data()[0]);
        }
    }

    #[test]
    fn reach_back_extends_lookback_into_previous_rows() {
        let seg = Segment { role: "val", start: 50, end: 100 };
        let strict = windows(&seg, 10, 5, 1, false).unwrap();
        let loose = windows(&seg, 10, 5, 1, true).unwrap();
        assert_eq!(strict.starts[0], 50);
        assert_eq!(loose.starts[0], 40);
        assert_eq!(loose.len(), strict.len() + 10);
        // targets always stay inside the segment
        assert!(loose.starts.iter().all(|s| s + 10 >= seg.start));
    }

    #[test]
    fn no_leakage_across_split_borders() {
        let ds = counted(1000);
        let segs = ds.split((0.7, 0.2, 0.1)).unwrap();
        let plans: Vec<WindowPlan> =
            segs.iter().map(|s| windows(s, 16, 8, 1, false).unwrap()).collect();
        let max_train = plans[0].starts.iter().map(|s| s + 16 + 8).max().unwrap();
        let min_val = *plans[1].starts.iter().min().unwrap();
        let max_val = plans[1].starts.iter().map(|s| s + 16 + 8).max().unwrap();
        let min_test = *plans[2].starts.iter().min().unwrap();
        assert!(max_train <= segs[1].start); // train rows end before val begins
        assert!(max_val <= segs[2].start);
        assert!(min_val >= segs[1].start && min_test >= segs[2].start);
    }

    #[test]
    fn stride_one_covers_every_offset_once() {
        let seg = Segment { role: "train", start: 0, end: 40 };
        let plan = windows(&seg, 8, 4, 1, false).unwrap();
        let mut seen = vec![0usize; 40];
        for s in &plan.starts {
            seen[*s] += 1;
        }
        for off in 0..(40 - 8 - 4 + 1) {
            assert_eq!(seen[off], 1);
        }
    }

    #[test]
    fn metric_hand_examples() {
        let y = Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(mse(&y, &p).unwrap(), 1.0);
        assert_eq!(mae(&y, &p).unwrap(), 1.0);
        let y = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![-2.0, 2.0]]).unwrap();
        assert_eq!(mse(&y, &p).unwrap(), 4.0);
        assert_eq!(mae(&y, &p).unwrap(), 2.0);
        assert_eq!(signed_me(&y, &p).unwrap(), 0.0);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn metric_aggregation_is_order_invariant() {
        let a = (Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(), Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let b = (Tensor::from_rows(&[vec![3.0]]).unwrap(), Tensor::from_rows(&[vec![1.0]]).unwrap());
        let c = (Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap(), Tensor::from_rows(&[vec![4.0, 6.0, 5.0]]).unwrap());
        let mut fwd = MetricAccum::new();
        for (t, p) in [&a, &b, &c] {
            fwd.add(t, p).unwrap();
        }
        let mut rev = MetricAccum::new();
        for (t, p) in [&c, &b, &a] {
            rev.add(t, p).unwrap();
        }
        let (m1, m2) = (fwd.finish().unwrap(), rev.finish().unwrap());
        assert_eq!(m1.mse, m2.mse);
        assert_eq!(m1.mae, m2.mae);
        assert_eq!(m1.count, 3);
    }

    #[test]
    fn metric_shape_mismatch_rejected() {
        let mut acc = MetricAccum::new();
        let t = Tensor::zeros(vec![2, 3]);
        let p = Tensor::zeros(vec![3, 2]);
        assert!(acc.add(&t, &p).is_err());
    }

    #[test]
    fn standardizer_zeroes_fitted_segment_moments() {
        let ds = Dataset::synthetic_sine(500, 48.0);
        let seg = Segment { role: "train", start: 0, end: 400 };
        let st = Standardizer::fit(&ds, &seg);
        // standardize the whole fitted stretch and re-measure
        let x = ds.window(0, 400);
        let z = st.apply(&x).unwrap();
        let mean = z.data().iter().sum::<f64>() / 400.0;
        let var = z.data().iter().map(|v| v * v).sum::<f64>() / 400.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn window_is_channel_major() {
        let f = write_csv("date,a,b\n1,10,20\n2,11,21\n3,12,22\n");
        let ds = Dataset::load_csv(f.path(), None).unwrap();
        let w = ds.window(1, 2);
        assert_eq!(w.shape(), &[2, 2]);
        assert_eq!(w.row(0), &[11.0, 12.0]);
        assert_eq!(w.row(1), &[21.0, 22.0]);
    }

    #[test]
    fn sine_and_ramp_generators() {
        let sine = Dataset::synthetic_sine(2000, 48.0);
        assert_eq!(sine.n_rows(), 2000);
        assert_eq!(sine.n_channels(), 1);
        assert!((sine.values.at2(12, 0) - 1.0).abs() < 1e-12); // quarter period
        let ramp = Dataset::synthetic_ramp(10);
        assert_eq!(ramp.values.at2(7, 0), 7.0);
    }
}
