//! State-space recurrence: zero-order-hold discretization and the selective
//! scan, in plain value form.
//!
//! These are the reference implementations used by oracle tests and the
//! blocked variant; the training path records the same arithmetic through the
//! tape ops in `autodiff`. Layouts match the tape: per-step matrices are
//! S x (d_inner * d_state) with the state index fastest.

use crate::autodiff::phi_val;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscretizeMode {
    /// Exact zero-order hold: B_bar = (dt A)^-1 (exp(dt A) - I) dt B.
    #[default]
    Zoh,
    /// First-order simplification: B_bar = dt B.
    Euler,
}

/// Discrete-time transition and input maps, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    /// S x (d_inner * d_state); every entry in (0, 1) for A < 0, dt > 0.
    pub a_bar: Tensor,
    /// S x (d_inner * d_state).
    pub b_bar: Tensor,
}

/// Discretize a diagonal continuous-time system.
///
/// `a` is d_inner x d_state with strictly negative entries; `b` is S x d_state
/// (shared across inner channels per step); `delta` is S x d_inner, strictly
/// positive. A_bar = exp(dt a); B_bar under ZOH uses (e^z - 1)/z with the
/// limit branch below |z| = 1e-8 returning dt b exactly.
pub fn discretize(a: &Tensor, b: &Tensor, delta: &Tensor, mode: DiscretizeMode) -> Result<DiscreteSsm> {
    if a.rank() != 2 || delta.rank() != 2 || delta.cols() != a.rows() {
        return Err(Error::ShapeMismatch {
            op: "discretize",
            left: delta.shape().to_vec(),
            right: a.shape().to_vec(),
        });
    }
    if b.rank() != 2 || b.rows() != delta.rows() || b.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "discretize",
            left: b.shape().to_vec(),
            right: vec![delta.rows(), a.cols()],
        });
    }
    if let Some(bad) = a.data().iter().find(|&&v| v >= 0.0) {
        return Err(Error::Parameter(format!(
            "state matrix entries must be strictly negative, found {bad}"
        )));
    }
    if let Some(bad) = delta.data().iter().find(|&&v| v <= 0.0) {
        return Err(Error::Parameter(format!("step sizes must be strictly positive, found {bad}")));
    }
    let (steps, di, ds) = (delta.rows(), delta.cols(), a.cols());
    let mut a_bar = vec![0.0; steps * di * ds];
    let mut b_bar = vec![0.0; steps * di * ds];
    for t in 0..steps {
        let brow = b.row(t);
        for c in 0..di {
            let dt = delta.at2(t, c);
            let arow = a.row(c);
            let base = (t * di + c) * ds;
            for s in 0..ds {
                let z = dt * arow[s];
                a_bar[base + s] = z.exp();
                b_bar[base + s] = match mode {
                    DiscretizeMode::Zoh => phi_val(z) * dt * brow[s],
                    DiscretizeMode::Euler => dt * brow[s],
                };
            }
        }
    }
    Ok(DiscreteSsm {
        a_bar: Tensor::from_parts(vec![steps, di * ds], a_bar),
        b_bar: Tensor::from_parts(vec![steps, di * ds], b_bar),
    })
}

/// Input-dependent step/input/output parameters: dt = softplus(x W_dt + b_dt),
/// B = x W_b, C = x W_c, each per time step.
pub fn selective_params(
    x: &Tensor,
    w_dt: &Tensor,
    b_dt: &Tensor,
    w_b: &Tensor,
    w_c: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let pre = x.matmul(w_dt)?;
    let cols = pre.cols();
    if b_dt.numel() != cols {
        return Err(Error::ShapeMismatch {
            op: "selective_params",
            left: pre.shape().to_vec(),
            right: b_dt.shape().to_vec(),
        });
    }
    let delta = Tensor::from_parts(
        pre.shape().to_vec(),
        pre.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| crate::autodiff::softplus_val(v + b_dt.data()[i % cols]))
            .collect(),
    );
    Ok((delta, x.matmul(w_b)?, x.matmul(w_c)?))
}

fn check_scan_shapes(d: &DiscreteSsm, c: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    let (steps, di) = (x.rows(), x.cols());
    let ds = c.cols();
    if d.a_bar.shape() != [steps, di * ds]
        || d.b_bar.shape() != [steps, di * ds]
        || c.rows() != steps
    {
        return Err(Error::ShapeMismatch {
            op: "ssm_scan",
            left: d.a_bar.shape().to_vec(),
            right: vec![steps, di * ds],
        });
    }
    Ok((steps, di, ds))
}

/// Sequential scan: h_t = A_bar_t . h_{t-1} + B_bar_t x_t, y_t = C_t . h_t.
pub fn ssm_scan(d: &DiscreteSsm, c: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (steps, di, ds) = check_scan_shapes(d, c, x)?;
    let mut h = vec![0.0; di * ds];
    let mut y = vec![0.0; steps * di];
    for t in 0..steps {
        let ar = &d.a_bar.data()[t * di * ds..(t + 1) * di * ds];
        let br = &d.b_bar.data()[t * di * ds..(t + 1) * di * ds];
        let cr = c.row(t);
        for ci in 0..di {
            let xv = x.at2(t, ci);
            let hrow = &mut h[ci * ds..(ci + 1) * ds];
            let arow = &ar[ci * ds..(ci + 1) * ds];
            let brow = &br[ci * ds..(ci + 1) * ds];
            let mut acc = 0.0;
            for s in 0..ds {
                hrow[s] = arow[s] * hrow[s] + brow[s] * xv;
                acc += cr[s] * hrow[s];
            }
            y[t * di + ci] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![steps, di], y))
}

/// Block-decomposed scan. Each block carries a (cumulative A_bar product,
/// partial state) pair; crossing a block boundary folds the pair into the
/// carried state as h = P . h_carry + s. Algebraically identical to
/// [`ssm_scan`], and bitwise identical at block = 1.
pub fn ssm_scan_blocked(d: &DiscreteSsm, c: &Tensor, x: &Tensor, block: usize) -> Result<Tensor> {
    if block == 0 {
        return Err(Error::Config("scan block extent must be positive".into()));
    }
    let (steps, di, ds) = check_scan_shapes(d, c, x)?;
    let nel = di * ds;
    let mut h_carry = vec![0.0; nel];
    let mut p = vec![0.0; nel];
    let mut s_part = vec![0.0; nel];
    let mut h_t = vec![0.0; nel];
    let mut y = vec![0.0; steps * di];
    let mut start = 0;
    while start < steps {
        let end = usize::min(start + block, steps);
        p.fill(1.0);
        s_part.fill(0.0);
        for t in start..end {
            let ar = &d.a_bar.data()[t * nel..(t + 1) * nel];
            let br = &d.b_bar.data()[t * nel..(t + 1) * nel];
            let cr = c.row(t);
            for ci in 0..di {
                let xv = x.at2(t, ci);
                let rng = ci * ds..(ci + 1) * ds;
                let prow = &mut p[rng.clone()];
                let srow = &mut s_part[rng.clone()];
                let hrow = &mut h_t[rng.clone()];
                let hcar = &h_carry[rng.clone()];
                let arow = &ar[rng.clone()];
                let brow = &br[rng];
                let mut acc = 0.0;
                for s in 0..ds {
                    prow[s] *= arow[s];
                    srow[s] = arow[s] * srow[s] + brow[s] * xv;
                    hrow[s] = prow[s] * hcar[s] + srow[s];
                    acc += cr[s] * hrow[s];
                }
                y[t * di + ci] = acc;
            }
        }
        h_carry.copy_from_slice(&h_t);
        start = end;
    }
    Ok(Tensor::from_parts(vec![steps, di], y))
}

/// Repeat a single-row tensor S times; turns shared (static) per-model
/// parameters into the per-step layout the scans expect.
pub fn tile_rows(row: &Tensor, steps: usize) -> Tensor {
    debug_assert_eq!(row.rank(), 2);
    debug_assert_eq!(row.rows(), 1);
    let c = row.cols();
    Tensor::from_fn(vec![steps, c], |i| row.data()[i % c])
}
