//! The gated two-branch selective-state block.
//!
//! Branch one: linear in-projection, depthwise causal convolution, SiLU, then
//! the selective scan with input-dependent step/input/output maps. Branch two:
//! the same in-projection's other half through SiLU as a multiplicative gate.
//! A linear out-projection closes the block. Token width is preserved.

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::ssm::DiscretizeMode;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MambaConfig {
    /// Token width of the block's input and output.
    pub d_model: usize,
    /// Inner-width multiplier; d_inner = expand * d_model.
    pub expand: usize,
    /// State expansion factor, capped at 16.
    pub d_state: usize,
    /// Causal kernel width.
    pub conv_width: usize,
    /// Include the d_skip * u residual term inside the scan output.
    pub use_d_skip: bool,
    /// Bias on the out-projection.
    pub out_bias: bool,
    pub discretize: DiscretizeMode,
}

impl MambaConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            expand: 2,
            d_state: 16,
            conv_width: 4,
            use_d_skip: true,
            out_bias: true,
            discretize: DiscretizeMode::Zoh,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.expand == 0 || self.conv_width == 0 {
            return Err(Error::Config(format!(
                "block extents must be positive: d_model={}, expand={}, conv_width={}",
                self.d_model, self.expand, self.conv_width
            )));
        }
        if !(1..=16).contains(&self.d_state) {
            return Err(Error::Config(format!(
                "d_state must lie in [1, 16], got {}",
                self.d_state
            )));
        }
        Ok(())
    }

    /// Scalar parameter count implied by the config.
    pub fn param_count(&self) -> usize {
        let (dm, di, ds, w) = (self.d_model, self.d_inner(), self.d_state, self.conv_width);
        let mut total = dm * 2 * di; // in-projection
        total += di * w + di; // conv kernel + bias
        total += di * di + di; // step-size projection + bias
        total += 2 * di * ds; // input/output projections
        total += di * ds; // state matrix log-magnitudes
        if self.use_d_skip {
            total += di;
        }
        total += di * dm; // out-projection
        if self.out_bias {
            total += dm;
        }
        total
    }
}

/// Store ids for one block's parameters.
#[derive(Debug, Clone)]
pub struct MambaParamIds {
    pub w_in: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w_dt: ParamId,
    pub b_dt: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub a_log: ParamId,
    pub d_skip: Option<ParamId>,
    pub w_out: ParamId,
    pub b_out: Option<ParamId>,
}

pub(crate) fn uniform(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// softplus^-1(y) = y + ln(1 - e^-y); maps a target step size back to the
/// pre-activation bias.
fn softplus_inverse(y: f64) -> f64 {
    y + (-((-y).exp())).ln_1p()
}

/// Initialize one block's parameters into the store under `prefix`.
///
/// Projections draw uniform with 1/sqrt(fan_in) bounds; conv and output biases
/// start at zero; the skip scale starts at one. The state matrix is
/// log-parameterized so -exp(a_log) runs -1, -2, .. -d_state along the state
/// axis. The step-size bias is sampled so the initial softplus output lies in
/// [1e-3, 1e-1].
pub fn init_mamba(cfg: &MambaConfig, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<MambaParamIds> {
    cfg.validate()?;
    let (dm, di, ds, w) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.conv_width);
    let k_in = 1.0 / (dm as f64).sqrt();
    let k_conv = 1.0 / (w as f64).sqrt();
    let k_inner = 1.0 / (di as f64).sqrt();

    let w_in = store.register(format!("{prefix}.w_in"), uniform(vec![dm, 2 * di], k_in, rng));
    let conv_w = store.register(format!("{prefix}.conv_w"), uniform(vec![di, w], k_conv, rng));
    let conv_b = store.register(format!("{prefix}.conv_b"), Tensor::zeros(vec![di]));
    let w_dt = store.register(format!("{prefix}.w_dt"), uniform(vec![di, di], k_inner, rng));
    let b_dt = store.register(
        format!("{prefix}.b_dt"),
        Tensor::from_fn(vec![di], |_| {
            let log_lo = (1e-3f64).ln();
            let log_hi = (1e-1f64).ln();
            softplus_inverse(rng.gen_range(log_lo..log_hi).exp())
        }),
    );
    let w_b = store.register(format!("{prefix}.w_b"), uniform(vec![di, ds], k_inner, rng));
    let w_c = store.register(format!("{prefix}.w_c"), uniform(vec![di, ds], k_inner, rng));
    let a_log = store.register(
        format!("{prefix}.a_log"),
        Tensor::from_fn(vec![di, ds], |i| (((i % ds) + 1) as f64).ln()),
    );
    let d_skip = cfg
        .use_d_skip
        .then(|| store.register(format!("{prefix}.d_skip"), Tensor::full(vec![di], 1.0)));
    let w_out = store.register(format!("{prefix}.w_out"), uniform(vec![di, dm], k_inner, rng));
    let b_out = cfg
        .out_bias
        .then(|| store.register(format!("{prefix}.b_out"), Tensor::zeros(vec![dm])));

    Ok(MambaParamIds { w_in, conv_w, conv_b, w_dt, b_dt, w_b, w_c, a_log, d_skip, w_out, b_out })
}

/// Forward pass on the tape. `x` is S x d_model; `leaves` maps store ids to
/// tape leaves (see [`ParamStore::leaves_on`]).
pub fn mamba_forward(
    tape: &mut Tape,
    cfg: &MambaConfig,
    ids: &MambaParamIds,
    leaves: &[VarId],
    x: VarId,
) -> Result<VarId> {
    let di = cfg.d_inner();
    if tape.value(x).rank() != 2 || tape.value(x).cols() != cfg.d_model {
        return Err(Error::ShapeMismatch {
            op: "mamba_forward",
            left: tape.value(x).shape().to_vec(),
            right: vec![tape.value(x).rows(), cfg.d_model],
        });
    }

    let xz = tape.matmul(x, leaves[ids.w_in])?;
    let u = tape.slice_cols(xz, 0, di)?;
    let z = tape.slice_cols(xz, di, di)?;

    // conv operates channels-as-rows; the block keeps time-major layout
    let ut = tape.transpose(u);
    let uc = tape.causal_conv1d(ut, leaves[ids.conv_w], leaves[ids.conv_b])?;
    let uct = tape.transpose(uc);
    let ua = tape.silu(uct);

    // input-dependent step size, input map, output map
    let dt_pre = tape.matmul(ua, leaves[ids.w_dt])?;
    let dt_biased = tape.add_bias(dt_pre, leaves[ids.b_dt])?;
    let delta = tape.softplus(dt_biased);
    let b_mat = tape.matmul(ua, leaves[ids.w_b])?;
    let c_mat = tape.matmul(ua, leaves[ids.w_c])?;

    // A = -exp(a_log) keeps the continuous-time system strictly stable
    let a_pos = tape.exp(leaves[ids.a_log]);
    let a_neg = tape.scale(a_pos, -1.0);

    let za = tape.delta_outer_a(delta, a_neg)?;
    let a_bar = tape.exp(za);
    let db = tape.delta_outer_b(delta, b_mat)?;
    let b_bar = match cfg.discretize {
        DiscretizeMode::Zoh => {
            let hold = tape.phi(za);
            tape.mul(hold, db)?
        }
        DiscretizeMode::Euler => db,
    };

    let mut y = tape.ssm_scan(a_bar, b_bar, c_mat, ua)?;
    if let Some(d_id) = ids.d_skip {
        let skip = tape.mul_cols(ua, leaves[d_id])?;
        y = tape.add(y, skip)?;
    }

    let gate = tape.silu(z);
    let gated = tape.mul(y, gate)?;
    let mut out = tape.matmul(gated, leaves[ids.w_out])?;
    if let Some(b_id) = ids.b_out {
        out = tape.add_bias(out, leaves[b_id])?;
    }
    Ok(out)
}
