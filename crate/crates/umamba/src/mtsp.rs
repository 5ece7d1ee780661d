//! Temporal signal processor: residual reconstruction layers, the
//! channel-adaptable path, and their three-way sum with the skip input.
//!
//! Residual layers fit what the previous reconstruction missed: with r_0 = X,
//! layer k produces rml[k] = Block_k(r_{k-1}) and leaves the residual
//! r_k = rml[k] - r_{k-1}; the final reconstruction rml[K] is the path output.
//! The channel-adaptable path reshapes X per the channel mode, runs one block,
//! and restores the layout. Output = rml[K] + cam + skip, shape-preserving.

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::mamba::{init_mamba, mamba_forward, MambaConfig, MambaParamIds};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// Each variable is its own width-1 sequence; the block sees N separate
    /// scans over the feature axis.
    Independence,
    /// Variables are tokens: one length-N sequence of width-M tokens.
    Parallel,
    /// Feature positions are tokens: one length-M sequence of width-N tokens,
    /// i.e. the transpose.
    #[default]
    Integration,
}

impl ChannelMode {
    /// Token width the channel-adaptable block must be built with.
    pub fn token_width(&self, n_channels: usize, m: usize) -> usize {
        match self {
            ChannelMode::Independence => 1,
            ChannelMode::Parallel => m,
            ChannelMode::Integration => n_channels,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "independence" => Ok(ChannelMode::Independence),
            "parallel" => Ok(ChannelMode::Parallel),
            "integration" => Ok(ChannelMode::Integration),
            other => Err(Error::Config(format!(
                "unknown channel mode '{other}' (expected independence | parallel | integration)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelMode::Independence => "independence",
            ChannelMode::Parallel => "parallel",
            ChannelMode::Integration => "integration",
        }
    }
}

/// Reshape an N x M tensor for the chosen channel regime (value level).
/// Independence and parallel keep the data layout; integration transposes so
/// rows become per-position tokens of width N.
pub fn channel_transform(x: &Tensor, mode: ChannelMode) -> Tensor {
    match mode {
        ChannelMode::Independence | ChannelMode::Parallel => x.clone(),
        ChannelMode::Integration => x.transpose(),
    }
}

/// Inverse of [`channel_transform`]; exact.
pub fn channel_transform_inverse(t: &Tensor, mode: ChannelMode) -> Tensor {
    match mode {
        ChannelMode::Independence | ChannelMode::Parallel => t.clone(),
        ChannelMode::Integration => t.transpose(),
    }
}

/// One sequence-to-sequence block application on the tape. Implemented by the
/// real gated block and, in tests, by zero/identity stubs so the surrounding
/// recursion can be traced by hand.
pub trait BlockApply {
    fn apply(&self, tape: &mut Tape, x: VarId) -> Result<VarId>;
}

/// The real block, borrowing its parameters from leaf ids.
pub struct MambaApply<'a> {
    pub cfg: &'a MambaConfig,
    pub ids: &'a MambaParamIds,
    pub leaves: &'a [VarId],
}

impl BlockApply for MambaApply<'_> {
    fn apply(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
        mamba_forward(tape, self.cfg, self.ids, self.leaves, x)
    }
}

/// Run a width-1 block over every channel of an N x M tensor: each row
/// becomes an M x 1 sequence, outputs are reassembled in channel order.
fn apply_per_channel(tape: &mut Tape, block: &dyn BlockApply, x: VarId) -> Result<VarId> {
    let n = tape.value(x).rows();
    let xt = tape.transpose(x); // M x N
    let mut outs = Vec::with_capacity(n);
    for c in 0..n {
        let seq = tape.slice_cols(xt, c, 1)?; // M x 1
        outs.push(block.apply(tape, seq)?);
    }
    let cat = tape.concat_cols(&outs)?; // M x N
    Ok(tape.transpose(cat))
}

/// K residual reconstruction layers over the feature axis, channels as batch
/// items. Returns (rml[K], r_K): the final reconstruction and the final
/// residual.
pub fn residual_mamba_layers(
    tape: &mut Tape,
    x: VarId,
    blocks: &[&dyn BlockApply],
) -> Result<(VarId, VarId)> {
    if blocks.is_empty() {
        return Err(Error::Config("residual layer count K must be at least 1".into()));
    }
    let mut residual = x;
    let mut reconstruction = x;
    for block in blocks {
        reconstruction = apply_per_channel(tape, *block, residual)?;
        residual = tape.sub(reconstruction, residual)?;
    }
    Ok((reconstruction, residual))
}

/// The channel-adaptable path: transform, one block, inverse transform.
pub fn channel_adaptable(
    tape: &mut Tape,
    x: VarId,
    mode: ChannelMode,
    block: &dyn BlockApply,
) -> Result<VarId> {
    match mode {
        ChannelMode::Independence => apply_per_channel(tape, block, x),
        ChannelMode::Parallel => block.apply(tape, x),
        ChannelMode::Integration => {
            let xt = tape.transpose(x);
            let y = block.apply(tape, xt)?;
            Ok(tape.transpose(y))
        }
    }
}

/// Which tensor the third path adds: the block's original input (the prose
/// reading) or the final residual left by the reconstruction loop (the
/// literal formula reading).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkipPath {
    #[default]
    Input,
    Residual,
}

impl SkipPath {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(SkipPath::Input),
            "residual" => Ok(SkipPath::Residual),
            other => Err(Error::Config(format!(
                "unknown skip path '{other}' (expected input | residual)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SkipPath::Input => "input",
            SkipPath::Residual => "residual",
        }
    }
}

/// Full processor: rml[K] + cam + skip. Either path can be disabled, in which
/// case its term is simply absent from the sum; with both disabled the output
/// is the skip input itself.
#[allow(clippy::too_many_arguments)]
pub fn mtsp_forward(
    tape: &mut Tape,
    x: VarId,
    rml_blocks: &[&dyn BlockApply],
    cam_block: Option<&dyn BlockApply>,
    mode: ChannelMode,
    skip_path: SkipPath,
) -> Result<VarId> {
    let rml = if rml_blocks.is_empty() {
        None
    } else {
        Some(residual_mamba_layers(tape, x, rml_blocks)?)
    };
    let cam = match cam_block {
        Some(block) => Some(channel_adaptable(tape, x, mode, block)?),
        None => None,
    };
    let skip = match (skip_path, &rml) {
        (SkipPath::Residual, Some((_, residual))) => *residual,
        _ => x,
    };
    let mut acc = match rml {
        Some((reconstruction, _)) => tape.add(reconstruction, skip)?,
        None => skip,
    };
    if let Some(cam_out) = cam {
        acc = tape.add(acc, cam_out)?;
    }
    Ok(acc)
}

/// Parameters for one processor instance: K reconstruction blocks (token
/// width 1) plus one channel-adaptable block whose width follows the mode.
#[derive(Debug, Clone)]
pub struct MtspParamIds {
    pub rml: Vec<MambaParamIds>,
    pub cam: Option<MambaParamIds>,
}

/// Configuration for instantiating a processor at one scale.
#[derive(Debug, Clone, Copy)]
pub struct MtspConfig {
    pub k: usize,
    pub mode: ChannelMode,
    pub use_rml: bool,
    pub use_cam: bool,
    pub share_rml: bool,
    pub skip_path: SkipPath,
}

pub fn init_mtsp(
    cfg: &MtspConfig,
    rml_block: &MambaConfig,
    cam_block: &MambaConfig,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<MtspParamIds> {
    let mut rml = Vec::new();
    if cfg.use_rml {
        if cfg.k < 1 {
            return Err(Error::Config("residual layer count K must be at least 1".into()));
        }
        let distinct = if cfg.share_rml { 1 } else { cfg.k };
        for k in 0..distinct {
            rml.push(init_mamba(rml_block, store, &format!("{prefix}.rml{k}"), rng)?);
        }
    }
    let cam = if cfg.use_cam {
        Some(init_mamba(cam_block, store, &format!("{prefix}.cam"), rng)?)
    } else {
        None
    };
    Ok(MtspParamIds { rml, cam })
}

/// Forward through an initialized processor.
#[allow(clippy::too_many_arguments)]
pub fn mtsp_apply(
    tape: &mut Tape,
    cfg: &MtspConfig,
    rml_block: &MambaConfig,
    cam_block: &MambaConfig,
    ids: &MtspParamIds,
    leaves: &[VarId],
    x: VarId,
) -> Result<VarId> {
    let rml_appliers: Vec<MambaApply> = (0..if cfg.use_rml { cfg.k } else { 0 })
        .map(|k| MambaApply {
            cfg: rml_block,
            ids: if cfg.share_rml { &ids.rml[0] } else { &ids.rml[k] },
            leaves,
        })
        .collect();
    let rml_dyn: Vec<&dyn BlockApply> = rml_appliers.iter().map(|a| a as &dyn BlockApply).collect();
    let cam_applier = ids.cam.as_ref().map(|cam_ids| MambaApply { cfg: cam_block, ids: cam_ids, leaves });
    mtsp_forward(
        tape,
        x,
        &rml_dyn,
        cam_applier.as_ref().map(|a| a as &dyn BlockApply),
        cfg.mode,
        cfg.skip_path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, STREAM_INIT};

    struct ZeroBlock;
    impl BlockApply for ZeroBlock {
        fn apply(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
            let shape = tape.value(x).shape().to_vec();
            Ok(tape.constant(Tensor::zeros(shape)))
        }
    }

    struct IdentityBlock;
    impl BlockApply for IdentityBlock {
        fn apply(&self, _tape: &mut Tape, x: VarId) -> Result<VarId> {
            Ok(x)
        }
    }

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = SeedStreams::new(seed).stream(STREAM_INIT);
        Tensor::from_fn(shape, |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
    }

    #[test]
    fn zero_stub_reconstructions_are_zero() {
        // every layer outputs zero, so rml[3] = 0 regardless of X
        let x = rand_tensor(vec![3, 5], 1);
        let mut tape = Tape::new();
        let xi = tape.constant(x);
        let blocks: Vec<&dyn BlockApply> = vec![&ZeroBlock, &ZeroBlock, &ZeroBlock];
        let (rml, _) = residual_mamba_layers(&mut tape, xi, &blocks).unwrap();
        assert!(tape.value(rml).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_stub_k1_returns_input() {
        let x = rand_tensor(vec![2, 4], 2);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let blocks: Vec<&dyn BlockApply> = vec![&IdentityBlock];
        let (rml, _) = residual_mamba_layers(&mut tape, xi, &blocks).unwrap();
        assert_eq!(tape.value(rml), &x);
    }

    #[test]
    fn identity_stub_k2_collapses_to_zero() {
        // r_1 = X - X = 0, so rml[2] = identity(0) = 0
        let x = rand_tensor(vec![2, 4], 3);
        let mut tape = Tape::new();
        let xi = tape.constant(x);
        let blocks: Vec<&dyn BlockApply> = vec![&IdentityBlock, &IdentityBlock];
        let (rml, _) = residual_mamba_layers(&mut tape, xi, &blocks).unwrap();
        assert!(tape.value(rml).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_layers_require_at_least_one_block() {
        let mut tape = Tape::new();
        let xi = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(residual_mamba_layers(&mut tape, xi, &[]).is_err());
    }

    #[test]
    fn telescoping_residual_identity() {
        // r_K replayed from the recorded reconstructions must match the
        // recursion: r_k = rml[k] - r_{k-1}
        let cfg = MambaConfig { d_state: 3, ..MambaConfig::new(1) };
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(8).stream(STREAM_INIT);
        let ids: Vec<_> = (0..3)
            .map(|k| init_mamba(&cfg, &mut store, &format!("b{k}"), &mut rng).unwrap())
            .collect();
        let x = rand_tensor(vec![2, 6], 9);

        let mut tape = Tape::new_no_grad();
        let leaves = store.leaves_on(&mut tape);
        let xi = tape.constant(x.clone());
        // replay layer by layer, tracking values
        let mut residual_val = x.clone();
        let mut reconstructions = Vec::new();
        for id in &ids {
            let ri = tape.constant(residual_val.clone());
            let appl = MambaApply { cfg: &cfg, ids: id, leaves: &leaves };
            let out = apply_per_channel(&mut tape, &appl, ri).unwrap();
            let out_val = tape.value(out).clone();
            residual_val = out_val.sub(&residual_val).unwrap();
            reconstructions.push(out_val);
        }
        // the combined helper must agree with the replay
        let appliers: Vec<MambaApply> = ids.iter().map(|id| MambaApply { cfg: &cfg, ids: id, leaves: &leaves }).collect();
        let dyns: Vec<&dyn BlockApply> = appliers.iter().map(|a| a as &dyn BlockApply).collect();
        let (rml, res) = residual_mamba_layers(&mut tape, xi, &dyns).unwrap();
        assert!(tape.value(rml).max_abs_diff(reconstructions.last().unwrap()) < 1e-12);
        assert!(tape.value(res).max_abs_diff(&residual_val) < 1e-12);
    }

    #[test]
    fn channel_transform_extents() {
        let x = rand_tensor(vec![7, 96], 4);
        let par = channel_transform(&x, ChannelMode::Parallel);
        assert_eq!(par.shape(), &[7, 96]); // 7 tokens of width 96
        let int = channel_transform(&x, ChannelMode::Integration);
        assert_eq!(int.shape(), &[96, 7]); // 96 tokens of width 7
        assert_eq!(ChannelMode::Independence.token_width(7, 96), 1);
        assert_eq!(ChannelMode::Parallel.token_width(7, 96), 96);
        assert_eq!(ChannelMode::Integration.token_width(7, 96), 7);
    }

    #[test]
    fn channel_transform_round_trip_exact() {
        for mode in [ChannelMode::Independence, ChannelMode::Parallel, ChannelMode::Integration] {
            let x = rand_tensor(vec![5, 9], 5);
            let back = channel_transform_inverse(&channel_transform(&x, mode), mode);
            assert_eq!(back, x);
        }
    }

    #[test]
    fn cam_identity_stub_round_trips_every_mode() {
        for mode in [ChannelMode::Independence, ChannelMode::Parallel, ChannelMode::Integration] {
            let x = rand_tensor(vec![4, 6], 6);
            let mut tape = Tape::new();
            let xi = tape.constant(x.clone());
            let y = channel_adaptable(&mut tape, xi, mode, &IdentityBlock).unwrap();
            assert_eq!(tape.value(y), &x, "mode {mode:?}");
        }
    }

    #[test]
    fn cam_zero_stub_gives_zero() {
        for mode in [ChannelMode::Independence, ChannelMode::Parallel, ChannelMode::Integration] {
            let x = rand_tensor(vec![4, 6], 7);
            let mut tape = Tape::new();
            let xi = tape.constant(x);
            let y = channel_adaptable(&mut tape, xi, mode, &ZeroBlock).unwrap();
            assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cam_real_block_parallel_preserves_wide_shape() {
        // 21 channels at scale width 128 under the parallel regime
        let cfg = MambaConfig { d_state: 4, ..MambaConfig::new(128) };
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(10).stream(STREAM_INIT);
        let ids = init_mamba(&cfg, &mut store, "cam", &mut rng).unwrap();
        let x = rand_tensor(vec![21, 128], 11);
        let mut tape = Tape::new_no_grad();
        let leaves = store.leaves_on(&mut tape);
        let xi = tape.constant(x);
        let appl = MambaApply { cfg: &cfg, ids: &ids, leaves: &leaves };
        let y = channel_adaptable(&mut tape, xi, ChannelMode::Parallel, &appl).unwrap();
        assert_eq!(tape.value(y).shape(), &[21, 128]);
    }

    #[test]
    fn mtsp_zero_stubs_leave_skip_only() {
        let x = rand_tensor(vec![3, 8], 12);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let blocks: Vec<&dyn BlockApply> = vec![&ZeroBlock, &ZeroBlock];
        let y = mtsp_forward(&mut tape, xi, &blocks, Some(&ZeroBlock), ChannelMode::Integration, SkipPath::Input).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn mtsp_identity_stubs_triple_the_input() {
        // rml[1] = X, cam = X, skip = X
        let x = rand_tensor(vec![3, 8], 13);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let blocks: Vec<&dyn BlockApply> = vec![&IdentityBlock];
        let y = mtsp_forward(&mut tape, xi, &blocks, Some(&IdentityBlock), ChannelMode::Parallel, SkipPath::Input).unwrap();
        assert_eq!(tape.value(y), &x.scale(3.0));
    }

    #[test]
    fn mtsp_shape_preserved_across_extent_sweep() {
        for &n in &[1usize, 7, 21] {
            for &m in &[8usize, 64] {
                let x = rand_tensor(vec![n, m], (n * m) as u64);
                let mut tape = Tape::new();
                let xi = tape.constant(x);
                let blocks: Vec<&dyn BlockApply> = vec![&IdentityBlock];
                let y = mtsp_forward(&mut tape, xi, &blocks, Some(&IdentityBlock), ChannelMode::Integration, SkipPath::Input).unwrap();
                assert_eq!(tape.value(y).shape(), &[n, m]);
            }
        }
    }

    #[test]
    fn mtsp_zero_parameters_is_exact_identity() {
        // real blocks with zeroed parameters contribute exactly zero
        let rml_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(1) };
        let cam_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(4) };
        let cfg = MtspConfig {
            k: 2,
            mode: ChannelMode::Integration,
            use_rml: true,
            use_cam: true,
            share_rml: false,
            skip_path: SkipPath::Input,
        };
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(14).stream(STREAM_INIT);
        let ids = init_mtsp(&cfg, &rml_cfg, &cam_cfg, &mut store, "p", &mut rng).unwrap();
        for i in 0..store.len() {
            let t = store.get_mut(i);
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let x = rand_tensor(vec![4, 6], 15);
        let mut tape = Tape::new_no_grad();
        let leaves = store.leaves_on(&mut tape);
        let xi = tape.constant(x.clone());
        let y = mtsp_apply(&mut tape, &cfg, &rml_cfg, &cam_cfg, &ids, &leaves, xi).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn mtsp_gradients_match_finite_differences() {
        // N=2, M=8, K=2 through real blocks. The graph is deep enough that
        // per-element differences drown in roundoff on near-zero derivatives,
        // so the check is directional: d/deps f(x + eps v) against <grad, v>
        // for random unit v.
        let rml_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(1) };
        let cam_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(2) };
        let cfg = MtspConfig {
            k: 2,
            mode: ChannelMode::Integration,
            use_rml: true,
            use_cam: true,
            share_rml: false,
            skip_path: SkipPath::Input,
        };
        let mut worst = 0.0f64;
        for seed in 16..20u64 {
            let mut store = ParamStore::new();
            let mut rng = SeedStreams::new(seed).stream(STREAM_INIT);
            let ids = init_mtsp(&cfg, &rml_cfg, &cam_cfg, &mut store, "p", &mut rng).unwrap();
            let n_params = store.len();
            let mut inputs: Vec<Tensor> = (0..n_params).map(|i| store.get(i).clone()).collect();
            inputs.push(rand_tensor(vec![2, 8], seed + 1000));
            let err = crate::autodiff::grad_check_directional(
                |tape, ids_in| {
                    let leaves = &ids_in[..n_params];
                    let x = ids_in[n_params];
                    let y = mtsp_apply(tape, &cfg, &rml_cfg, &cam_cfg, &ids, leaves, x)?;
                    let sq = tape.mul(y, y)?;
                    Ok(tape.sum(sq))
                },
                &inputs,
                1e-5,
                4,
                &mut rng,
            )
            .unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-6, "relative error {worst}");
    }

    #[test]
    fn shared_rml_weights_register_once() {
        let rml_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(1) };
        let cam_cfg = MambaConfig { d_state: 2, ..MambaConfig::new(3) };
        let shared = MtspConfig {
            k: 3,
            mode: ChannelMode::Integration,
            use_rml: true,
            use_cam: false,
            share_rml: true,
            skip_path: SkipPath::Input,
        };
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(18).stream(STREAM_INIT);
        let ids = init_mtsp(&shared, &rml_cfg, &cam_cfg, &mut store, "p", &mut rng).unwrap();
        assert_eq!(ids.rml.len(), 1);
        assert_eq!(store.total_scalars(), rml_cfg.param_count());
    }
}
