//! The three networks: mask prediction (MPN), quality unification (QUN) and
//! matting refinement (MRN), their initialisation, forward evaluation and
//! checkpoint format.

mod arch;
mod checkpoint;
mod graph;
mod kernels;
mod params;

pub use arch::param_count;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Graph, NodeId};
pub use params::{Param, ParamGrads, ParamId, ParamSet};

use ndarray::{s, Array2, Array3};

use self::arch::{Arch, Role};
use self::graph::{Eager, Ops};
use crate::error::{ensure_arg, ensure_shape, Result};
use crate::imagery::{Image, Mask, Rng};

/// Clamp applied to the input mask before taking its logit for the QUN skip.
pub const QUN_SKIP_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetKind {
    Mpn,
    Qun,
    Mrn,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [NetKind::Mpn, NetKind::Qun, NetKind::Mrn];

    pub fn id(self) -> u8 {
        match self {
            NetKind::Mpn => 0,
            NetKind::Qun => 1,
            NetKind::Mrn => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<NetKind> {
        NetKind::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Mpn => "mpn",
            NetKind::Qun => "qun",
            NetKind::Mrn => "mrn",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            NetKind::Mpn | NetKind::Mrn => 3,
            NetKind::Qun => 4,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            NetKind::Mpn => 2,
            NetKind::Qun => 1,
            NetKind::Mrn => 4,
        }
    }
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Width and depth of one network plus the shared resolution pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub base_width: usize,
    pub depth: usize,
    /// `(height, width)` the mask networks are trained at.
    pub low_res: (usize, usize),
    /// `(height, width)` the refinement network is trained at.
    pub high_res: (usize, usize),
    pub scale_gap: usize,
}

impl NetConfig {
    pub const SCALE_GAP: usize = 4;

    /// Full-size defaults: 192×160 / 768×640; MPN and MRN depth 4 width 32,
    /// QUN depth 3 width 16.
    pub fn for_kind(kind: NetKind) -> Self {
        let (base_width, depth) = match kind {
            NetKind::Mpn | NetKind::Mrn => (32, 4),
            NetKind::Qun => (16, 3),
        };
        NetConfig {
            base_width,
            depth,
            low_res: (192, 160),
            high_res: (768, 640),
            scale_gap: Self::SCALE_GAP,
        }
    }

    /// Small configuration for CPU experiments: width 8, depth 2.
    pub fn desk(low_res: (usize, usize)) -> Self {
        NetConfig {
            base_width: 8,
            depth: 2,
            low_res,
            high_res: (low_res.0 * Self::SCALE_GAP, low_res.1 * Self::SCALE_GAP),
            scale_gap: Self::SCALE_GAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.base_width >= 4, "base_width {} must be at least 4", self.base_width);
        ensure_arg!(self.depth >= 2, "depth {} must be at least 2", self.depth);
        ensure_arg!(self.scale_gap == Self::SCALE_GAP, "scale_gap must be {}", Self::SCALE_GAP);
        ensure_arg!(
            self.high_res == (self.low_res.0 * self.scale_gap, self.low_res.1 * self.scale_gap),
            "high_res {:?} must be {}x low_res {:?}",
            self.high_res,
            self.scale_gap,
            self.low_res
        );
        ensure_arg!(self.low_res.0 >= 1 && self.low_res.1 >= 1, "low_res must be positive");
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    fn check_size(&self, kind: NetKind, (h, w): (usize, usize)) -> Result<()> {
        let g = self.granularity();
        ensure_shape!(
            h >= g && w >= g && h % g == 0 && w % g == 0,
            "{kind} input {h}x{w} must be a positive multiple of {g}"
        );
        Ok(())
    }
}

/// Parameters of one network together with the config that shaped them.
#[derive(Debug, Clone)]
pub struct NetParams {
    kind: NetKind,
    config: NetConfig,
    params: ParamSet,
    arch: Arch,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.config == other.config && self.params == other.params
    }
}

/// Fan-in scaled normal kernels, zero biases, unit norm scales and a zero
/// output head, so every network starts at `sigmoid(0)` (QUN: at its skip).
pub fn init_params(config: &NetConfig, kind: NetKind, rng: &mut Rng) -> Result<NetParams> {
    config.validate()?;
    let (arch, params) = Arch::allocate(kind, config, |shape, role| match role {
        Role::Kernel => params::he_normal(shape, rng),
        Role::Scale => arch::zeros(shape).mapv(|_| 1.0),
        Role::Bias | Role::Shift | Role::HeadKernel => arch::zeros(shape),
    })?;
    Ok(NetParams {
        kind,
        config: *config,
        params,
        arch,
    })
}

impl NetParams {
    /// Wraps loaded arrays, checking names and shapes against the config.
    pub fn from_parts(kind: NetKind, config: NetConfig, params: ParamSet) -> Result<NetParams> {
        config.validate()?;
        let arch = Arch::bind(kind, &config, &params)?;
        Ok(NetParams {
            kind,
            config,
            params,
            arch,
        })
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access for optimisers; names and shapes must not change.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    fn expect_kind(&self, kind: NetKind) -> Result<()> {
        ensure_arg!(self.kind == kind, "expected {kind} parameters, got {}", self.kind);
        Ok(())
    }

    fn run<O: Ops>(&self, ops: &mut O, input: Array3<f64>, mask: Option<&Array2<f64>>) -> O::T {
        match self.kind {
            NetKind::Mpn => {
                let x = ops.input(input);
                let logits = self.arch.logits(ops, x, None);
                ops.sigmoid(&logits)
            }
            NetKind::Qun => {
                let mask = mask.expect("QUN needs a mask");
                let skip = mask.mapv(|m| {
                    let m = m.clamp(QUN_SKIP_EPS, 1.0 - QUN_SKIP_EPS);
                    (m / (1.0 - m)).ln()
                });
                let x = ops.input(input);
                let logits = self.arch.logits(ops, x, None);
                let skip = ops.input(skip.insert_axis(ndarray::Axis(0)));
                let sum = ops.add(&logits, &skip);
                ops.sigmoid(&sum)
            }
            NetKind::Mrn => {
                let mask = mask.expect("MRN needs a mask");
                let x = ops.input(input);
                let m = ops.input(mask.clone().insert_axis(ndarray::Axis(0)));
                let logits = self.arch.logits(ops, x, Some(m));
                ops.sigmoid(&logits)
            }
        }
    }

    fn check_inputs(&self, img: (usize, usize), mask: Option<(usize, usize)>) -> Result<()> {
        self.config.check_size(self.kind, img)?;
        match (self.kind, mask) {
            (NetKind::Mpn, _) => Ok(()),
            (NetKind::Qun, Some(m)) => {
                ensure_shape!(m == img, "QUN mask {m:?} must match image {img:?}");
                Ok(())
            }
            (NetKind::Mrn, Some(m)) => {
                let gap = self.config.scale_gap;
                ensure_shape!(
                    (m.0 * gap, m.1 * gap) == img,
                    "MRN mask {m:?} must be exactly 1/{gap} of image {img:?}"
                );
                Ok(())
            }
            (kind, None) => Err(crate::error::Error::InvalidArgument(format!("{kind} needs a mask input"))),
        }
    }

    /// Records a differentiable forward pass on channel-first input.
    /// QUN takes the image and mask stacked as four channels plus the mask
    /// separately for its skip; MRN takes the low-resolution mask.
    pub fn forward_graph(&self, input: Array3<f64>, mask: Option<&Array2<f64>>) -> Result<(Graph<'_>, NodeId)> {
        let (c, h, w) = input.dim();
        ensure_shape!(c == self.kind.in_channels(), "{} expects {} input channels, got {c}", self.kind, self.kind.in_channels());
        self.check_inputs((h, w), mask.map(|m| m.dim()))?;
        let mut g = Graph::new(&self.params);
        let out = self.run(&mut g, input, mask);
        Ok((g, out))
    }

    /// Tape-free forward pass on channel-first input; see [`NetParams::forward_graph`].
    pub fn forward(&self, input: Array3<f64>, mask: Option<&Array2<f64>>) -> Result<Array3<f64>> {
        let (c, h, w) = input.dim();
        ensure_shape!(c == self.kind.in_channels(), "{} expects {} input channels, got {c}", self.kind, self.kind.in_channels());
        self.check_inputs((h, w), mask.map(|m| m.dim()))?;
        let mut e = Eager::new(&self.params);
        let out = self.run(&mut e, input, mask);
        Ok(std::rc::Rc::try_unwrap(out).unwrap_or_else(|rc| (*rc).clone()))
    }
}

/// Stacks an image and a mask into a 4-channel QUN input.
pub fn qun_input(img: &Image, mask: &Mask) -> Result<Array3<f64>> {
    ensure_shape!(img.size() == mask.size(), "image {:?} and mask {:?} differ", img.size(), mask.size());
    let (h, w) = img.size();
    let mut x = Array3::zeros((4, h, w));
    x.slice_mut(s![..3, .., ..]).assign(&img.to_chw());
    x.slice_mut(s![3, .., ..]).assign(mask.data());
    Ok(x)
}

/// Foreground (channel 0) and background (channel 1) masks, `(2, H, W)`.
pub fn mpn_forward(p: &NetParams, img: &Image) -> Result<Array3<f64>> {
    p.expect_kind(NetKind::Mpn)?;
    p.forward(img.to_chw(), None)
}

/// Quality-unified mask at the input resolution.
pub fn qun_forward(p: &NetParams, img: &Image, mask: &Mask) -> Result<Mask> {
    p.expect_kind(NetKind::Qun)?;
    let out = p.forward(qun_input(img, mask)?, Some(mask.data()))?;
    Mask::from_clamped(out.index_axis_move(ndarray::Axis(0), 0))
}

/// Foreground RGB (channels 0–2) and alpha (channel 3), `(4, H, W)`.
/// `mask` must be exactly a quarter of the image size per axis.
pub fn mrn_forward(p: &NetParams, img: &Image, mask: &Mask) -> Result<Array3<f64>> {
    p.expect_kind(NetKind::Mrn)?;
    p.forward(img.to_chw(), Some(mask.data()))
}
