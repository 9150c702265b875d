//! U-shaped encoder–decoder shared by the three networks.
//!
//! Level 0 runs at input resolution; each further level halves the size
//! with a stride-2 convolution. Decoder levels upsample (nearest), concatenate
//! the encoder skip of the same scale and apply two conv blocks. A 3×3 head
//! produces logits.

use ndarray::{ArrayD, IxDyn};

use super::graph::Ops;
use super::kernels::ConvGeom;
use super::params::{ParamId, ParamSet};
use super::{NetConfig, NetKind};
use crate::error::{Error, Result};

/// Scale level at which the refinement network's image features meet the
/// external low-resolution mask (1/4 of the input).
pub(crate) const MRN_INJECT_LEVEL: usize = 2;

const CONV3: ConvGeom = ConvGeom { k: 3, stride: 1, pad: 1 };
const DOWN3: ConvGeom = ConvGeom { k: 3, stride: 2, pad: 1 };
const HEAD: ConvGeom = ConvGeom { k: 3, stride: 1, pad: 1 };

pub(crate) fn level_width(base: usize, level: usize) -> usize {
    base << level.min(3)
}

/// Four channels per normalisation group when possible.
pub(crate) fn norm_groups(channels: usize) -> usize {
    if channels.is_multiple_of(4) {
        channels / 4
    } else {
        1
    }
}

/// Extra channels concatenated at `level` for this kind.
fn injected_channels(kind: NetKind, level: usize) -> usize {
    match kind {
        NetKind::Mrn if level == MRN_INJECT_LEVEL => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    weight: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
    geom: ConvGeom,
}

impl Block {
    fn apply<O: Ops>(&self, ops: &mut O, x: &O::T) -> O::T {
        let y = ops.conv(x, self.weight, self.bias, self.geom);
        let y = ops.group_norm(&y, self.gamma, self.beta, self.groups);
        ops.relu(&y)
    }
}

/// Parameter handles of one network, in allocation order.
#[derive(Debug, Clone)]
pub(crate) struct Arch {
    encoder: Vec<[Block; 2]>,
    decoder: Vec<[Block; 2]>,
    head_weight: ParamId,
    head_bias: ParamId,
    kind: NetKind,
}

/// Receives every parameter declaration: `(name, shape, role)`.
pub(crate) enum Role {
    Kernel,
    Bias,
    Scale,
    Shift,
    HeadKernel,
}

impl Arch {
    pub fn declare(
        kind: NetKind,
        cfg: &NetConfig,
        alloc: &mut dyn FnMut(String, &[usize], Role) -> Result<ParamId>,
    ) -> Result<Arch> {
        let mut block = |name: String, cin: usize, cout: usize, geom: ConvGeom| -> Result<Block> {
            Ok(Block {
                weight: alloc(format!("{name}.conv.weight"), &[cout, cin, geom.k, geom.k], Role::Kernel)?,
                bias: alloc(format!("{name}.conv.bias"), &[cout], Role::Bias)?,
                gamma: alloc(format!("{name}.norm.gamma"), &[cout], Role::Scale)?,
                beta: alloc(format!("{name}.norm.beta"), &[cout], Role::Shift)?,
                groups: norm_groups(cout),
                geom,
            })
        };
        let w = |l| level_width(cfg.base_width, l);
        let mut encoder = Vec::with_capacity(cfg.depth + 1);
        encoder.push([
            block("enc0.a".into(), kind.in_channels(), w(0), CONV3)?,
            block("enc0.b".into(), w(0), w(0), CONV3)?,
        ]);
        for l in 1..=cfg.depth {
            encoder.push([
                block(format!("enc{l}.down"), w(l - 1), w(l), DOWN3)?,
                block(format!("enc{l}.b"), w(l) + injected_channels(kind, l), w(l), CONV3)?,
            ]);
        }
        let mut decoder = Vec::with_capacity(cfg.depth);
        for l in (1..=cfg.depth).rev() {
            decoder.push([
                block(format!("dec{l}.a"), w(l) + w(l - 1), w(l - 1), CONV3)?,
                block(format!("dec{l}.b"), w(l - 1), w(l - 1), CONV3)?,
            ]);
        }
        let out = kind.out_channels();
        Ok(Arch {
            encoder,
            decoder,
            head_weight: alloc("head.weight".into(), &[out, w(0), HEAD.k, HEAD.k], Role::HeadKernel)?,
            head_bias: alloc("head.bias".into(), &[out], Role::Bias)?,
            kind,
        })
    }

    /// Looks up every declared parameter in `set`, checking shapes.
    pub fn bind(kind: NetKind, cfg: &NetConfig, set: &ParamSet) -> Result<Arch> {
        let mut seen = 0usize;
        let arch = Arch::declare(kind, cfg, &mut |name, shape, _| {
            let id = set
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if set.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    set.get(id).shape()
                )));
            }
            seen += 1;
            Ok(id)
        })?;
        if seen != set.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters present but the config declares {seen}",
                set.len()
            )));
        }
        Ok(arch)
    }

    pub fn allocate(kind: NetKind, cfg: &NetConfig, mut init: impl FnMut(&[usize], Role) -> ArrayD<f64>) -> Result<(Arch, ParamSet)> {
        let mut set = ParamSet::new();
        let arch = Arch::declare(kind, cfg, &mut |name, shape, role| Ok(set.push(name, init(shape, role))))?;
        Ok((arch, set))
    }

    /// Logits for `input`; `inject` is concatenated at the injection level.
    pub fn logits<O: Ops>(&self, ops: &mut O, input: O::T, inject: Option<O::T>) -> O::T {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = input;
        for (l, [first, second]) in self.encoder.iter().enumerate() {
            x = first.apply(ops, &x);
            if injected_channels(self.kind, l) > 0 {
                let extra = inject.as_ref().expect("injection input required");
                x = ops.concat(&x, extra);
            }
            x = second.apply(ops, &x);
            skips.push(x.clone());
        }
        skips.pop();
        for [first, second] in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = ops.upsample2(&x);
            let cat = ops.concat(&up, &skip);
            x = first.apply(ops, &cat);
            x = second.apply(ops, &x);
        }
        ops.conv(&x, self.head_weight, self.head_bias, HEAD)
    }
}

/// Closed-form parameter count for a kind and config.
pub fn param_count(kind: NetKind, cfg: &NetConfig) -> usize {
    let block = |cin: usize, cout: usize| cout * cin * 9 + cout + 2 * cout;
    let w = |l| level_width(cfg.base_width, l);
    let mut n = block(kind.in_channels(), w(0)) + block(w(0), w(0));
    for l in 1..=cfg.depth {
        n += block(w(l - 1), w(l)) + block(w(l) + injected_channels(kind, l), w(l));
        n += block(w(l) + w(l - 1), w(l - 1)) + block(w(l - 1), w(l - 1));
    }
    n + kind.out_channels() * w(0) * HEAD.k * HEAD.k + kind.out_channels()
}

pub(crate) fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}
