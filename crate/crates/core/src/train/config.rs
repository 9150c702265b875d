//! Training hyperparameters, loaded from tab-separated key/value text.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{parse_pair, KeyValues};
use crate::error::{ensure_arg, Error, Result};
use crate::losses::LossWeights;
use crate::nets::{NetConfig, NetKind};

/// Masks the unification network is trained to map together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QunPairs {
    /// `x` carries the frozen MPN's foreground mask.
    Mpn,
    /// `x` carries the ground-truth alpha.
    Gt,
}

/// Coarse mask fed to the refinement network during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    /// Frozen MPN followed by the frozen QUN.
    Cascade,
    /// Downsampled ground-truth alpha.
    GroundTruth,
}

impl FromStr for QunPairs {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpn" => Ok(QunPairs::Mpn),
            "gt" => Ok(QunPairs::Gt),
            other => Err(Error::InvalidArgument(format!("qun_pairs {other:?} (expected mpn or gt)"))),
        }
    }
}

impl FromStr for MaskSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cascade" => Ok(MaskSource::Cascade),
            "gt" => Ok(MaskSource::GroundTruth),
            other => Err(Error::InvalidArgument(format!("mrn_mask {other:?} (expected cascade or gt)"))),
        }
    }
}

/// Per-network settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Hard cap on optimiser steps; `None` runs every epoch.
    pub max_steps: Option<usize>,
    pub width: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mpn: StageConfig,
    pub qun: StageConfig,
    pub mrn: StageConfig,
    /// `(height, width)` of MPN/QUN inputs.
    pub low_res: (usize, usize),
    /// `(height, width)` of MRN crops; four times `low_res`.
    pub crop: (usize, usize),
    pub flip: bool,
    /// Epochs without a relative improvement of `min_delta` before a stage
    /// stops early; 0 disables.
    pub patience: usize,
    pub min_delta: f64,
    pub qun_pairs: QunPairs,
    pub mrn_mask: MaskSource,
    /// Per-sample gradients of a batch are computed on the rayon pool.
    /// Results are reduced in batch order either way.
    pub parallel: bool,
    pub weights: LossWeights,
    /// Degradation spec file for QUN pairs; defaults apply when absent.
    pub degrade_spec: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let stage = |kind: NetKind, batch: usize| {
            let n = NetConfig::for_kind(kind);
            StageConfig {
                epochs: 20,
                batch,
                max_steps: None,
                width: n.base_width,
                depth: n.depth,
            }
        };
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            mpn: stage(NetKind::Mpn, 16),
            qun: stage(NetKind::Qun, 16),
            mrn: stage(NetKind::Mrn, 1),
            low_res: (192, 160),
            crop: (768, 640),
            flip: true,
            patience: 3,
            min_delta: 1e-3,
            qun_pairs: QunPairs::Mpn,
            mrn_mask: MaskSource::Cascade,
            parallel: false,
            weights: LossWeights::default(),
            degrade_spec: None,
        }
    }
}

impl TrainConfig {
    /// Width-8 networks at the given mask resolution, for CPU runs. The mask
    /// networks have depth 2 and the refinement network depth 3.
    pub fn desk(low_res: (usize, usize)) -> Self {
        let mut c = TrainConfig {
            low_res,
            crop: (low_res.0 * NetConfig::SCALE_GAP, low_res.1 * NetConfig::SCALE_GAP),
            ..TrainConfig::default()
        };
        for s in [&mut c.mpn, &mut c.qun, &mut c.mrn] {
            s.width = 8;
            s.depth = 2;
        }
        // Foreground colour behind the subject needs wider context than the masks.
        c.mrn.depth = 3;
        c
    }

    pub fn stage(&self, kind: NetKind) -> &StageConfig {
        match kind {
            NetKind::Mpn => &self.mpn,
            NetKind::Qun => &self.qun,
            NetKind::Mrn => &self.mrn,
        }
    }

    pub fn stage_mut(&mut self, kind: NetKind) -> &mut StageConfig {
        match kind {
            NetKind::Mpn => &mut self.mpn,
            NetKind::Qun => &mut self.qun,
            NetKind::Mrn => &mut self.mrn,
        }
    }

    pub fn net_config(&self, kind: NetKind) -> NetConfig {
        let s = self.stage(kind);
        NetConfig {
            base_width: s.width,
            depth: s.depth,
            low_res: self.low_res,
            high_res: self.crop,
            scale_gap: NetConfig::SCALE_GAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure_arg!((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0,1)");
        ensure_arg!((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0,1)");
        ensure_arg!(self.epsilon > 0.0, "epsilon must be positive");
        ensure_arg!(self.min_delta >= 0.0, "min_delta must be non-negative");
        self.weights.validate()?;
        for kind in NetKind::ALL {
            let s = self.stage(kind);
            ensure_arg!(s.batch >= 1, "{kind} batch must be at least 1");
            ensure_arg!(s.epochs >= 1, "{kind} epochs must be at least 1");
            ensure_arg!(s.max_steps != Some(0), "{kind} max_steps must be at least 1");
            let cfg = self.net_config(kind);
            cfg.validate()?;
            let g = cfg.granularity();
            let size = if kind == NetKind::Mrn { self.crop } else { self.low_res };
            ensure_arg!(
                size.0 % g == 0 && size.1 % g == 0,
                "{kind} input {}x{} must be divisible by {g}",
                size.0,
                size.1
            );
        }
        Ok(())
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let mut c = TrainConfig::default();
        kv.take("lr", &mut c.lr)?;
        kv.take("beta1", &mut c.beta1)?;
        kv.take("beta2", &mut c.beta2)?;
        kv.take("epsilon", &mut c.epsilon)?;
        kv.take("seed", &mut c.seed)?;
        for kind in NetKind::ALL {
            let n = kind.name();
            let s = c.stage_mut(kind);
            kv.take(&format!("{n}_epochs"), &mut s.epochs)?;
            kv.take(&format!("batch_{n}"), &mut s.batch)?;
            kv.take(&format!("{n}_width"), &mut s.width)?;
            kv.take(&format!("{n}_depth"), &mut s.depth)?;
            let mut steps = s.max_steps.unwrap_or(0);
            kv.take(&format!("{n}_max_steps"), &mut steps)?;
            s.max_steps = (steps > 0).then_some(steps);
        }
        kv.take_with("low_res", &mut c.low_res, parse_pair)?;
        kv.take_with("crop", &mut c.crop, parse_pair)?;
        kv.take("flip", &mut c.flip)?;
        kv.take("patience", &mut c.patience)?;
        kv.take("min_delta", &mut c.min_delta)?;
        kv.take("qun_pairs", &mut c.qun_pairs)?;
        kv.take("mrn_mask", &mut c.mrn_mask)?;
        kv.take("parallel", &mut c.parallel)?;
        kv.take("lambda_l", &mut c.weights.lambda_l)?;
        kv.take("lambda_1", &mut c.weights.lambda_1)?;
        kv.take("lambda_2", &mut c.weights.lambda_2)?;
        kv.take("lambda_h", &mut c.weights.lambda_h)?;
        let mut spec = String::new();
        kv.take("degrade_spec", &mut spec)?;
        if !spec.is_empty() {
            c.degrade_spec = Some(PathBuf::from(spec));
        }
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; a relative `degrade_spec` is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut c = TrainConfig::from_kv(KeyValues::load(path)?)?;
        if let (Some(spec), Some(dir)) = (&c.degrade_spec, path.parent()) {
            if spec.is_relative() {
                c.degrade_spec = Some(dir.join(spec));
            }
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('\t');
            out.push_str(&v);
            out.push('\n');
        };
        put("lr", self.lr.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("epsilon", self.epsilon.to_string());
        put("seed", self.seed.to_string());
        for kind in NetKind::ALL {
            let n = kind.name();
            let s = self.stage(kind);
            put(&format!("{n}_epochs"), s.epochs.to_string());
            put(&format!("batch_{n}"), s.batch.to_string());
            put(&format!("{n}_width"), s.width.to_string());
            put(&format!("{n}_depth"), s.depth.to_string());
            put(&format!("{n}_max_steps"), s.max_steps.unwrap_or(0).to_string());
        }
        put("low_res", format!("{}x{}", self.low_res.0, self.low_res.1));
        put("crop", format!("{}x{}", self.crop.0, self.crop.1));
        put("flip", self.flip.to_string());
        put("patience", self.patience.to_string());
        put("min_delta", self.min_delta.to_string());
        put(
            "qun_pairs",
            match self.qun_pairs {
                QunPairs::Mpn => "mpn",
                QunPairs::Gt => "gt",
            }
            .into(),
        );
        put(
            "mrn_mask",
            match self.mrn_mask {
                MaskSource::Cascade => "cascade",
                MaskSource::GroundTruth => "gt",
            }
            .into(),
        );
        put("parallel", self.parallel.to_string());
        put("lambda_l", self.weights.lambda_l.to_string());
        put("lambda_1", self.weights.lambda_1.to_string());
        put("lambda_2", self.weights.lambda_2.to_string());
        put("lambda_h", self.weights.lambda_h.to_string());
        if let Some(p) = &self.degrade_spec {
            put("degrade_spec", p.display().to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lr, 1e-3);
        assert_eq!((c.mpn.batch, c.qun.batch, c.mrn.batch), (16, 16, 1));
        assert_eq!(c.mpn.epochs, 20);
        assert_eq!(c.crop, (768, 640));
        assert_eq!(c.low_res, (192, 160));
        TrainConfig::desk((48, 40)).validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk((32, 32));
        c.seed = 9;
        c.mrn.max_steps = Some(100);
        c.qun_pairs = QunPairs::Gt;
        c.mrn_mask = MaskSource::GroundTruth;
        c.degrade_spec = Some(PathBuf::from("/tmp/spec.tsv"));
        let back = TrainConfig::from_kv(KeyValues::parse(&c.to_text(), Path::new("c")).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = TrainConfig::from_kv(KeyValues::parse("lr\t0.1\nbatch_mpn\tzero\n", Path::new("cfg.tsv")).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg.tsv:2"), "{err}");
        let err = TrainConfig::from_kv(KeyValues::parse("lr\t0.1\nbogus\t1\n", Path::new("cfg.tsv")).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg.tsv:2") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let mut c = TrainConfig::desk((48, 40));
        c.low_res = (50, 40);
        c.crop = (200, 160);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk((48, 40));
        c.mpn.batch = 0;
        assert!(c.validate().is_err());
    }
}
