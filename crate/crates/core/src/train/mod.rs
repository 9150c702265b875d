//! Three-stage training: MPN on all data, then QUN on fine pairs with the
//! MPN frozen, then MRN on fine data with both mask networks frozen.

mod adam;
mod augment;
mod config;

pub use adam::Adam;
pub use augment::{crop_window, random_crop, random_flip, Window, CROP_MIN_ALPHA, CROP_TRIES};
pub use config::{MaskSource, QunPairs, StageConfig, TrainConfig};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use rayon::prelude::*;

use crate::degrade::{degrade, DegradeSpec};
use crate::error::{ensure_arg, Error, Result};
use crate::imagery::{load_image, load_mask, Image, Mask, Quality, Resize, Rng};
use crate::losses;
use crate::nets::{init_params, qun_forward, qun_input, save_checkpoint, NetKind, NetParams, ParamGrads};
use crate::pipeline::{checkpoint_name, predict_coarse, ModelBundle};
use crate::synthdata::{DatasetManifest, Split};

pub const LOG_FILE: &str = "train.log";

/// Summary of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: NetKind,
    pub steps: usize,
    pub epochs: usize,
    /// Batch-mean loss of every optimiser step.
    pub step_losses: Vec<f64>,
    /// Mean step loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
    /// Samples drawn into batches, by annotation quality.
    pub seen_fine: usize,
    pub seen_coarse: usize,
    /// `(network, digest before, digest after)` for every frozen network.
    pub frozen: Vec<(NetKind, String, String)>,
}

impl StageReport {
    /// Mean step loss over the last epoch (or the steps run so far).
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn frozen_unchanged(&self) -> bool {
        self.frozen.iter().all(|(_, a, b)| a == b)
    }
}

/// Destination for checkpoints and the step log. Both are optional.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
}

impl Output {
    pub fn none() -> Self {
        Output { dir: None }
    }

    pub fn dir(path: impl Into<PathBuf>) -> Self {
        Output { dir: Some(path.into()) }
    }

    fn log(&self) -> Result<Option<BufWriter<File>>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let f = File::options()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Some(BufWriter::new(f)))
    }

    fn checkpoint(&self, p: &NetParams) -> Result<()> {
        match &self.dir {
            Some(dir) => save_checkpoint(p, dir.join(checkpoint_name(p.kind()))),
            None => Ok(()),
        }
    }
}

struct Sample {
    image: Image,
    alpha: Mask,
    fg: Option<Image>,
    quality: Quality,
}

/// Loads training records passing `keep`, in manifest order.
fn load_samples(manifest: &DatasetManifest, keep: impl Fn(Quality) -> bool, with_fg: bool) -> Result<Vec<Sample>> {
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train && keep(r.quality))
        .collect();
    records
        .par_iter()
        .map(|r| {
            let image = load_image(manifest.resolve(&r.composite))?.image;
            let alpha = load_mask(manifest.resolve(&r.alpha))?;
            ensure_arg!(image.size() == alpha.size(), "{}: image and alpha sizes differ", r.id());
            let fg = if with_fg {
                Some(load_image(manifest.resolve(&r.fg))?.image)
            } else {
                None
            };
            Ok(Sample {
                image,
                alpha,
                fg,
                quality: r.quality,
            })
        })
        .collect()
}

fn nonfinite(stage: NetKind, step: usize, detail: impl Into<String>) -> Error {
    Error::NonFinite {
        stage: stage.name().into(),
        step,
        detail: detail.into(),
    }
}

/// Per-sample loss and parameter gradient.
type SampleFn<'a> = dyn Fn(&NetParams, usize, &mut Rng) -> Result<(f64, ParamGrads)> + Sync + 'a;

/// Shuffled mini-batch Adam over `qualities.len()` samples. Sample `i` of
/// step `s` draws its augmentation from an rng keyed by `(s, i)`, so
/// parallel and serial runs see identical randomness and gradients are
/// always reduced in batch order.
fn run_stage(
    params: &mut NetParams,
    cfg: &TrainConfig,
    qualities: &[Quality],
    frozen: &[&NetParams],
    out: &Output,
    sample: &SampleFn<'_>,
) -> Result<StageReport> {
    let stage = params.kind();
    let sc = *cfg.stage(stage);
    ensure_arg!(!qualities.is_empty(), "{stage}: no training samples");
    let root = Rng::new(cfg.seed).split(u64::from(stage.id()) + 1);
    let shuffle_root = root.split(0);
    let sample_root = root.split(1);
    let mut opt = Adam::new(params.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut log = out.log()?;
    let start = Instant::now();
    let before: Vec<String> = frozen.iter().map(|p| p.digest()).collect();
    let mut report = StageReport {
        stage,
        steps: 0,
        epochs: 0,
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        stopped_early: false,
        seen_fine: 0,
        seen_coarse: 0,
        frozen: Vec::new(),
    };
    let mut best = f64::INFINITY;
    let mut stale = 0;
    'epochs: for epoch in 0..sc.epochs {
        let mut order: Vec<usize> = (0..qualities.len()).collect();
        shuffle_root.split(epoch as u64).shuffle(&mut order);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for batch in order.chunks(sc.batch) {
            if sc.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let step = report.steps;
            let step_rng = sample_root.split(step as u64);
            let run = |(j, &i): (usize, &usize)| sample(params, i, &mut step_rng.split(j as u64));
            let results: Vec<Result<(f64, ParamGrads)>> = if cfg.parallel {
                batch.par_iter().enumerate().map(run).collect()
            } else {
                batch.iter().enumerate().map(run).collect()
            };
            let mut grads = ParamGrads::zeros_like(params.params());
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                grads.add_assign(&g);
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            grads.scale(scale);
            if !loss.is_finite() {
                return Err(nonfinite(stage, step, format!("loss = {loss}")));
            }
            if !grads.all_finite() {
                return Err(nonfinite(stage, step, "gradient"));
            }
            let backup = params.params().clone();
            opt.update(params.params_mut(), &grads);
            if !params.params().all_finite() {
                *params.params_mut() = backup;
                return Err(nonfinite(stage, step, "parameter update"));
            }
            for &i in batch {
                match qualities[i] {
                    Quality::Fine => report.seen_fine += 1,
                    Quality::Coarse => report.seen_coarse += 1,
                }
            }
            let secs = start.elapsed().as_secs_f64();
            log::debug!("{stage}\t{step}\t{loss:.6}\t{}\t{secs:.3}", cfg.lr);
            if let Some(w) = log.as_mut() {
                writeln!(w, "{stage}\t{step}\t{loss:.6}\t{}\t{secs:.3}", cfg.lr)
                    .map_err(|e| Error::io(out.dir.as_deref().unwrap_or(Path::new(LOG_FILE)), e))?;
            }
            report.step_losses.push(loss);
            report.steps += 1;
            epoch_sum += loss;
            epoch_steps += 1;
        }
        if epoch_steps == 0 {
            break;
        }
        let epoch_loss = epoch_sum / epoch_steps as f64;
        report.epoch_losses.push(epoch_loss);
        report.epochs += 1;
        out.checkpoint(params)?;
        log::info!("{stage} epoch {epoch}: loss {epoch_loss:.5} after {} steps", report.steps);
        if epoch_loss < best * (1.0 - cfg.min_delta) {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                report.stopped_early = true;
                break 'epochs;
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush().map_err(|e| Error::io(out.dir.as_deref().unwrap_or(Path::new(LOG_FILE)), e))?;
    }
    report.frozen = frozen
        .iter()
        .zip(before)
        .map(|(p, b)| (p.kind(), b, p.digest()))
        .collect();
    Ok(report)
}

fn init(cfg: &TrainConfig, kind: NetKind) -> Result<NetParams> {
    cfg.validate()?;
    init_params(&cfg.net_config(kind), kind, &mut Rng::new(cfg.seed).split(100 + u64::from(kind.id())))
}

fn maybe_flip(img: &Image, mask: &Mask, flip: bool, rng: &mut Rng) -> (Image, Mask, bool) {
    if flip {
        random_flip(img, mask, rng)
    } else {
        (img.clone(), mask.clone(), false)
    }
}

/// Trains the mask prediction network on every training record, fine and
/// coarse. Images and alphas are resized to `low_res`; the targets are the
/// resized alpha and its complement.
pub fn train_mpn(manifest: &DatasetManifest, cfg: &TrainConfig, out: &Output) -> Result<(NetParams, StageReport)> {
    let mut params = init(cfg, NetKind::Mpn)?;
    let (h, w) = cfg.low_res;
    let samples: Vec<(Image, Mask, Quality)> = load_samples(manifest, |_| true, false)?
        .into_iter()
        .map(|s| Ok((s.image.resize(h, w)?, s.alpha.resize(h, w)?, s.quality)))
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(Error::Empty("manifest has no training records".into()));
    }
    let qualities: Vec<Quality> = samples.iter().map(|s| s.2).collect();
    let weights = cfg.weights;
    let flip = cfg.flip;
    let sample = move |p: &NetParams, i: usize, rng: &mut Rng| {
        let (img, alpha, _) = maybe_flip(&samples[i].0, &samples[i].1, flip, rng);
        let (g, out) = p.forward_graph(img.to_chw(), None)?;
        let (loss, d) = losses::mpn_loss_grad(g.value(out), &alpha, &alpha.complement(), &weights)?;
        Ok((loss, g.backward(out, d)))
    };
    let report = run_stage(&mut params, cfg, &qualities, &[], out, &sample)?;
    Ok((params, report))
}

/// Loads [`TrainConfig::degrade_spec`] or falls back to the defaults.
pub fn degrade_spec(cfg: &TrainConfig) -> Result<DegradeSpec> {
    match &cfg.degrade_spec {
        Some(p) => DegradeSpec::load(p),
        None => Ok(DegradeSpec::default()),
    }
}

/// Trains the quality unification network on fine training records with
/// the MPN frozen. Each sample pairs `x` (the MPN mask, or the ground truth
/// in [`QunPairs::Gt`] mode) with `x'`, a freshly degraded ground truth.
pub fn train_qun(
    manifest: &DatasetManifest,
    mpn: &NetParams,
    spec: &DegradeSpec,
    cfg: &TrainConfig,
    out: &Output,
) -> Result<(NetParams, StageReport)> {
    spec.validate()?;
    let mut params = init(cfg, NetKind::Qun)?;
    let (h, w) = cfg.low_res;
    let loaded = load_samples(manifest, |q| q == Quality::Fine, false)?;
    if loaded.is_empty() {
        return Err(Error::Empty("manifest has no fine training records".into()));
    }
    struct QunSample {
        image: Image,
        alpha: Mask,
        // MPN masks of the image and of its mirror.
        predicted: Option<[Mask; 2]>,
    }
    let samples: Vec<QunSample> = loaded
        .into_par_iter()
        .map(|s| {
            let image = s.image.resize(h, w)?;
            let predicted = match cfg.qun_pairs {
                QunPairs::Mpn => Some([
                    predict_coarse(mpn, &image)?,
                    predict_coarse(mpn, &image.flip_horizontal())?,
                ]),
                QunPairs::Gt => None,
            };
            Ok(QunSample {
                alpha: s.alpha.resize(h, w)?,
                image,
                predicted,
            })
        })
        .collect::<Result<_>>()?;
    let qualities = vec![Quality::Fine; samples.len()];
    let weights = cfg.weights;
    let flip = cfg.flip;
    let sample = move |p: &NetParams, i: usize, rng: &mut Rng| {
        let s = &samples[i];
        let (img, alpha, flipped) = maybe_flip(&s.image, &s.alpha, flip, rng);
        let x = match &s.predicted {
            Some(m) => m[usize::from(flipped)].clone(),
            None => alpha.clone(),
        };
        let x2 = degrade(&alpha, spec, rng)?;
        let (g1, o1) = p.forward_graph(qun_input(&img, &x)?, Some(x.data()))?;
        let (g2, o2) = p.forward_graph(qun_input(&img, &x2)?, Some(x2.data()))?;
        let q1 = g1.value(o1).index_axis(Axis(0), 0).to_owned();
        let q2 = g2.value(o2).index_axis(Axis(0), 0).to_owned();
        let (loss, d1, d2) = losses::qun_loss_grad(&q1, x.data(), &q2, x2.data(), &weights)?;
        let mut grads = g1.backward(o1, d1.insert_axis(Axis(0)));
        g2.backward_into(o2, d2.insert_axis(Axis(0)), &mut grads);
        Ok((loss, grads))
    };
    let report = run_stage(&mut params, cfg, &qualities, &[mpn], out, &sample)?;
    Ok((params, report))
}

/// Coarse mask for a high-resolution crop as the MRN sees it: the crop
/// shrunk by the scale gap, passed through the frozen MPN and QUN.
pub fn cascade_mask(mpn: &NetParams, qun: &NetParams, crop: &Image) -> Result<Mask> {
    let gap = mpn.config().scale_gap;
    let (h, w) = crop.size();
    let small = crop.resize(h / gap, w / gap)?;
    let coarse = predict_coarse(mpn, &small)?;
    qun_forward(qun, &small, &coarse)
}

/// Trains the matting refinement network on fine training records only,
/// with random crops of `cfg.crop` and the MPN and QUN frozen.
pub fn train_mrn(
    manifest: &DatasetManifest,
    mpn: &NetParams,
    qun: &NetParams,
    cfg: &TrainConfig,
    out: &Output,
) -> Result<(NetParams, StageReport)> {
    let mut params = init(cfg, NetKind::Mrn)?;
    let samples = load_samples(manifest, |q| q == Quality::Fine, true)?;
    if samples.is_empty() {
        return Err(Error::Empty("manifest has no fine training records".into()));
    }
    let qualities: Vec<Quality> = samples.iter().map(|s| s.quality).collect();
    let weights = cfg.weights;
    let (flip, crop, source) = (cfg.flip, cfg.crop, cfg.mrn_mask);
    let gap = params.config().scale_gap;
    let sample = move |p: &NetParams, i: usize, rng: &mut Rng| {
        let s: &Sample = &samples[i];
        let fg_full = s.fg.as_ref().expect("loaded with foregrounds");
        let win = crop_window(&s.alpha, crop, rng)?;
        let (mut img, mut alpha, mut fg) = (win.image(&s.image), win.mask(&s.alpha), win.image(fg_full));
        if flip && rng.chance(0.5) {
            img = img.flip_horizontal();
            alpha = alpha.flip_horizontal();
            fg = fg.flip_horizontal();
        }
        let mask = match source {
            MaskSource::Cascade => cascade_mask(mpn, qun, &img)?,
            MaskSource::GroundTruth => alpha.resize(crop.0 / gap, crop.1 / gap)?,
        };
        let (g, out) = p.forward_graph(img.to_chw(), Some(mask.data()))?;
        let (loss, d) = losses::mrn_loss_grad(g.value(out), &fg, &alpha, &weights)?;
        Ok((loss, g.backward(out, d)))
    };
    let report = run_stage(&mut params, cfg, &qualities, &[mpn, qun], out, &sample)?;
    Ok((params, report))
}

/// Runs the three stages in order and returns the bundle; with an output
/// directory the bundle is saved there as well.
pub fn train_all(
    manifest: &DatasetManifest,
    spec: &DegradeSpec,
    cfg: &TrainConfig,
    out: &Output,
) -> Result<(ModelBundle, Vec<StageReport>)> {
    let (mpn, r1) = train_mpn(manifest, cfg, out)?;
    let (qun, r2) = train_qun(manifest, &mpn, spec, cfg, out)?;
    let (mrn, r3) = train_mrn(manifest, &mpn, &qun, cfg, out)?;
    let bundle = ModelBundle::new(mpn, qun, mrn)?;
    if let Some(dir) = &out.dir {
        bundle.save(dir)?;
    }
    Ok((bundle, vec![r1, r2, r3]))
}
