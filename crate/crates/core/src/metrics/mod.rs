//! Whole-image matting metrics averaged by pixel count, and an evaluation
//! driver over a dataset manifest.

mod connectivity;
mod gradient;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::imagery::{load_image, load_mask, Image, Mask};
use crate::synthdata::{DatasetManifest, ManifestRecord, Split};

pub use connectivity::{connectivity_error, OPAQUE_TOLERANCE};
pub use gradient::gradient_error;

/// Mean absolute difference.
pub fn sad(pred: &Mask, gt: &Mask) -> Result<f64> {
    ensure_shape!(pred.size() == gt.size(), "pred {:?} vs gt {:?}", pred.size(), gt.size());
    Ok((pred.data() - gt.data()).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Mean squared difference.
pub fn mse(pred: &Mask, gt: &Mask) -> Result<f64> {
    ensure_shape!(pred.size() == gt.size(), "pred {:?} vs gt {:?}", pred.size(), gt.size());
    Ok((pred.data() - gt.data()).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Constants of the gradient and connectivity metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub sigma: f64,
    pub q: f64,
    pub theta: f64,
    pub step: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            sigma: 1.4,
            q: 2.0,
            theta: 0.15,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

impl Scores {
    pub fn compute(pred: &Mask, gt: &Mask, params: &MetricParams) -> Result<Scores> {
        Ok(Scores {
            sad: sad(pred, gt)?,
            mse: mse(pred, gt)?,
            grad: gradient_error(pred, gt, params.sigma, params.q)?,
            conn: connectivity_error(pred, gt, params.theta, params.step)?,
        })
    }

    fn as_array(&self) -> [f64; 4] {
        [self.sad, self.mse, self.grad, self.conn]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub params: MetricParams,
    pub per_image: Vec<ImageScores>,
    pub aggregate: Scores,
}

impl EvalReport {
    pub fn new(params: MetricParams, per_image: Vec<ImageScores>) -> Result<EvalReport> {
        if per_image.is_empty() {
            return Err(Error::Empty("no images scored".into()));
        }
        let n = per_image.len() as f64;
        let mut sum = [0.0; 4];
        for s in &per_image {
            for (acc, v) in sum.iter_mut().zip(s.scores.as_array()) {
                *acc += v;
            }
        }
        let aggregate = Scores {
            sad: sum[0] / n,
            mse: sum[1] / n,
            grad: sum[2] / n,
            conn: sum[3] / n,
        };
        Ok(EvalReport {
            params,
            per_image,
            aggregate,
        })
    }

    /// Tab-separated report. The first line records the metric constants.
    pub fn to_tsv(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "# sigma={}\tq={}\ttheta={}\tstep={}\tconnectivity=4\topaque_tolerance={}\n",
            p.sigma, p.q, p.theta, p.step, OPAQUE_TOLERANCE
        );
        out.push_str("id\tsad\tmse\tgradient\tconnectivity\n");
        let mut row = |id: &str, s: &Scores| {
            let _ = writeln!(out, "{id}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}", s.sad, s.mse, s.grad, s.conn);
        };
        for s in &self.per_image {
            row(&s.id, &s.scores);
        }
        row("mean", &self.aggregate);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs `infer` on every test record of `manifest` and scores its alpha
/// against the ground truth. Images are processed in parallel; the report
/// keeps manifest order.
pub fn evaluate<F>(manifest: &DatasetManifest, params: &MetricParams, infer: F) -> Result<EvalReport>
where
    F: Fn(&ManifestRecord, &Image) -> Result<Mask> + Sync,
{
    ensure_arg!(params.sigma > 0.0, "sigma must be positive");
    let records: Vec<&ManifestRecord> = manifest.records.iter().filter(|r| r.split == Split::Test).collect();
    if records.is_empty() {
        return Err(Error::Empty("manifest has no test records".into()));
    }
    let per_image = records
        .par_iter()
        .map(|rec| {
            let img = load_image(manifest.resolve(&rec.composite))?.image;
            let gt = load_mask(manifest.resolve(&rec.alpha))?;
            let pred = infer(rec, &img)?;
            ensure_shape!(
                pred.size() == gt.size(),
                "{}: prediction {:?} vs ground truth {:?}",
                rec.id(),
                pred.size(),
                gt.size()
            );
            Ok(ImageScores {
                id: rec.id(),
                scores: Scores::compute(&pred, &gt, params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(*params, per_image)
}
