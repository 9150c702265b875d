//! Image and mask containers, raster I/O, bilinear resizing and the
//! splittable random source shared by every other module.

mod io;
mod resize;
mod rng;

pub use io::{load_image, load_mask, save_image, save_mask, save_rgba, LoadedImage};
pub use resize::{resize_plane, Resize};
pub(crate) use resize::resize_chw;
pub use rng::Rng;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{ensure_arg, ensure_shape, Error, Result};

/// Annotation quality of an alpha matte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quality {
    Fine,
    Coarse,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Fine => "fine",
            Quality::Coarse => "coarse",
        }
    }
}

impl std::str::FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Quality::Fine),
            "coarse" => Ok(Quality::Coarse),
            other => Err(Error::InvalidArgument(format!(
                "unknown quality tag {other:?} (expected fine or coarse)"
            ))),
        }
    }
}

impl std::fmt::Display for Quality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_unit_range<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    for &v in values {
        // NaN fails both comparisons
        ensure_arg!((0.0..=1.0).contains(&v), "{what} value {v} outside [0,1]");
    }
    Ok(())
}

/// An RGB image stored as `(height, width, 3)` with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        ensure_shape!(c == 3, "image must have 3 channels, got {c}");
        ensure_arg!(h >= 1 && w >= 1, "image must be non-empty, got {h}x{w}");
        check_unit_range(data.iter(), "image")?;
        Ok(Image { data })
    }

    /// Builds an image, clamping every value into `[0,1]`.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(clamp_unit);
        Image::new(data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Image::new(Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[[y, x, c]] = px[c];
                }
            }
        }
        Image::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Channel-first copy `(3, height, width)` for network input.
    pub fn to_chw(&self) -> Array3<f64> {
        self.data.view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned()
    }

    /// Inverse of [`Image::to_chw`]; `chw` must hold exactly three channels.
    pub fn from_chw(chw: &Array3<f64>) -> Result<Self> {
        Image::from_clamped(chw.view().permuted_axes([1, 2, 0]).as_standard_layout().into_owned())
    }

    pub fn flip_horizontal(&self) -> Image {
        Image {
            data: self.data.slice(s![.., ..;-1, ..]).to_owned(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        ensure_shape!(
            top + height <= self.height() && left + width <= self.width(),
            "crop {height}x{width}+{top}+{left} exceeds image {}x{}",
            self.height(),
            self.width()
        );
        Ok(Image {
            data: self
                .data
                .slice(s![top..top + height, left..left + width, ..])
                .to_owned(),
        })
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), c)
    }
}

/// A single-channel map with values in `[0,1]`: a mask or alpha matte.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: Array2<f64>,
}

impl Mask {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        ensure_arg!(h >= 1 && w >= 1, "mask must be non-empty, got {h}x{w}");
        check_unit_range(data.iter(), "mask")?;
        Ok(Mask { data })
    }

    pub fn from_clamped(mut data: Array2<f64>) -> Result<Self> {
        data.mapv_inplace(clamp_unit);
        Mask::new(data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Mask::new(Array2::from_elem((height, width), value))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f64) -> Result<Self> {
        Mask::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn size(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask {
            data: self.data.slice(s![.., ..;-1]).to_owned(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Mask> {
        ensure_shape!(
            top + height <= self.height() && left + width <= self.width(),
            "crop {height}x{width}+{top}+{left} exceeds mask {}x{}",
            self.height(),
            self.width()
        );
        Ok(Mask {
            data: self
                .data
                .slice(s![top..top + height, left..left + width])
                .to_owned(),
        })
    }

    /// `1 - m` elementwise.
    pub fn complement(&self) -> Mask {
        Mask {
            data: self.data.mapv(|v| 1.0 - v),
        }
    }
}

/// An alpha matte tagged with the quality of its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    pub alpha: Mask,
    pub quality: Quality,
}

impl AlphaMatte {
    pub fn new(alpha: Mask, quality: Quality) -> Self {
        AlphaMatte { alpha, quality }
    }

    pub fn size(&self) -> (usize, usize) {
        self.alpha.size()
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
