use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage, RgbaImage};
use ndarray::{Array2, Array3};

use super::{AlphaMatte, Image, Mask, Quality};
use crate::error::{Error, Result};

/// Result of decoding a raster: the colour planes plus the alpha channel
/// when the file carried one.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub image: Image,
    pub alpha: Option<AlphaMatte>,
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

fn to_unit(v: u8) -> f64 {
    f64::from(v) / 255.0
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a raster as an [`Image`]. Four-channel inputs also yield their
/// alpha channel as a fine-quality matte.
pub fn load_image(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let path = path.as_ref();
    let decoded = decode(path)?;
    let has_alpha = decoded.color().has_alpha();
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut rgb = Array3::zeros((h, w, 3));
    let mut alpha = Array2::zeros((h, w));
    for (x, y, px) in rgba.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            rgb[[y, x, c]] = to_unit(px[c]);
        }
        alpha[[y, x]] = to_unit(px[3]);
    }
    Ok(LoadedImage {
        image: Image::new(rgb)?,
        alpha: if has_alpha {
            Some(AlphaMatte::new(Mask::new(alpha)?, Quality::Fine))
        } else {
            None
        },
    })
}

/// Loads a single-channel matte. Colour files are reduced to luma.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let gray = decode(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Mask::new(Array2::from_shape_fn((h, w), |(y, x)| {
        to_unit(gray.get_pixel(x as u32, y as u32)[0])
    }))
}

fn write(img: DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::Encode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = img.size();
    let data = img.data();
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize(data[[y, x, 0]]),
            quantize(data[[y, x, 1]]),
            quantize(data[[y, x, 2]]),
        ])
    });
    write(DynamicImage::ImageRgb8(buf), path.as_ref())
}

/// Writes an 8-bit single-channel PNG.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = mask.size();
    let data = mask.data();
    let buf = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(data[[y as usize, x as usize]])])
    });
    write(DynamicImage::ImageLuma8(buf), path.as_ref())
}

/// Writes an 8-bit RGBA PNG carrying `alpha` in the fourth channel.
pub fn save_rgba(img: &Image, alpha: &Mask, path: impl AsRef<Path>) -> Result<()> {
    if img.size() != alpha.size() {
        return Err(Error::Shape(format!(
            "image {:?} and alpha {:?} differ in size",
            img.size(),
            alpha.size()
        )));
    }
    let (h, w) = img.size();
    let (data, a) = (img.data(), alpha.data());
    let buf = RgbaImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgba([
            quantize(data[[y, x, 0]]),
            quantize(data[[y, x, 1]]),
            quantize(data[[y, x, 2]]),
            quantize(a[[y, x]]),
        ])
    });
    write(DynamicImage::ImageRgba8(buf), path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;

    #[test]
    fn eight_bit_scaling() {
        assert_eq!(to_unit(255), 1.0);
        assert_eq!(to_unit(0), 0.0);
        assert!((to_unit(128) - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn constant_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        for v in [0.0, 1.0] {
            let path = dir.path().join(format!("m{v}.png"));
            let m = Mask::filled(4, 4, v).unwrap();
            save_mask(&m, &path).unwrap();
            assert_eq!(load_mask(&path).unwrap(), m);

            let path = dir.path().join(format!("i{v}.png"));
            let img = Image::filled(4, 4, [v; 3]).unwrap();
            save_image(&img, &path).unwrap();
            let loaded = load_image(&path).unwrap();
            assert_eq!(loaded.image, img);
            assert!(loaded.alpha.is_none());
        }
    }

    #[test]
    fn random_matte_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(11);
        let m = Mask::from_fn(16, 16, |_| rng.uniform()).unwrap();
        let path = dir.path().join("m.png");
        save_mask(&m, &path).unwrap();
        let back = load_mask(&path).unwrap();
        let err = (back.data() - m.data()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1.0 / 255.0 + 1e-6, "max error {err}");
    }

    #[test]
    fn rgba_splits_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(3, 2, [0.2, 0.4, 0.6]).unwrap();
        let alpha = Mask::from_fn(3, 2, |(y, _)| y as f64 / 2.0).unwrap();
        let path = dir.path().join("fg.png");
        save_rgba(&img, &alpha, &path).unwrap();
        let loaded = load_image(&path).unwrap();
        let a = loaded.alpha.expect("alpha channel");
        assert_eq!(a.quality, Quality::Fine);
        assert!((a.alpha.data()[[1, 0]] - 128.0 / 255.0).abs() < 1e-12);
        assert!((loaded.image.data()[[0, 0, 2]] - 153.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let err = load_image(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.png"), "{err}");

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        let err = load_mask(&junk).unwrap_err().to_string();
        assert!(err.contains("junk.png"), "{err}");

        let unwritable = dir.path().join("no/such/dir/x.png");
        assert!(save_mask(&Mask::filled(2, 2, 0.5).unwrap(), unwritable).is_err());
    }
}
