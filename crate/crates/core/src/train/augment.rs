//! Paired geometric augmentation: horizontal flips and random crops with
//! reflection padding for inputs smaller than the crop.

use ndarray::{Array2, Array3};

use crate::error::{ensure_arg, Result};
use crate::imagery::{Image, Mask, Rng};

/// Crops are redrawn up to this many times while they hold almost no
/// foreground.
pub const CROP_TRIES: usize = 10;
/// Mean alpha a crop must exceed to be accepted before the tries run out.
pub const CROP_MIN_ALPHA: f64 = 0.02;

/// Flips both members of the pair with probability one half. Returns
/// whether the flip happened.
pub fn random_flip(img: &Image, alpha: &Mask, rng: &mut Rng) -> (Image, Mask, bool) {
    if rng.chance(0.5) {
        (img.flip_horizontal(), alpha.flip_horizontal(), true)
    } else {
        (img.clone(), alpha.clone(), false)
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// A crop rectangle in source coordinates. Offsets may be negative or the
/// extent may overrun the source; such samples are reflected back inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub top: isize,
    pub left: isize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    fn source(&self, y: usize, x: usize, (h, w): (usize, usize)) -> (usize, usize) {
        (
            reflect(self.top + y as isize, h),
            reflect(self.left + x as isize, w),
        )
    }

    pub fn image(&self, img: &Image) -> Image {
        let size = img.size();
        let d = img.data();
        let out = Array3::from_shape_fn((self.height, self.width, 3), |(y, x, c)| {
            let (sy, sx) = self.source(y, x, size);
            d[[sy, sx, c]]
        });
        Image::new(out).expect("crop of a valid image")
    }

    pub fn mask(&self, mask: &Mask) -> Mask {
        let size = mask.size();
        let d = mask.data();
        let out = Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            let (sy, sx) = self.source(y, x, size);
            d[[sy, sx]]
        });
        Mask::new(out).expect("crop of a valid mask")
    }
}

/// Draws one offset along an axis of length `n` for a crop of `c`. When the
/// source is shorter the padded extent is centred on it.
fn draw_offset(n: usize, c: usize, rng: &mut Rng) -> isize {
    if n >= c {
        rng.below(n - c + 1) as isize
    } else {
        -(((c - n) / 2) as isize)
    }
}

/// Draws a crop window of `size` over an image of `src` size, preferring
/// windows whose mean alpha exceeds [`CROP_MIN_ALPHA`].
pub fn crop_window(alpha: &Mask, size: (usize, usize), rng: &mut Rng) -> Result<Window> {
    ensure_arg!(size.0 >= 1 && size.1 >= 1, "crop size must be positive");
    let (h, w) = alpha.size();
    let mut win = Window {
        top: 0,
        left: 0,
        height: size.0,
        width: size.1,
    };
    for _ in 0..CROP_TRIES {
        win.top = draw_offset(h, size.0, rng);
        win.left = draw_offset(w, size.1, rng);
        if win.mask(alpha).mean() > CROP_MIN_ALPHA {
            break;
        }
    }
    Ok(win)
}

/// Crops image and alpha with the same window.
pub fn random_crop(img: &Image, alpha: &Mask, size: (usize, usize), rng: &mut Rng) -> Result<(Image, Mask, Window)> {
    ensure_arg!(img.size() == alpha.size(), "image {:?} and alpha {:?} differ", img.size(), alpha.size());
    let win = crop_window(alpha, size, rng)?;
    Ok((win.image(img), win.mask(alpha), win))
}
