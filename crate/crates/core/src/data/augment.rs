use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Zero padding on every side before a random crop.
pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AugmentMode {
    #[default]
    #[serde(rename = "none")]
    None,
    /// Random left-right flip.
    #[serde(rename = "flip")]
    Flip,
    #[serde(rename = "flip+crop")]
    FlipCrop,
    /// Independent left-right and up-down flips, then the crop.
    #[serde(rename = "flip-hv+crop")]
    FlipHvCrop,
}

impl std::str::FromStr for AugmentMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "flip" => Ok(AugmentMode::Flip),
            "flip+crop" => Ok(AugmentMode::FlipCrop),
            "flip-hv+crop" => Ok(AugmentMode::FlipHvCrop),
            _ => Err(crate::error::Error::Config(format!("unknown augmentation {s:?}"))),
        }
    }
}

fn remap(img: &Tensor, f: impl Fn(usize, usize) -> Option<(usize, usize)>) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let src = img.data();
    Tensor::from_fn(img.shape(), |idx| {
        let (ch, y, x) = (idx / (h * w), idx / w % h, idx % w);
        f(y, x).map_or(0.0, |(sy, sx)| src[ch * h * w + sy * w + sx])
    })
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let w = img.shape()[2];
    remap(img, |y, x| Some((y, w - 1 - x)))
}

pub fn flip_vertical(img: &Tensor) -> Tensor {
    let h = img.shape()[1];
    remap(img, |y, x| Some((h - 1 - y, x)))
}

/// Window of the input's size at offset `(dy, dx)` into the image padded
/// by `pad` zeros; `(pad, pad)` is the identity.
pub fn crop_padded(img: &Tensor, pad: usize, dy: usize, dx: usize) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    remap(img, |y, x| {
        let (sy, sx) = ((y + dy).checked_sub(pad)?, (x + dx).checked_sub(pad)?);
        (sy < h && sx < w).then_some((sy, sx))
    })
}

/// Draws happen in a fixed order (horizontal flip, vertical flip, crop
/// offsets) so a run replays from the rng state.
pub fn augment(img: &Tensor, mode: AugmentMode, rng: &mut Rng) -> Tensor {
    let mut out = match mode {
        AugmentMode::None => return img.clone(),
        _ if rng.coin() => flip_horizontal(img),
        _ => img.clone(),
    };
    if mode == AugmentMode::FlipHvCrop && rng.coin() {
        out = flip_vertical(&out);
    }
    if matches!(mode, AugmentMode::FlipCrop | AugmentMode::FlipHvCrop) {
        let dy = rng.below(2 * CROP_PAD + 1);
        let dx = rng.below(2 * CROP_PAD + 1);
        out = crop_padded(&out, CROP_PAD, dy, dx);
    }
    out
}
