use rand::Rng;

use super::model::InpainterModel;
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};

/// Value written into hole pixels of the image channel.
pub const HOLE_FILL: f32 = 0.0;

/// Two-channel network input: the patch with `hole` set to [`HOLE_FILL`],
/// and a binary mask that is 1 inside the hole.
pub fn masked_input<T: Real>(patch: &Grid, hole: Rect) -> Tensor4<T> {
    let (h, w) = patch.dims();
    let mut t = Tensor4::zeros([1, 2, h, w]);
    for y in 0..h {
        for x in 0..w {
            if hole.contains(y, x) {
                t.set(0, 0, y, x, T::lit(f64::from(HOLE_FILL)));
                t.set(0, 1, y, x, T::one());
            } else {
                t.set(0, 0, y, x, T::lit(f64::from(patch.get(y, x))));
            }
        }
    }
    t
}

/// One completion of a masked patch. With `p_drop == 0` this is a pure
/// function of the model and input; otherwise channel dropout is drawn from
/// `rng` on every eligible layer.
pub fn inpaint_forward<T: Real, R: Rng + ?Sized>(
    model: &InpainterModel<T>,
    masked: &Tensor4<T>,
    p_drop: f64,
    rng: &mut R,
) -> Result<Tensor4<T>> {
    let d = model.arch().input_size;
    if masked.height() != d || masked.width() != d {
        return Err(Error::Config(format!(
            "model expects {d}x{d} patches, got {}x{}",
            masked.height(),
            masked.width()
        )));
    }
    model.forward_dropout(masked, p_drop, rng)
}
