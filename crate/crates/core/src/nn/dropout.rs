use rand::Rng;

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub(crate) fn check_p_drop(p_drop: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Config(format!("dropout probability must lie in [0, 1), got {p_drop}")));
    }
    Ok(())
}

/// Channel-wise (spatial) dropout: every (batch, channel) plane is zeroed
/// with probability `p_drop`, survivors are scaled by `1 / (1 - p_drop)`.
pub fn channel_dropout<T: Real, R: Rng + ?Sized>(
    activations: &Tensor4<T>,
    p_drop: f64,
    rng: &mut R,
) -> Result<Tensor4<T>> {
    let mut out = activations.clone();
    channel_dropout_in_place(&mut out, p_drop, rng)?;
    Ok(out)
}

pub(crate) fn channel_dropout_in_place<T: Real, R: Rng + ?Sized>(
    t: &mut Tensor4<T>,
    p_drop: f64,
    rng: &mut R,
) -> Result<()> {
    check_p_drop(p_drop)?;
    if p_drop == 0.0 {
        return Ok(());
    }
    let scale = T::lit(1.0 / (1.0 - p_drop));
    for n in 0..t.batch() {
        for c in 0..t.channels() {
            let plane = t.plane_mut(n, c);
            if rng.random::<f64>() < p_drop {
                plane.fill(T::zero());
            } else {
                plane.iter_mut().for_each(|v| *v = *v * scale);
            }
        }
    }
    Ok(())
}
