//! 2D cross-correlation via im2col + GEMM.

use super::tensor::{gemm, MatRef, Real, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_ch: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::Config("kernel size and stride must be positive".into()));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Config(format!("kernel {k} larger than padded input {h}x{w} (pad {pad})")));
        }
        Ok(ConvGeom {
            in_ch,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `[lo, hi)` for which input column `ox*stride + kx - pad`
    /// is inside the image.
    fn valid_range(&self, kx: usize, out: usize, size: usize) -> (usize, usize) {
        let s = self.stride;
        // need ox*s + kx >= pad  and  ox*s + kx - pad < size
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(s) };
        let limit = size + self.pad; // ox*s + kx < limit
        let hi = if limit > kx { ((limit - kx).div_ceil(s)).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfold one image (C×H×W) into a (C·k·k) × (out_h·out_w) column matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let n = g.out_len();
    debug_assert_eq!(cols.len(), g.patch_len() * n);
    for c in 0..g.in_ch {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid_range(ky, g.out_h, g.h);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid_range(kx, g.out_w, g.w);
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                dst.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = xlo + kx - g.pad;
                        drow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image gradient.
pub(crate) fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let n = g.out_len();
    for c in 0..g.in_ch {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid_range(ky, g.out_h, g.h);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid_range(kx, g.out_w, g.w);
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in xlo..xhi {
                        dst[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

fn check_weights<T: Real>(input: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T]) -> Result<()> {
    let [out_c, in_c, kh, kw] = weights.shape();
    if in_c != input.channels() {
        return Err(Error::Config(format!("input has {} channels, weights expect {in_c}", input.channels())));
    }
    if kh != kw {
        return Err(Error::Config(format!("only square kernels are supported, got {kh}x{kw}")));
    }
    if bias.len() != out_c {
        return Err(Error::Config(format!("bias has {} entries for {out_c} output channels", bias.len())));
    }
    Ok(())
}

/// Batched cross-correlation. `weights` is laid out (out, in, k, k).
pub fn conv2d_forward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    check_weights(input, weights, bias)?;
    let out_c = weights.shape()[0];
    let g = ConvGeom::new(input.channels(), input.height(), input.width(), weights.shape()[2], stride, padding)?;
    let mut out = Tensor4::zeros([input.batch(), out_c, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.patch_len() * g.out_len()];
    let wmat = MatRef::row_major(weights.data(), out_c, g.patch_len());
    for n in 0..input.batch() {
        im2col(&g, input.item(n), &mut cols);
        let dst = out.item_mut(n);
        for (c, b) in bias.iter().enumerate() {
            dst[c * g.out_len()..(c + 1) * g.out_len()].fill(*b);
        }
        gemm(wmat, MatRef::row_major(&cols, g.patch_len(), g.out_len()), T::one(), dst);
    }
    Ok(out)
}

/// Gradients of one convolution. Accumulates into `grad_w` / `grad_b` and
/// returns the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor4<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_input: bool,
) -> Result<Option<Tensor4<T>>> {
    let out_c = weights.shape()[0];
    let g = ConvGeom::new(input.channels(), input.height(), input.width(), weights.shape()[2], stride, padding)?;
    if grad_out.shape() != [input.batch(), out_c, g.out_h, g.out_w] {
        return Err(Error::Usage(format!(
            "output gradient shape {:?} does not match the layer output",
            grad_out.shape()
        )));
    }
    let (k, n_out) = (g.patch_len(), g.out_len());
    let mut cols = vec![T::zero(); k * n_out];
    let mut dcols = vec![T::zero(); k * n_out];
    let mut grad_in = want_input.then(|| Tensor4::zeros(input.shape()));
    let wmat = MatRef::row_major(weights.data(), out_c, k);
    for n in 0..input.batch() {
        let go = grad_out.item(n);
        im2col(&g, input.item(n), &mut cols);
        let gmat = MatRef::row_major(go, out_c, n_out);
        gemm(gmat, MatRef::row_major(&cols, k, n_out).t(), T::one(), grad_w);
        for (c, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[c * n_out..(c + 1) * n_out].iter().copied().sum::<T>();
        }
        if let Some(gi) = grad_in.as_mut() {
            gemm(wmat.t(), gmat, T::zero(), &mut dcols);
            col2im_add(&g, &dcols, gi.item_mut(n));
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop reference.
    #[allow(clippy::needless_range_loop)]
    fn reference(input: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], s: usize, p: usize) -> Tensor4<f64> {
        let [oc, ic, k, _] = w.shape();
        let (h, wd) = (input.height(), input.width());
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor4::zeros([input.batch(), oc, oh, ow]);
        for n in 0..input.batch() {
            for o in 0..oc {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ic {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * s + ky) as isize - p as isize;
                                    let ix = (x * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.get(o, c, ky, kx) * input.get(n, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.set(n, o, y, x, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_scaling() {
        let x = Tensor4::<f32>::filled([1, 1, 3, 3], 1.0);
        let w = Tensor4::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn neighborhood_sum_of_identity() {
        let mut x = Tensor4::<f64>::zeros([1, 1, 3, 3]);
        for i in 0..3 {
            x.set(0, 0, i, i, 1.0);
        }
        let w = Tensor4::filled([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, &[0.0], 1, 1).unwrap();
        let r = reference(&x, &w, &[0.0], 1, 1);
        assert_eq!(y, r);
        // corners see two diagonal ones, the center sees all three
        assert_eq!(y.data(), &[2.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor4::<f32>::from_vec([1, 2, 4, 4], (0..32).map(|v| v as f32).collect()).unwrap();
        let w = Tensor4::zeros([3, 2, 3, 3]);
        let y = conv2d_forward(&x, &w, &[0.5, -1.0, 0.0], 2, 1).unwrap();
        assert_eq!(y.shape(), [1, 3, 2, 2]);
        for c in 0..3 {
            let b = [0.5, -1.0, 0.0][c];
            assert!(y.plane(0, c).iter().all(|&v| v == b));
        }
    }

    #[test]
    fn output_size_formula() {
        for (h, k, s, p) in [(7, 3, 2, 1), (8, 3, 2, 1), (5, 5, 1, 0), (9, 3, 3, 2)] {
            let x = Tensor4::<f64>::filled([1, 1, h, h], 1.0);
            let w = Tensor4::filled([1, 1, k, k], 1.0);
            let y = conv2d_forward(&x, &w, &[0.0], s, p).unwrap();
            assert_eq!(y.height(), (h + 2 * p - k) / s + 1);
        }
    }

    #[test]
    fn matches_reference_on_random_shapes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (n, ic, oc) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let h = rng.random_range(3..9);
            let w_ = rng.random_range(3..9);
            let k = [1, 3][rng.random_range(0..2)];
            let s = rng.random_range(1..3);
            let p = rng.random_range(0..2);
            let x =
                Tensor4::from_vec([n, ic, h, w_], (0..n * ic * h * w_).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let w =
                Tensor4::from_vec([oc, ic, k, k], (0..oc * ic * k * k).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let b: Vec<f64> = (0..oc).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = conv2d_forward(&x, &w, &b, s, p).unwrap();
            let r = reference(&x, &w, &b, s, p);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor4::zeros([1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, &[0.0], 1, 1), Err(Error::Config(_))));
    }
}
