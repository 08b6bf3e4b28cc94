//! Stateless single-sample `C×H×W` operators and their exact backward passes.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(x: &Tensor<impl Scalar>, w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (in_c, in_h, in_w) = x.chw()?;
        let [out_c, wc, kh, kw] = w_shape[..] else {
            return Err(Error::shape(format!("conv weight must be O×C×kh×kw, got {w_shape:?}")));
        };
        if wc != in_c {
            return Err(Error::shape(format!("conv expects {wc} input channels, got {in_c}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be ≥ 1"));
        }
        if in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "{kh}×{kw} kernel does not fit {in_h}×{in_w} input with pad {pad}"
            )));
        }
        Ok(ConvGeom { in_c, in_h, in_w, out_c, kh, kw, stride, pad })
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unrolls input patches into a `(C·kh·kw) × (out_h·out_w)` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = vec![T::zero(); g.patch_len() * oh * ow];
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &x[(c * g.in_h + iy as usize) * g.in_w..];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut x = vec![T::zero(); g.in_c * g.in_h * g.in_w];
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = (c * g.in_h + iy as usize) * g.in_w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            x[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation `y = w ⋆ x + b` for a single `C×H×W` sample.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w.shape(), stride, pad)?;
    if let Some(b) = b {
        if b.shape() != [g.out_c] {
            return Err(Error::shape(format!("bias must be [{}], got {:?}", g.out_c, b.shape())));
        }
    }
    let cols = im2col(x.data(), &g);
    let (k, n) = (g.patch_len(), g.positions());
    let mut y = vec![T::zero(); g.out_c * n];
    if let Some(b) = b {
        for (o, &bv) in b.data().iter().enumerate() {
            y[o * n..(o + 1) * n].fill(bv);
        }
    }
    T::gemm(
        g.out_c, k, n,
        T::one(), w.data(), k as isize, 1,
        &cols, n as isize, 1,
        T::one(), &mut y, n as isize, 1,
    );
    Tensor::from_vec_unchecked(&[g.out_c, g.out_h(), g.out_w()], y)
}

/// Gradient of a convolution with respect to its input only (a transposed convolution).
pub fn conv2d_backward_input<T: Scalar>(
    grad_y: &Tensor<T>,
    w: &Tensor<T>,
    in_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(in_shape);
    let g = ConvGeom::new(&probe, w.shape(), stride, pad)?;
    check_grad_shape(grad_y, &g)?;
    let (k, n) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * n];
    T::gemm(
        k, g.out_c, n,
        T::one(), w.data(), 1, k as isize,
        grad_y.data(), n as isize, 1,
        T::zero(), &mut cols, n as isize, 1,
    );
    Tensor::from_vec_unchecked(in_shape, col2im(&cols, &g))
}

/// Gradient of a convolution with respect to its weights only.
pub fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    grad_y: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w_shape, stride, pad)?;
    check_grad_shape(grad_y, &g)?;
    let cols = im2col(x.data(), &g);
    let (k, n) = (g.patch_len(), g.positions());
    let mut gw = vec![T::zero(); g.out_c * k];
    T::gemm(
        g.out_c, n, k,
        T::one(), grad_y.data(), n as isize, 1,
        &cols, 1, n as isize,
        T::zero(), &mut gw, k as isize, 1,
    );
    Tensor::from_vec_unchecked(w_shape, gw)
}

fn check_grad_shape<T: Scalar>(grad_y: &Tensor<T>, g: &ConvGeom) -> Result<()> {
    if grad_y.shape() != [g.out_c, g.out_h(), g.out_w()] {
        return Err(Error::shape(format!(
            "conv output gradient {:?} vs expected [{}, {}, {}]",
            grad_y.shape(),
            g.out_c,
            g.out_h(),
            g.out_w()
        )));
    }
    Ok(())
}

/// Input, weight and bias gradients of [`conv2d_forward`].
pub struct ConvGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_y: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let gx = conv2d_backward_input(grad_y, w, x.shape(), stride, pad)?;
    let gw = conv2d_weight_grad(x, grad_y, w.shape(), stride, pad)?;
    let (oc, oh, ow) = grad_y.chw()?;
    let gb = (0..oc).map(|o| grad_y.data()[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum()).collect();
    Ok(ConvGrads { x: gx, w: gw, b: Tensor::from_vec_unchecked(&[oc], gb)? })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Backward of ReLU given the forward *input*; the derivative at 0 is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_y.zip_map(x, |g, v| if v > T::zero() { g } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    grad_y.zip_map(x, |g, v| if v > T::zero() { g } else { slope * g })
}

/// Sub-pixel rearrangement `C·r²×H×W → C×rH×rW`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (cin, h, w) = x.chw()?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::shape(format!("{cin} channels not divisible by r²={}", r * r)));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let plane = &src[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for xx in 0..w {
                        out[(ch * oh + y * r + i) * ow + xx * r + j] = plane[y * w + xx];
                    }
                }
            }
        }
    }
    Tensor::from_vec_unchecked(&[c, oh, ow], out)
}

/// Inverse permutation of [`pixel_shuffle`]; also its exact backward.
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, oh, ow) = y.chw()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(format!("{oh}×{ow} not divisible by r={r}")));
    }
    let (h, w) = (oh / r, ow / r);
    let mut out = vec![T::zero(); y.len()];
    let src = y.data();
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let plane = &mut out[((ch * r + i) * r + j) * h * w..][..h * w];
                for yy in 0..h {
                    for xx in 0..w {
                        plane[yy * w + xx] = src[(ch * oh + yy * r + i) * ow + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::from_vec_unchecked(&[c * r * r, h, w], out)
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("{h}×{w} not divisible by 2 for pooling")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let s = x.data();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xx;
                out[(ch * oh + y) * ow + xx] = (s[base] + s[base + 1] + s[base + w] + s[base + w + 1]) * quarter;
            }
        }
    }
    Tensor::from_vec_unchecked(&[c, oh, ow], out)
}

pub fn avg_pool2_backward<T: Scalar>(grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, oh, ow) = grad_y.chw()?;
    let (h, w) = (oh * 2, ow * 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * h + y) * w + xx] = grad_y.data()[(ch * oh + y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    Tensor::from_vec_unchecked(&[c, h, w], out)
}

/// Stacks two maps with equal spatial extents along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(format!("concat of {ha}×{wa} and {hb}×{wb} maps")));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec_unchecked(&[ca + cb, ha, wa], data)
}

/// Splits a channel-stacked gradient back into its `first`-channel head and the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = x.chw()?;
    if first > c {
        return Err(Error::shape(format!("cannot split {first} of {c} channels")));
    }
    let (head, tail) = x.data().split_at(first * h * w);
    Ok((
        Tensor::from_vec_unchecked(&[first, h, w], head.to_vec())?,
        Tensor::from_vec_unchecked(&[c - first, h, w], tail.to_vec())?,
    ))
}
