//! Dense rank-4 tensors (batch, channels, rows, cols) and the forward
//! numerical kernels used by the super-resolution graph.
//!
//! Every kernel is a pure function of its inputs. Precision is generic:
//! `f32` for inference/training, `f64` for gradient checks.

use crate::error::{Error, Result};

/// Element type a tensor can hold.
pub trait Scalar:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Copy
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Contiguous row-major rank-4 array. Element `(n, c, y, x)` lives at
/// index `((n*C + c)*H + y)*W + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: [usize; 4],
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::zero(); len],
        }
    }

    pub fn filled(shape: [usize; 4], v: E) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; len],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<E>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "all dimensions must be >= 1, got {shape:?}"
            )));
        }
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    pub fn data(&self) -> &[E] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: E) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: [usize; 4]) -> Result<Tensor<E>> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_precision<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
        }
    }

    /// Flip along the horizontal (width) axis.
    pub fn flip_w(&self) -> Tensor<E> {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros(self.shape);
        for bn in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.set(bn, ch, y, x, self.at(bn, ch, y, w - 1 - x));
                    }
                }
            }
        }
        out
    }

    /// Rotate the spatial plane by `k` quarter turns counter-clockwise.
    pub fn rot90(&self, k: usize) -> Tensor<E> {
        let k = k % 4;
        if k == 0 {
            return self.clone();
        }
        let [n, c, h, w] = self.shape;
        let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for bn in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (oy, ox) = match k {
                            1 => (w - 1 - x, y),
                            2 => (h - 1 - y, w - 1 - x),
                            _ => (x, h - 1 - y),
                        };
                        out.set(bn, ch, oy, ox, self.at(bn, ch, y, x));
                    }
                }
            }
        }
        out
    }
}

/// Convolution weights: kernel `(c_out, c_in, k_h, k_w)` plus a bias of
/// length `c_out`. For transposed convolution the kernel is laid out as
/// `(c_in, c_out, k_h, k_w)`.
#[derive(Clone, Debug)]
pub struct ConvWeights<E> {
    pub kernel: Tensor<E>,
    pub bias: Vec<E>,
}

impl<E: Scalar> ConvWeights<E> {
    pub fn new(kernel: Tensor<E>, bias: Vec<E>) -> Result<Self> {
        if bias.len() != kernel.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} does not match kernel dim0 {}",
                bias.len(),
                kernel.shape()[0]
            )));
        }
        Ok(ConvWeights { kernel, bias })
    }
}

pub(crate) fn conv2d_out_shape(
    x: [usize; 4],
    w: [usize; 4],
    pad: usize,
    stride: usize,
) -> Result<[usize; 4]> {
    let [n, c, h, wd] = x;
    let [co, ci, kh, kw] = w;
    if c != ci {
        return Err(Error::ChannelMismatch {
            expected: ci,
            got: c,
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let oh = (h + 2 * pad).checked_sub(kh).map(|v| v / stride + 1);
    let ow = (wd + 2 * pad).checked_sub(kw).map(|v| v / stride + 1);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok([n, co, oh, ow]),
        _ => Err(Error::ShapeMismatch(format!(
            "conv2d output dims non-positive for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}"
        ))),
    }
}

/// 2-D convolution with zero padding.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &[E],
    pad: usize,
    stride: usize,
) -> Result<Tensor<E>> {
    let oshape = conv2d_out_shape(x.shape(), kernel.shape(), pad, stride)?;
    let [n, co, oh, ow] = oshape;
    let [_, ci, kh, kw] = kernel.shape();
    let (h, w) = (x.height(), x.width());
    let mut out = Tensor::zeros(oshape);
    for bn in 0..n {
        for oc in 0..co {
            let b = if bias.is_empty() { E::zero() } else { bias[oc] };
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for ic in 0..ci {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.at(bn, ic, iy as usize, ix as usize)
                                    * kernel.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out.set(bn, oc, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` with respect to input, kernel, and bias.
pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    dy: &Tensor<E>,
    pad: usize,
    stride: usize,
) -> (Tensor<E>, Tensor<E>, Vec<E>) {
    let [n, co, oh, ow] = dy.shape();
    let [_, ci, kh, kw] = kernel.shape();
    let (h, w) = (x.height(), x.width());
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = vec![E::zero(); co];
    for bn in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.at(bn, oc, oy, ox);
                    db[oc] += g;
                    for ic in 0..ci {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = x.index(bn, ic, iy as usize, ix as usize);
                                let ki = kernel.index(oc, ic, ky, kx);
                                dx.data_mut()[xi] += g * kernel.data()[ki];
                                dk.data_mut()[ki] += g * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

pub(crate) fn conv_transpose2d_out_shape(
    x: [usize; 4],
    w: [usize; 4],
    stride: usize,
    pad: usize,
) -> Result<[usize; 4]> {
    let [n, c, h, wd] = x;
    let [ci, co, kh, kw] = w;
    if c != ci {
        return Err(Error::ChannelMismatch {
            expected: ci,
            got: c,
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
    let ow = ((wd - 1) * stride + kw).checked_sub(2 * pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok([n, co, oh, ow]),
        _ => Err(Error::ShapeMismatch(format!(
            "conv_transpose2d output dims non-positive for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}, stride {stride}"
        ))),
    }
}

/// Transposed 2-D convolution. Kernel layout is `(c_in, c_out, k_h, k_w)`.
/// With k=4, stride=2, pad=1 the spatial dims exactly double.
pub fn conv_transpose2d<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &[E],
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let oshape = conv_transpose2d_out_shape(x.shape(), kernel.shape(), stride, pad)?;
    let [n, co, oh, ow] = oshape;
    let [ci, _, kh, kw] = kernel.shape();
    let (h, w) = (x.height(), x.width());
    let mut out = Tensor::zeros(oshape);
    if !bias.is_empty() {
        for bn in 0..n {
            for oc in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.set(bn, oc, oy, ox, bias[oc]);
                    }
                }
            }
        }
    }
    for bn in 0..n {
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x.at(bn, ic, iy, ix);
                    for oc in 0..co {
                        for ky in 0..kh {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let oi = out.index(bn, oc, oy as usize, ox as usize);
                                out.data_mut()[oi] += v * kernel.at(ic, oc, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv_transpose2d` with respect to input, kernel, and bias.
pub fn conv_transpose2d_backward<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    dy: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> (Tensor<E>, Tensor<E>, Vec<E>) {
    let [n, co, oh, ow] = dy.shape();
    let [ci, _, kh, kw] = kernel.shape();
    let (h, w) = (x.height(), x.width());
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = vec![E::zero(); co];
    for bn in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    db[oc] += dy.at(bn, oc, oy, ox);
                }
            }
        }
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..w {
                    let xi = x.index(bn, ic, iy, ix);
                    let xv = x.data()[xi];
                    let mut acc = E::zero();
                    for oc in 0..co {
                        for ky in 0..kh {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let g = dy.at(bn, oc, oy as usize, ox as usize);
                                let ki = kernel.index(ic, oc, ky, kx);
                                acc += g * kernel.data()[ki];
                                dk.data_mut()[ki] += g * xv;
                            }
                        }
                    }
                    dx.data_mut()[xi] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}

/// Rearranges `(n, c, h, w)` to `(n, c/s^2, h*s, w*s)`:
/// output `(n, c, y*s+a, x*s+b)` = input `(n, c*s^2 + a*s + b, y, x)`.
pub fn pixel_shuffle<E: Scalar>(x: &Tensor<E>, s: usize) -> Result<Tensor<E>> {
    let [n, c, h, w] = x.shape();
    if s == 0 || c % (s * s) != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_shuffle: channels {c} not divisible by {s}^2"
        )));
    }
    let co = c / (s * s);
    let mut out = Tensor::zeros([n, co, h * s, w * s]);
    for bn in 0..n {
        for oc in 0..co {
            for y in 0..h {
                for x0 in 0..w {
                    for a in 0..s {
                        for b in 0..s {
                            let v = x.at(bn, oc * s * s + a * s + b, y, x0);
                            out.set(bn, oc, y * s + a, x0 * s + b, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of `pixel_shuffle`; used by its backward pass.
pub fn pixel_unshuffle<E: Scalar>(x: &Tensor<E>, s: usize) -> Result<Tensor<E>> {
    let [n, c, h, w] = x.shape();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_unshuffle: spatial dims {h}x{w} not divisible by {s}"
        )));
    }
    let mut out = Tensor::zeros([n, c * s * s, h / s, w / s]);
    for bn in 0..n {
        for ic in 0..c {
            for y in 0..h / s {
                for x0 in 0..w / s {
                    for a in 0..s {
                        for b in 0..s {
                            let v = x.at(bn, ic, y * s + a, x0 * s + b);
                            out.set(bn, ic * s * s + a * s + b, y, x0, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn relu<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

pub fn sigmoid<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::one() / (E::one() + (-v).exp()))
}

pub fn concat_channels<E: Scalar>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat of zero tensors".into()));
    }
    let [n, _, h, w] = parts[0].shape();
    let mut c_total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.shape();
        if pn != n || ph != h || pw != w {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels: part shape {:?} incompatible with {:?}",
                p.shape(),
                parts[0].shape()
            )));
        }
        c_total += pc;
    }
    let mut out = Tensor::zeros([n, c_total, h, w]);
    for bn in 0..n {
        let mut c_off = 0;
        for p in parts {
            let pc = p.channels();
            for ch in 0..pc {
                for y in 0..h {
                    for x in 0..w {
                        out.set(bn, c_off + ch, y, x, p.at(bn, ch, y, x));
                    }
                }
            }
            c_off += pc;
        }
    }
    Ok(out)
}

/// Splits a tensor back into channel ranges; inverse of `concat_channels`.
pub fn split_channels<E: Scalar>(x: &Tensor<E>, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
    let [n, c, h, w] = x.shape();
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch(format!(
            "split_channels: sizes sum {} != channels {}",
            sizes.iter().sum::<usize>(),
            c
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut c_off = 0;
    for &sz in sizes {
        let mut part = Tensor::zeros([n, sz, h, w]);
        for bn in 0..n {
            for ch in 0..sz {
                for y in 0..h {
                    for xi in 0..w {
                        part.set(bn, ch, y, xi, x.at(bn, c_off + ch, y, xi));
                    }
                }
            }
        }
        out.push(part);
        c_off += sz;
    }
    Ok(out)
}

fn check_same_shape<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn ew_add<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape(a, b, "ew_add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn ew_sub<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape(a, b, "ew_sub")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn ew_mul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape(a, b, "ew_mul")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Batched matrix multiply over tensors shaped `(n, 1, r, k)` x `(n, 1, k, c)`.
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let [an, ac, r, k] = a.shape();
    let [bn, bc, k2, c] = b.shape();
    if an != bn || ac != 1 || bc != 1 || k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros([an, 1, r, c]);
    for bn0 in 0..an {
        for i in 0..r {
            for kk in 0..k {
                let av = a.at(bn0, 0, i, kk);
                if av == E::zero() {
                    continue;
                }
                for j in 0..c {
                    let oi = out.index(bn0, 0, i, j);
                    out.data_mut()[oi] += av * b.at(bn0, 0, kk, j);
                }
            }
        }
    }
    Ok(out)
}

/// Batched matrix transpose over tensors shaped `(n, 1, r, c)`.
pub fn transpose_mat<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let [n, c1, r, c] = x.shape();
    if c1 != 1 {
        return Err(Error::ShapeMismatch(format!(
            "transpose_mat expects (n,1,r,c), got {:?}",
            x.shape()
        )));
    }
    let mut out = Tensor::zeros([n, 1, c, r]);
    for bn in 0..n {
        for i in 0..r {
            for j in 0..c {
                out.set(bn, 0, j, i, x.at(bn, 0, i, j));
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax over the last axis, stabilized by row-max subtraction.
pub fn softmax_rows<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let [n, c, r, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    for bn in 0..n {
        for ch in 0..c {
            for i in 0..r {
                let mut mx = x.at(bn, ch, i, 0);
                for j in 1..w {
                    mx = mx.max(x.at(bn, ch, i, j));
                }
                let mut sum = E::zero();
                for j in 0..w {
                    let e = (x.at(bn, ch, i, j) - mx).exp();
                    out.set(bn, ch, i, j, e);
                    sum += e;
                }
                for j in 0..w {
                    let oi = out.index(bn, ch, i, j);
                    out.data_mut()[oi] = out.data()[oi] / sum;
                }
            }
        }
    }
    out
}

/// Catmull-Rom cubic kernel, a = -0.5.
fn cubic_kernel(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resize by a rational factor `scale_num / scale_den` using the
/// Catmull-Rom kernel (a = -0.5), edge-clamped sampling, and half-pixel
/// center mapping: `src = (dst + 0.5) * ratio - 0.5`.
pub fn bicubic_resize<E: Scalar>(
    img: &Tensor<E>,
    scale_num: usize,
    scale_den: usize,
) -> Result<Tensor<E>> {
    let [n, c, h, w] = img.shape();
    if scale_num == 0 || scale_den == 0 {
        return Err(Error::InvalidArgument("zero scale factor".into()));
    }
    let oh = h * scale_num / scale_den;
    let ow = w * scale_num / scale_den;
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument(format!(
            "bicubic_resize: target dims {oh}x{ow} must be >= 1"
        )));
    }
    let ratio_y = h as f64 / oh as f64;
    let ratio_x = w as f64 / ow as f64;
    // Per-axis taps: (clamped index, normalized weight) quadruples.
    let taps = |out_len: usize, in_len: usize, ratio: f64| -> Vec<[(usize, f64); 4]> {
        (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) * ratio - 0.5;
                let base = src.floor();
                let frac = src - base;
                let mut t = [(0usize, 0f64); 4];
                let mut sum = 0.0;
                for (i, slot) in t.iter_mut().enumerate() {
                    let idx = base as isize + i as isize - 1;
                    let wgt = cubic_kernel(frac - (i as f64 - 1.0));
                    let clamped = idx.clamp(0, in_len as isize - 1) as usize;
                    *slot = (clamped, wgt);
                    sum += wgt;
                }
                for slot in t.iter_mut() {
                    slot.1 /= sum;
                }
                t
            })
            .collect()
    };
    let ty = taps(oh, h, ratio_y);
    let tx = taps(ow, w, ratio_x);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for bn in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for &(iy, wy) in &ty[oy] {
                        for &(ix, wx) in &tx[ox] {
                            acc += wy * wx * img.at(bn, ch, iy, ix).to_f64();
                        }
                    }
                    out.set(bn, ch, oy, ox, E::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}
