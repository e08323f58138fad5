//! Interpolation and convolution kernels: half-pixel bilinear resize, 1×1
//! convolution, dynamic 1D convolution over token/hidden grids and its
//! depthwise/pointwise split, and per-pixel dynamic mask convolution.

use crate::count;
use crate::error::{Error, Result};
use crate::tensor::{matmul, Element, Tensor};

/// Source sampling for one output axis: lower index, upper index, and the
/// fractional distance from the lower sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSample {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-center sample positions for resizing `input` to `output` cells,
/// clamped to the valid source range.
pub fn axis_samples(input: usize, output: usize) -> Vec<AxisSample> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            AxisSample {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of a `c×h×w` map to `c×out_h×out_w`.
///
/// Each output is `Σ w_ab · v_ab` over the four neighbours, weights
/// `(1-fy)(1-fx), (1-fy)fx, fy(1-fx), fy·fx`. Same-size resizes are the
/// identity bit-for-bit.
pub fn bilinear_resize<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("bilinear_resize input")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "bilinear_resize output extent {out_h}x{out_w} must be positive"
        )));
    }
    let rows = axis_samples(h, out_h);
    let cols = axis_samples(w, out_w);
    let src = x.as_slice();
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for plane in src.chunks_exact(h * w) {
        for ry in &rows {
            let fy = T::of(ry.frac);
            let gy = T::one() - fy;
            let top = &plane[ry.lo * w..(ry.lo + 1) * w];
            let bot = &plane[ry.hi * w..(ry.hi + 1) * w];
            for cx in &cols {
                let fx = T::of(cx.frac);
                let gx = T::one() - fx;
                let v = gy * gx * top[cx.lo]
                    + gy * fx * top[cx.hi]
                    + fy * gx * bot[cx.lo]
                    + fy * fx * bot[cx.hi];
                data.push(v);
            }
        }
    }
    count::interp((c * out_h * out_w) as u128);
    Ok(Tensor::from_parts(vec![c, out_h, out_w], data))
}

/// 1×1 convolution weights: `kernel` is `out_ch × in_ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Weights<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> Conv1x1Weights<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let (out_ch, _) = kernel.dims2("1x1 kernel")?;
        kernel.ensure_finite("1x1 kernel")?;
        if let Some(b) = &bias {
            if b.shape() != [out_ch] {
                return Err(Error::shape(format!(
                    "bias shape {:?} does not match {out_ch} output channels",
                    b.shape()
                )));
            }
            b.ensure_finite("1x1 bias")?;
        }
        Ok(Self { kernel, bias })
    }

    pub fn without_bias(kernel: Tensor<T>) -> Result<Self> {
        Self::new(kernel, None)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
}

/// Adds a per-channel bias to a `c×h×w` map. Not tallied as work.
pub fn add_channel_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("bias target")?;
    if bias.shape() != [c] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match {c} channels",
            bias.shape()
        )));
    }
    let mut data = x.as_slice().to_vec();
    for (plane, &b) in data.chunks_exact_mut(h * w).zip(bias.as_slice()) {
        for v in plane {
            *v = *v + b;
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], data))
}

/// 1×1 convolution: per-pixel `kernel · x[:, y, x] + bias`.
pub fn conv1x1<T: Element>(x: &Tensor<T>, w: &Conv1x1Weights<T>) -> Result<Tensor<T>> {
    let (c, h, wd) = x.dims3("conv1x1 input")?;
    if w.in_channels() != c {
        return Err(Error::shape(format!(
            "conv1x1 kernel expects {} input channels, map has {c}",
            w.in_channels()
        )));
    }
    let flat = matmul(&w.kernel, &x.reshape(vec![c, h * wd])?)?;
    let out = flat.reshape(vec![w.out_channels(), h, wd])?;
    match &w.bias {
        Some(b) => add_channel_bias(&out, b),
        None => Ok(out),
    }
}

fn check_taps(t: usize) -> Result<()> {
    if t % 2 == 0 {
        return Err(Error::invalid(format!("kernel tap count {t} must be odd")));
    }
    Ok(())
}

/// Zero-pads each row of an `n×d` tensor by `pad` on both sides.
fn pad_rows<T: Element>(v: &[T], n: usize, d: usize, pad: usize) -> Vec<T> {
    let width = d + 2 * pad;
    let mut out = vec![T::zero(); n * width];
    for (src, dst) in v.chunks_exact(d).zip(out.chunks_exact_mut(width)) {
        dst[pad..pad + d].copy_from_slice(src);
    }
    out
}

/// Dynamic 1D convolution with a full `n×n×t` kernel:
/// `O[i,j] = Σ_p Σ_q K[i,p,q] · Vpad[p, j+q]`, where `Vpad` is `v` with
/// `(t-1)/2` zeros on each side of the hidden axis.
pub fn dyconv1d<T: Element>(v: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = v.dims2("dyconv1d input")?;
    let (kn, kp, t) = k.dims3("dyconv1d kernel")?;
    if kn != n || kp != n {
        return Err(Error::shape(format!(
            "dyconv1d kernel {kn}x{kp}x{t} does not match {n} tokens"
        )));
    }
    check_taps(t)?;
    let pad = (t - 1) / 2;
    let width = d + 2 * pad;
    let vpad = pad_rows(v.as_slice(), n, d, pad);
    let kd = k.as_slice();
    let mut out = vec![T::zero(); n * d];
    for (i, row) in out.chunks_exact_mut(d).enumerate() {
        for p in 0..n {
            let src = &vpad[p * width..(p + 1) * width];
            for q in 0..t {
                let kv = kd[(i * n + p) * t + q];
                for (o, &s) in row.iter_mut().zip(&src[q..q + d]) {
                    *o = *o + kv * s;
                }
            }
        }
    }
    count::macs((n * n * t * d) as u128);
    Ok(Tensor::from_parts(vec![n, d], out))
}

/// Depthwise dynamic 1D convolution, `k` is `n×1×t`:
/// `O[i,j] = Σ_q k[i,0,q] · Vpad[i, j+q]`. Tokens do not mix.
pub fn dyconv1d_depthwise<T: Element>(v: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = v.dims2("depthwise input")?;
    let (kn, one, t) = k.dims3("depthwise kernel")?;
    if kn != n || one != 1 {
        return Err(Error::shape(format!(
            "depthwise kernel {kn}x{one}x{t} does not match {n} tokens"
        )));
    }
    check_taps(t)?;
    let pad = (t - 1) / 2;
    let width = d + 2 * pad;
    let vpad = pad_rows(v.as_slice(), n, d, pad);
    let kd = k.as_slice();
    let mut out = vec![T::zero(); n * d];
    for (i, row) in out.chunks_exact_mut(d).enumerate() {
        let src = &vpad[i * width..(i + 1) * width];
        for q in 0..t {
            let kv = kd[i * t + q];
            for (o, &s) in row.iter_mut().zip(&src[q..q + d]) {
                *o = *o + kv * s;
            }
        }
    }
    count::macs((n * d * t) as u128);
    Ok(Tensor::from_parts(vec![n, d], out))
}

/// Pointwise dynamic 1D convolution, `k` is `n×n×1`: token mixing
/// `O = K' · v` with `K'[i,p] = k[i,p,0]`.
pub fn dyconv1d_pointwise<T: Element>(v: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _) = v.dims2("pointwise input")?;
    let (kn, kp, one) = k.dims3("pointwise kernel")?;
    if kn != n || kp != n || one != 1 {
        return Err(Error::shape(format!(
            "pointwise kernel {kn}x{kp}x{one} does not match {n} tokens"
        )));
    }
    matmul(&k.reshape(vec![n, n])?, v)
}

/// Per-pixel dot product of each `d`-dim kernel with the feature column:
/// `s` is `d×h×w`, `kernels` is `n×d`, output `n×h×w`.
pub fn dyconv2d_masks<T: Element>(s: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, h, w) = s.dims3("mask feature map")?;
    let (n, kd) = kernels.dims2("mask kernels")?;
    if kd != d {
        return Err(Error::shape(format!(
            "mask kernels have {kd} channels, feature map has {d}"
        )));
    }
    matmul(kernels, &s.reshape(vec![d, h * w])?)?.reshape(vec![n, h, w])
}

/// A dynamic 1D convolution kernel in either full or separable form.
#[derive(Debug, Clone, PartialEq)]
pub enum DynKernel1D<T> {
    /// `n×n×t`.
    Full(Tensor<T>),
    /// `n×1×t` depthwise taps followed by `n×n×1` token mixing.
    Separable {
        depthwise: Tensor<T>,
        pointwise: Tensor<T>,
    },
}

impl<T: Element> DynKernel1D<T> {
    pub fn full(k: Tensor<T>) -> Result<Self> {
        let (n, p, t) = k.dims3("full kernel")?;
        if n != p {
            return Err(Error::shape(format!("full kernel {n}x{p}x{t} is not square")));
        }
        check_taps(t)?;
        Ok(Self::Full(k))
    }

    pub fn separable(depthwise: Tensor<T>, pointwise: Tensor<T>) -> Result<Self> {
        let (n, one, t) = depthwise.dims3("depthwise kernel")?;
        let (pn, pp, pone) = pointwise.dims3("pointwise kernel")?;
        if one != 1 || pone != 1 || pn != n || pp != n {
            return Err(Error::shape(format!(
                "separable kernel shapes {:?} / {:?} are inconsistent",
                depthwise.shape(),
                pointwise.shape()
            )));
        }
        check_taps(t)?;
        Ok(Self::Separable { depthwise, pointwise })
    }

    pub fn taps(&self) -> usize {
        match self {
            Self::Full(k) => k.shape()[2],
            Self::Separable { depthwise, .. } => depthwise.shape()[2],
        }
    }

    /// Depthwise first, then pointwise for the separable form.
    pub fn apply(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Self::Full(k) => dyconv1d(v, k),
            Self::Separable { depthwise, pointwise } => {
                dyconv1d_pointwise(&dyconv1d_depthwise(v, depthwise)?, pointwise)
            }
        }
    }
}
