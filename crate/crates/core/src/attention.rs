//! Cross-attention modules that refine `n` kernel tokens `Q` against `n`
//! masked feature tokens `V` (both `n×d`).
//!
//! * `mhca`: `t`-head cross-attention with `1/sqrt(d)` scaling and an output
//!   projection.
//! * `dca`: dynamic convolution, with `Q·W` reshaped to an `n×n×t` kernel and
//!   applied to `V` as a 1D convolution over the hidden axis.
//! * `sdca`: separable dynamic convolution, with depthwise `n×1×t` taps from
//!   `Q·Wd`, then pointwise `n×n×1` token mixing from `Q·Wp`.
//! * `pdca` / `ddca`: the pointwise-only and depthwise-only halves of `sdca`.
//!
//! Every variant implements [`CrossAttention`] and is constructed by name
//! through [`attention_registry`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{dyconv1d, dyconv1d_depthwise, dyconv1d_pointwise};
use crate::registry::Registry;
use crate::rng::{rand_uniform, Rng};
use crate::tensor::{matmul, softmax_rows, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    Mhca,
    Dca,
    Sdca,
    Pdca,
    Ddca,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [Self::Mhca, Self::Dca, Self::Sdca, Self::Pdca, Self::Ddca];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mhca => "mhca",
            Self::Dca => "dca",
            Self::Sdca => "sdca",
            Self::Pdca => "pdca",
            Self::Ddca => "ddca",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "attention variant",
                name: s.to_string(),
            })
    }
}

/// Token count, hidden width and kernel size (head count for MHCA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionDims {
    pub n: usize,
    pub d: usize,
    pub t: usize,
}

impl AttentionDims {
    pub fn new(n: usize, d: usize, t: usize) -> Result<Self> {
        if n == 0 || d == 0 || t == 0 {
            return Err(Error::invalid(format!(
                "attention dims n={n} d={d} t={t} must be positive"
            )));
        }
        Ok(Self { n, d, t })
    }
}

pub type TensorMap<T> = BTreeMap<String, Tensor<T>>;

/// A cross-attention strategy over `(Q, V)`.
pub trait CrossAttention<T: Element>: Send + Sync + fmt::Debug {
    fn variant(&self) -> AttentionVariant;

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>>;

    /// Named weight tensors, for serialization.
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)>;
}

fn expect_shape<T: Element>(t: &Tensor<T>, name: &str, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    t.ensure_finite(name)
}

fn check_tokens<T: Element>(q: &Tensor<T>, v: &Tensor<T>, d: usize) -> Result<usize> {
    let (n, qd) = q.dims2("query kernels")?;
    let (vn, vd) = v.dims2("value tokens")?;
    if qd != d || vd != d {
        return Err(Error::shape(format!(
            "query/value widths {qd}/{vd} do not match projection width {d}"
        )));
    }
    if vn != n {
        return Err(Error::shape(format!(
            "query has {n} tokens but values have {vn}"
        )));
    }
    Ok(n)
}

fn take<T>(map: &mut TensorMap<T>, name: &str) -> Result<Tensor<T>> {
    map.remove(name)
        .ok_or_else(|| Error::Format(format!("missing weight tensor `{name}`")))
}

fn init<T: Element>(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let bound = T::of(1.0 / (rows as f64).sqrt());
    rand_uniform(rng, vec![rows, cols], -bound, bound)
}

/// Multi-head cross-attention:
/// `H_i = softmax(Q·Wq_i (V·Wk_i)^T / sqrt(d)) · V·Wv_i`, output
/// `concat(H_1..H_t) · Wo`. Head `i` owns columns `[i·d/t, (i+1)·d/t)` of
/// each `d×d` projection (floor division, so `d` need not divide evenly).
pub fn mhca<T: Element>(
    q: &Tensor<T>,
    v: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wo: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (_, d) = wq.dims2("Wq")?;
    if heads == 0 || heads > d {
        return Err(Error::invalid(format!(
            "{heads} heads cannot partition hidden width {d}"
        )));
    }
    for (t, name) in [(wq, "Wq"), (wk, "Wk"), (wv, "Wv"), (wo, "Wo")] {
        expect_shape(t, name, &[d, d])?;
    }
    let (_, qd) = q.dims2("query tokens")?;
    let (_, vd) = v.dims2("value tokens")?;
    if qd != d || vd != d {
        return Err(Error::shape(format!(
            "query/value widths {qd}/{vd} do not match projection width {d}"
        )));
    }
    let scale = T::one() / T::of(d as f64).sqrt();
    let qp = matmul(q, wq)?;
    let kp = matmul(v, wk)?;
    let vp = matmul(v, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * d / heads, (h + 1) * d / heads);
        let scores = matmul(&qp.columns(lo, hi)?, &kp.columns(lo, hi)?.transpose()?)?;
        let attn = softmax_rows(&scores.scale(scale))?;
        outs.push(matmul(&attn, &vp.columns(lo, hi)?)?);
    }
    let refs: Vec<&Tensor<T>> = outs.iter().collect();
    matmul(&Tensor::hcat(&refs)?, wo)
}

/// Dynamic convolution attention: `dyconv1d(V, reshape(Q·W, (n, n, t)))`.
pub fn dca<T: Element>(q: &Tensor<T>, v: &Tensor<T>, w: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let (d, width) = w.dims2("W")?;
    let n = check_tokens(q, v, d)?;
    if width != n * t {
        return Err(Error::shape(format!(
            "W width {width} is not n·t = {n}·{t}"
        )));
    }
    let k = matmul(q, w)?.reshape(vec![n, n, t])?;
    dyconv1d(v, &k)
}

fn depthwise_kernels<T: Element>(q: &Tensor<T>, wd: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let (_, t) = wd.dims2("Wd")?;
    matmul(q, wd)?.reshape(vec![n, 1, t])
}

fn pointwise_kernels<T: Element>(q: &Tensor<T>, wp: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let (_, width) = wp.dims2("Wp")?;
    if width != n {
        return Err(Error::shape(format!("Wp width {width} is not n = {n}")));
    }
    matmul(q, wp)?.reshape(vec![n, n, 1])
}

/// Separable dynamic convolution attention: depthwise taps from `Q·Wd`
/// applied first, then pointwise token mixing from `Q·Wp`.
pub fn sdca<T: Element>(q: &Tensor<T>, v: &Tensor<T>, wd: &Tensor<T>, wp: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, _) = wd.dims2("Wd")?;
    let n = check_tokens(q, v, d)?;
    if wp.shape()[0] != d {
        return Err(Error::shape(format!("Wp has {} rows, expected {d}", wp.shape()[0])));
    }
    let kd = depthwise_kernels(q, wd, n)?;
    let kp = pointwise_kernels(q, wp, n)?;
    dyconv1d_pointwise(&dyconv1d_depthwise(v, &kd)?, &kp)
}

/// Pointwise-only branch of [`sdca`].
pub fn pdca<T: Element>(q: &Tensor<T>, v: &Tensor<T>, wp: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, _) = wp.dims2("Wp")?;
    let n = check_tokens(q, v, d)?;
    dyconv1d_pointwise(v, &pointwise_kernels(q, wp, n)?)
}

/// Depthwise-only branch of [`sdca`].
pub fn ddca<T: Element>(q: &Tensor<T>, v: &Tensor<T>, wd: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, _) = wd.dims2("Wd")?;
    let n = check_tokens(q, v, d)?;
    dyconv1d_depthwise(v, &depthwise_kernels(q, wd, n)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mhca<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub heads: usize,
}

impl<T: Element> Mhca<T> {
    pub fn new(wq: Tensor<T>, wk: Tensor<T>, wv: Tensor<T>, wo: Tensor<T>, heads: usize) -> Result<Self> {
        let (d, _) = wq.dims2("Wq")?;
        if heads == 0 || heads > d {
            return Err(Error::invalid(format!(
                "{heads} heads cannot partition hidden width {d}"
            )));
        }
        for (t, name) in [(&wq, "Wq"), (&wk, "Wk"), (&wv, "Wv"), (&wo, "Wo")] {
            expect_shape(t, name, &[d, d])?;
        }
        Ok(Self { wq, wk, wv, wo, heads })
    }

    pub fn random(dims: &AttentionDims, rng: &mut Rng) -> Result<Self> {
        let d = dims.d;
        Self::new(init(rng, d, d)?, init(rng, d, d)?, init(rng, d, d)?, init(rng, d, d)?, dims.t)
    }
}

impl<T: Element> CrossAttention<T> for Mhca<T> {
    fn variant(&self) -> AttentionVariant {
        AttentionVariant::Mhca
    }

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        mhca(q, v, &self.wq, &self.wk, &self.wv, &self.wo, self.heads)
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dca<T> {
    pub w: Tensor<T>,
    pub taps: usize,
}

impl<T: Element> Dca<T> {
    pub fn new(w: Tensor<T>, taps: usize) -> Result<Self> {
        let (_, width) = w.dims2("W")?;
        if taps % 2 == 0 || width % taps != 0 {
            return Err(Error::invalid(format!(
                "W width {width} with {taps} taps: taps must be odd and divide the width"
            )));
        }
        w.ensure_finite("W")?;
        Ok(Self { w, taps })
    }

    pub fn random(dims: &AttentionDims, rng: &mut Rng) -> Result<Self> {
        Self::new(init(rng, dims.d, dims.n * dims.t)?, dims.t)
    }
}

impl<T: Element> CrossAttention<T> for Dca<T> {
    fn variant(&self) -> AttentionVariant {
        AttentionVariant::Dca
    }

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        dca(q, v, &self.w, self.taps)
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("w", &self.w)]
    }
}

fn check_taps_tensor<T: Element>(wd: &Tensor<T>) -> Result<()> {
    let (_, t) = wd.dims2("Wd")?;
    if t % 2 == 0 {
        return Err(Error::invalid(format!("Wd width {t} must be odd")));
    }
    wd.ensure_finite("Wd")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sdca<T> {
    pub wd: Tensor<T>,
    pub wp: Tensor<T>,
}

impl<T: Element> Sdca<T> {
    pub fn new(wd: Tensor<T>, wp: Tensor<T>) -> Result<Self> {
        check_taps_tensor(&wd)?;
        let (d, _) = wp.dims2("Wp")?;
        if d != wd.shape()[0] {
            return Err(Error::shape("Wd and Wp row counts differ"));
        }
        wp.ensure_finite("Wp")?;
        Ok(Self { wd, wp })
    }

    pub fn random(dims: &AttentionDims, rng: &mut Rng) -> Result<Self> {
        Self::new(init(rng, dims.d, dims.t)?, init(rng, dims.d, dims.n)?)
    }
}

impl<T: Element> CrossAttention<T> for Sdca<T> {
    fn variant(&self) -> AttentionVariant {
        AttentionVariant::Sdca
    }

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        sdca(q, v, &self.wd, &self.wp)
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("wd", &self.wd), ("wp", &self.wp)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pdca<T> {
    pub wp: Tensor<T>,
}

impl<T: Element> Pdca<T> {
    pub fn new(wp: Tensor<T>) -> Result<Self> {
        wp.dims2("Wp")?;
        wp.ensure_finite("Wp")?;
        Ok(Self { wp })
    }

    pub fn random(dims: &AttentionDims, rng: &mut Rng) -> Result<Self> {
        Self::new(init(rng, dims.d, dims.n)?)
    }
}

impl<T: Element> CrossAttention<T> for Pdca<T> {
    fn variant(&self) -> AttentionVariant {
        AttentionVariant::Pdca
    }

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        pdca(q, v, &self.wp)
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("wp", &self.wp)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ddca<T> {
    pub wd: Tensor<T>,
}

impl<T: Element> Ddca<T> {
    pub fn new(wd: Tensor<T>) -> Result<Self> {
        check_taps_tensor(&wd)?;
        Ok(Self { wd })
    }

    pub fn random(dims: &AttentionDims, rng: &mut Rng) -> Result<Self> {
        Self::new(init(rng, dims.d, dims.t)?)
    }
}

impl<T: Element> CrossAttention<T> for Ddca<T> {
    fn variant(&self) -> AttentionVariant {
        AttentionVariant::Ddca
    }

    fn forward(&self, q: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        ddca(q, v, &self.wd)
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("wd", &self.wd)]
    }
}

/// Constructors for one registered attention variant.
pub struct AttentionEntry<T> {
    pub variant: AttentionVariant,
    pub random: fn(&AttentionDims, &mut Rng) -> Result<Box<dyn CrossAttention<T>>>,
    pub from_tensors: fn(&AttentionDims, &mut TensorMap<T>) -> Result<Box<dyn CrossAttention<T>>>,
}

impl<T> fmt::Debug for AttentionEntry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttentionEntry").field("variant", &self.variant).finish()
    }
}

pub fn attention_registry<T: Element>() -> Registry<AttentionEntry<T>> {
    let mut r = Registry::new("attention variant");
    r.register(
        "mhca",
        AttentionEntry {
            variant: AttentionVariant::Mhca,
            random: |dims, rng| Ok(Box::new(Mhca::<T>::random(dims, rng)?)),
            from_tensors: |dims, m| {
                Ok(Box::new(Mhca::new(
                    take(m, "wq")?,
                    take(m, "wk")?,
                    take(m, "wv")?,
                    take(m, "wo")?,
                    dims.t,
                )?))
            },
        },
    );
    r.register(
        "dca",
        AttentionEntry {
            variant: AttentionVariant::Dca,
            random: |dims, rng| Ok(Box::new(Dca::<T>::random(dims, rng)?)),
            from_tensors: |dims, m| Ok(Box::new(Dca::new(take(m, "w")?, dims.t)?)),
        },
    );
    r.register(
        "sdca",
        AttentionEntry {
            variant: AttentionVariant::Sdca,
            random: |dims, rng| Ok(Box::new(Sdca::<T>::random(dims, rng)?)),
            from_tensors: |_, m| Ok(Box::new(Sdca::new(take(m, "wd")?, take(m, "wp")?)?)),
        },
    );
    r.register(
        "pdca",
        AttentionEntry {
            variant: AttentionVariant::Pdca,
            random: |dims, rng| Ok(Box::new(Pdca::<T>::random(dims, rng)?)),
            from_tensors: |_, m| Ok(Box::new(Pdca::new(take(m, "wp")?)?)),
        },
    );
    r.register(
        "ddca",
        AttentionEntry {
            variant: AttentionVariant::Ddca,
            random: |dims, rng| Ok(Box::new(Ddca::<T>::random(dims, rng)?)),
            from_tensors: |_, m| Ok(Box::new(Ddca::new(take(m, "wd")?)?)),
        },
    );
    r
}

/// Randomly initialised attention module of the named variant.
pub fn random_attention<T: Element>(
    name: &str,
    dims: &AttentionDims,
    rng: &mut Rng,
) -> Result<Box<dyn CrossAttention<T>>> {
    (attention_registry::<T>().get(name)?.random)(dims, rng)
}
