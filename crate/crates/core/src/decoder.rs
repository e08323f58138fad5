//! Kernel decoder: pre-attention pooling, a stack of cross-attention blocks,
//! post-attention (self-attention + feed-forward), iterated over stages, and
//! the final mask/class heads.
//!
//! One stage maps proposal kernels `Q (n×d)` to refined kernels:
//!
//! ```text
//! V  = pre_attention(S, Q)
//! Q' = block_N(... block_1(Q, V) ..., V)
//! Q  = post_attention(Q')
//! ```
//!
//! All weights are shared across stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_registry, AttentionDims, AttentionVariant, CrossAttention, TensorMap};
use crate::error::{Error, Result};
use crate::fixture;
use crate::kernels::dyconv2d_masks;
use crate::rng::{rand_uniform, Rng};
use crate::tensor::{matmul, softmax_rows, Element, Tensor};

/// `n` kernel vectors of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet<T> {
    kernels: Tensor<T>,
}

impl<T: Element> KernelSet<T> {
    pub fn new(kernels: Tensor<T>) -> Result<Self> {
        kernels.dims2("kernel set")?;
        kernels.ensure_finite("kernel set")?;
        Ok(Self { kernels })
    }

    pub fn random(rng: &mut Rng, n: usize, d: usize) -> Result<Self> {
        Self::new(rand_uniform(rng, vec![n, d], T::of(-1.0), T::one())?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.kernels.shape()[1]
    }
}

fn default_variants() -> Vec<AttentionVariant> {
    vec![AttentionVariant::Sdca; 2]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Proposal count.
    pub n: usize,
    /// Hidden width.
    pub d: usize,
    /// Kernel size of the convolutional variants; head count for MHCA blocks.
    pub t: usize,
    /// Attention blocks per stage.
    pub blocks: usize,
    /// Refinement stages.
    pub stages: usize,
    /// Self-attention heads in post-attention.
    pub heads: usize,
    pub ffn_hidden: usize,
    pub classes: usize,
    /// Variant of each attention block; length must equal `blocks`.
    pub variants: Vec<AttentionVariant>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 256,
            t: 3,
            blocks: 2,
            stages: 2,
            heads: 8,
            ffn_hidden: 2048,
            classes: 133,
            variants: default_variants(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n", self.n),
            ("d", self.d),
            ("t", self.t),
            ("blocks", self.blocks),
            ("stages", self.stages),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("decoder config `{name}` must be positive")));
        }
        if self.t % 2 == 0 {
            return Err(Error::invalid(format!("kernel size t={} must be odd", self.t)));
        }
        if self.d % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d={} is not divisible by {} post-attention heads",
                self.d, self.heads
            )));
        }
        if self.variants.len() != self.blocks {
            return Err(Error::invalid(format!(
                "{} attention variants listed for {} blocks",
                self.variants.len(),
                self.blocks
            )));
        }
        if self.variants.contains(&AttentionVariant::Mhca) && self.t > self.d {
            return Err(Error::invalid(format!(
                "MHCA block needs d={} at least t={}",
                self.d, self.t
            )));
        }
        Ok(())
    }

    pub fn attention_dims(&self) -> AttentionDims {
        AttentionDims {
            n: self.n,
            d: self.d,
            t: self.t,
        }
    }
}

/// Hard sigmoid `clamp(x/6 + 1/2, 0, 1)`.
pub fn hard_sigmoid<T: Element>(x: T) -> T {
    (x / T::of(6.0) + T::of(0.5)).max(T::zero()).min(T::one())
}

fn binarize<T: Element>(x: &Tensor<T>, activate: impl Fn(T) -> T) -> Tensor<T> {
    let half = T::of(0.5);
    x.map(|v| if activate(v) >= half { T::one() } else { T::zero() })
}

/// Masked feature pooling. Attention maps `A = S * Q` are hard-sigmoided and
/// thresholded at 0.5 (inclusive), then `V = r(A) · r(S)^T`: for each
/// proposal, the unnormalized sum of feature columns over activated pixels.
pub fn pre_attention<T: Element>(s: &Tensor<T>, q: &KernelSet<T>) -> Result<Tensor<T>> {
    let (d, h, w) = s.dims3("feature map")?;
    let maps = dyconv2d_masks(s, q.tensor())?;
    let active = binarize(&maps, hard_sigmoid).reshape(vec![q.len(), h * w])?;
    matmul(&active, &s.reshape(vec![d, h * w])?.transpose()?)
}

/// Weights of the post-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct PostAttentionWeights<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub norm1_gamma: Tensor<T>,
    pub norm1_beta: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
    pub norm2_gamma: Tensor<T>,
    pub norm2_beta: Tensor<T>,
}

const POST_NAMES: [&str; 12] = [
    "wq", "wk", "wv", "wo", "norm1_gamma", "norm1_beta", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
    "norm2_gamma", "norm2_beta",
];

impl<T: Element> PostAttentionWeights<T> {
    pub fn random(rng: &mut Rng, d: usize, ffn: usize) -> Result<Self> {
        let mut mat = |rows: usize, cols: usize| {
            let b = T::of(1.0 / (rows as f64).sqrt());
            rand_uniform(rng, vec![rows, cols], -b, b)
        };
        Ok(Self {
            wq: mat(d, d)?,
            wk: mat(d, d)?,
            wv: mat(d, d)?,
            wo: mat(d, d)?,
            norm1_gamma: Tensor::full(vec![d], T::one())?,
            norm1_beta: Tensor::zeros(vec![d])?,
            ffn_w1: mat(d, ffn)?,
            ffn_b1: Tensor::zeros(vec![ffn])?,
            ffn_w2: mat(ffn, d)?,
            ffn_b2: Tensor::zeros(vec![d])?,
            norm2_gamma: Tensor::full(vec![d], T::one())?,
            norm2_beta: Tensor::zeros(vec![d])?,
        })
    }

    fn tensors(&self) -> [&Tensor<T>; 12] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.norm1_gamma,
            &self.norm1_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.norm2_gamma,
            &self.norm2_beta,
        ]
    }

    fn from_map(m: &mut TensorMap<T>) -> Result<Self> {
        let mut take = |k: &str| {
            m.remove(k)
                .ok_or_else(|| Error::Format(format!("missing post-attention tensor `{k}`")))
        };
        Ok(Self {
            wq: take("wq")?,
            wk: take("wk")?,
            wv: take("wv")?,
            wo: take("wo")?,
            norm1_gamma: take("norm1_gamma")?,
            norm1_beta: take("norm1_beta")?,
            ffn_w1: take("ffn_w1")?,
            ffn_b1: take("ffn_b1")?,
            ffn_w2: take("ffn_w2")?,
            ffn_b2: take("ffn_b2")?,
            norm2_gamma: take("norm2_gamma")?,
            norm2_beta: take("norm2_beta")?,
        })
    }

    fn check(&self, d: usize, ffn: usize) -> Result<()> {
        let expected: [&[usize]; 12] = [
            &[d, d],
            &[d, d],
            &[d, d],
            &[d, d],
            &[d],
            &[d],
            &[d, ffn],
            &[ffn],
            &[ffn, d],
            &[d],
            &[d],
            &[d],
        ];
        for ((t, shape), name) in self.tensors().into_iter().zip(expected).zip(POST_NAMES) {
            if t.shape() != shape {
                return Err(Error::shape(format!(
                    "post-attention `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization with affine `gamma`, `beta`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = x.dims2("layer norm input")?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!("layer norm affine params must have length {d}")));
    }
    let eps = T::of(LAYER_NORM_EPS);
    let count = T::of(d as f64);
    let mut out = Vec::with_capacity(x.len());
    for row in x.as_slice().chunks_exact(d) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / count;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
        let inv = T::one() / (var + eps).sqrt();
        for ((&v, &g), &b) in row.iter().zip(gamma.as_slice()).zip(beta.as_slice()) {
            out.push((v - mean) * inv * g + b);
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// Adds `bias` to every row of a rank-2 tensor.
pub fn add_row_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = x.dims2("bias target")?;
    if bias.shape() != [c] {
        return Err(Error::shape(format!("row bias must have length {c}")));
    }
    let mut data = x.as_slice().to_vec();
    for row in data.chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.as_slice()) {
            *v = *v + b;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), data)
}

fn residual<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = a.dims2("residual")?;
    if b.shape() != [n, d] {
        return Err(Error::shape("residual operands differ in shape"));
    }
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(vec![n, d], data)
}

/// Post-norm self-attention block followed by a ReLU feed-forward block,
/// each with a residual connection.
pub fn post_attention<T: Element>(
    kernels: &Tensor<T>,
    heads: usize,
    w: &PostAttentionWeights<T>,
) -> Result<Tensor<T>> {
    let (_, d) = kernels.dims2("post-attention input")?;
    w.check(d, w.ffn_b1.len())?;
    let attn = crate::attention::mhca(kernels, kernels, &w.wq, &w.wk, &w.wv, &w.wo, heads)?;
    let h1 = layer_norm(&residual(kernels, &attn)?, &w.norm1_gamma, &w.norm1_beta)?;
    let hidden = add_row_bias(&matmul(&h1, &w.ffn_w1)?, &w.ffn_b1)?.map(|v| v.max(T::zero()));
    let ffn = add_row_bias(&matmul(&hidden, &w.ffn_w2)?, &w.ffn_b2)?;
    layer_norm(&residual(&h1, &ffn)?, &w.norm2_gamma, &w.norm2_beta)
}

/// All decoder weights, shared across stages.
#[derive(Debug)]
pub struct DecoderWeights<T> {
    pub blocks: Vec<Box<dyn CrossAttention<T>>>,
    pub post: PostAttentionWeights<T>,
    /// `d × classes`.
    pub classifier_w: Tensor<T>,
    pub classifier_b: Tensor<T>,
}

impl<T: Element> DecoderWeights<T> {
    pub fn random(cfg: &DecoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let reg = attention_registry::<T>();
        let dims = cfg.attention_dims();
        let blocks = cfg
            .variants
            .iter()
            .map(|v| (reg.get(v.name())?.random)(&dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let post = PostAttentionWeights::random(rng, cfg.d, cfg.ffn_hidden)?;
        let b = T::of(1.0 / (cfg.d as f64).sqrt());
        let classifier_w = rand_uniform(rng, vec![cfg.d, cfg.classes], -b, b)?;
        let classifier_b = Tensor::zeros(vec![cfg.classes])?;
        Ok(Self {
            blocks,
            post,
            classifier_w,
            classifier_b,
        })
    }

    pub fn check(&self, cfg: &DecoderConfig) -> Result<()> {
        cfg.validate()?;
        let got: Vec<AttentionVariant> = self.blocks.iter().map(|b| b.variant()).collect();
        if got != cfg.variants {
            return Err(Error::invalid(format!(
                "weight blocks {got:?} do not match configured variants {:?}",
                cfg.variants
            )));
        }
        self.post.check(cfg.d, cfg.ffn_hidden)?;
        if self.classifier_w.shape() != [cfg.d, cfg.classes] || self.classifier_b.shape() != [cfg.classes] {
            return Err(Error::shape("classifier shape does not match config"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput<T> {
    /// Final panoptic kernels, `n×d`.
    pub kernels: Tensor<T>,
    /// Mask logits, `n×h×w`.
    pub mask_logits: Tensor<T>,
    /// Masks binarized at logistic(logit) >= 0.5, values exactly 0 or 1.
    pub masks: Tensor<T>,
    /// `n×classes`, rows sum to one.
    pub class_probs: Tensor<T>,
}

fn logistic<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One refinement stage: pre-attention, the attention block stack, then
/// post-attention.
pub fn decode_stage<T: Element>(
    s: &Tensor<T>,
    q: &KernelSet<T>,
    cfg: &DecoderConfig,
    w: &DecoderWeights<T>,
) -> Result<KernelSet<T>> {
    let v = pre_attention(s, q)?;
    let mut cur = q.tensor().clone();
    for block in &w.blocks {
        cur = block.forward(&cur, &v)?;
    }
    KernelSet::new(post_attention(&cur, cfg.heads, &w.post)?)
}

/// Mask and class heads applied to final kernels.
pub fn heads<T: Element>(s: &Tensor<T>, kernels: &KernelSet<T>, w: &DecoderWeights<T>) -> Result<DecoderOutput<T>> {
    let mask_logits = dyconv2d_masks(s, kernels.tensor())?;
    let masks = binarize(&mask_logits, logistic);
    let logits = add_row_bias(&matmul(kernels.tensor(), &w.classifier_w)?, &w.classifier_b)?;
    Ok(DecoderOutput {
        kernels: kernels.tensor().clone(),
        mask_logits,
        masks,
        class_probs: softmax_rows(&logits)?,
    })
}

/// Full decoder: `cfg.stages` refinement stages, then the heads.
pub fn decode<T: Element>(
    s: &Tensor<T>,
    proposals: &KernelSet<T>,
    cfg: &DecoderConfig,
    w: &DecoderWeights<T>,
) -> Result<DecoderOutput<T>> {
    w.check(cfg)?;
    let (d, _, _) = s.dims3("feature map")?;
    if d != cfg.d || proposals.dim() != cfg.d || proposals.len() != cfg.n {
        return Err(Error::shape(format!(
            "feature map width {d} / proposals {}x{} do not match config n={} d={}",
            proposals.len(),
            proposals.dim(),
            cfg.n,
            cfg.d
        )));
    }
    let mut q = proposals.clone();
    for _ in 0..cfg.stages {
        q = decode_stage(s, &q, cfg, w)?;
    }
    heads(s, &q, w)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockManifest {
    variant: AttentionVariant,
    tensors: BTreeMap<String, String>,
}

/// Decoder weight bundle manifest (`decoder.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderManifest {
    config: DecoderConfig,
    blocks: Vec<BlockManifest>,
    post: BTreeMap<String, String>,
    classifier: BTreeMap<String, String>,
}

fn load_map<T: Element>(dir: &Path, names: &BTreeMap<String, String>) -> Result<TensorMap<T>> {
    names
        .iter()
        .map(|(k, p)| Ok((k.clone(), fixture::load(dir.join(p))?)))
        .collect()
}

/// Writes `decoder.json` plus one `.tns` fixture per weight tensor.
pub fn save_bundle<T: Element>(dir: impl AsRef<Path>, cfg: &DecoderConfig, w: &DecoderWeights<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    w.check(cfg)?;
    let save = |name: String, t: &Tensor<T>| -> Result<String> {
        let file = format!("{name}.tns");
        fixture::save(dir.join(&file), t)?;
        Ok(file)
    };
    let mut blocks = Vec::new();
    for (i, b) in w.blocks.iter().enumerate() {
        let mut tensors = BTreeMap::new();
        for (k, t) in b.tensors() {
            tensors.insert(k.to_string(), save(format!("block{i}_{k}"), t)?);
        }
        blocks.push(BlockManifest {
            variant: b.variant(),
            tensors,
        });
    }
    let mut post = BTreeMap::new();
    for (k, t) in POST_NAMES.iter().zip(w.post.tensors()) {
        post.insert(k.to_string(), save(format!("post_{k}"), t)?);
    }
    let mut classifier = BTreeMap::new();
    classifier.insert("w".to_string(), save("classifier_w".into(), &w.classifier_w)?);
    classifier.insert("b".to_string(), save("classifier_b".into(), &w.classifier_b)?);
    let manifest = DecoderManifest {
        config: cfg.clone(),
        blocks,
        post,
        classifier,
    };
    fs::write(dir.join("decoder.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_bundle<T: Element>(dir: impl AsRef<Path>) -> Result<(DecoderConfig, DecoderWeights<T>)> {
    let dir = dir.as_ref();
    let manifest: DecoderManifest = serde_json::from_slice(&fs::read(dir.join("decoder.json"))?)
        .map_err(|e| Error::Format(format!("decoder manifest: {e}")))?;
    let cfg = manifest.config;
    cfg.validate()?;
    let reg = attention_registry::<T>();
    let dims = cfg.attention_dims();
    let blocks = manifest
        .blocks
        .iter()
        .map(|b| {
            let mut m = load_map(dir, &b.tensors)?;
            (reg.get(b.variant.name())?.from_tensors)(&dims, &mut m)
        })
        .collect::<Result<Vec<_>>>()?;
    let post = PostAttentionWeights::from_map(&mut load_map(dir, &manifest.post)?)?;
    let mut cls = load_map(dir, &manifest.classifier)?;
    let classifier_w = cls
        .remove("w")
        .ok_or_else(|| Error::Format("missing classifier `w`".into()))?;
    let classifier_b = cls
        .remove("b")
        .ok_or_else(|| Error::Format("missing classifier `b`".into()))?;
    let w = DecoderWeights {
        blocks,
        post,
        classifier_w,
        classifier_b,
    };
    w.check(&cfg)?;
    Ok((cfg, w))
}
