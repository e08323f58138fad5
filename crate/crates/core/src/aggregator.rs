//! Pyramid feature aggregation in interpolation-first (IFA) and
//! convolution-first (CFA) order, and the weight re-parameterization that
//! maps one onto the other.
//!
//! IFA upsamples P3..P5 to the P2 grid, concatenates channels in
//! `(P2, P3, P4, P5)` order and applies one fused 1×1 convolution. CFA runs a
//! separate 1×1 convolution per level at native resolution, upsamples the
//! results and sums them. Splitting the fused kernel columnwise by level width
//! turns an IFA model into an equivalent CFA model, because bilinear
//! interpolation is linear with weights that sum to one. The optional bias is
//! stored once and added after aggregation in both forms.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixture;
use crate::kernels::{add_channel_bias, bilinear_resize, conv1x1, Conv1x1Weights};
use crate::registry::Registry;
use crate::rng::{rand_uniform, Rng};
use crate::tensor::{Element, Tensor};

/// Level names in concatenation order.
pub const LEVELS: [&str; 4] = ["p2", "p3", "p4", "p5"];

/// The four pyramid maps. P2 is `c2×h×w`; each coarser level halves both
/// spatial extents.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidFeatures<T> {
    levels: [Tensor<T>; 4],
}

impl<T: Element> PyramidFeatures<T> {
    pub fn new(p2: Tensor<T>, p3: Tensor<T>, p4: Tensor<T>, p5: Tensor<T>) -> Result<Self> {
        let (_, h, w) = p2.dims3("P2")?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!(
                "P2 extent {h}x{w} must be divisible by 8"
            )));
        }
        for (level, (t, name)) in [&p3, &p4, &p5].into_iter().zip(&LEVELS[1..]).enumerate() {
            let (_, lh, lw) = t.dims3(name)?;
            let stride = 2usize << level;
            if lh * stride != h || lw * stride != w {
                return Err(Error::shape(format!(
                    "{name} extent {lh}x{lw} is not P2 extent {h}x{w} divided by {stride}"
                )));
            }
        }
        Ok(Self {
            levels: [p2, p3, p4, p5],
        })
    }

    /// Random pyramid with values uniform in `[-1, 1)`.
    pub fn random(rng: &mut Rng, widths: [usize; 4], h: usize, w: usize) -> Result<Self> {
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "pyramid base {h}x{w} must be positive and divisible by 8"
            )));
        }
        let lo = T::of(-1.0);
        let hi = T::one();
        let mut level = |i: usize| rand_uniform(rng, vec![widths[i], h >> i, w >> i], lo, hi);
        Self::new(level(0)?, level(1)?, level(2)?, level(3)?)
    }

    pub fn levels(&self) -> &[Tensor<T>; 4] {
        &self.levels
    }

    pub fn widths(&self) -> [usize; 4] {
        std::array::from_fn(|i| self.levels[i].shape()[0])
    }

    pub fn height(&self) -> usize {
        self.levels[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.levels[0].shape()[2]
    }
}

/// Storage layout of aggregator weights.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatorForm<T> {
    /// One `d × (c2+c3+c4+c5)` kernel.
    Ifa { fused: Tensor<T> },
    /// Per-level `d × c_l` kernels in `(P2, P3, P4, P5)` order.
    Cfa { blocks: [Tensor<T>; 4] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorWeights<T> {
    form: AggregatorForm<T>,
    widths: [usize; 4],
    bias: Option<Tensor<T>>,
}

impl<T: Element> AggregatorWeights<T> {
    pub fn ifa(fused: Tensor<T>, widths: [usize; 4], bias: Option<Tensor<T>>) -> Result<Self> {
        let (d, total) = fused.dims2("fused aggregator kernel")?;
        let expected: usize = widths.iter().sum();
        if total != expected {
            return Err(Error::shape(format!(
                "fused kernel width {total} does not equal block widths {widths:?} (sum {expected})"
            )));
        }
        fused.ensure_finite("fused aggregator kernel")?;
        Self::check_bias(d, &bias)?;
        Ok(Self {
            form: AggregatorForm::Ifa { fused },
            widths,
            bias,
        })
    }

    pub fn cfa(blocks: [Tensor<T>; 4], bias: Option<Tensor<T>>) -> Result<Self> {
        let (d, _) = blocks[0].dims2("w2")?;
        let mut widths = [0; 4];
        for (i, b) in blocks.iter().enumerate() {
            let (bd, c) = b.dims2("per-level aggregator kernel")?;
            if bd != d {
                return Err(Error::shape(format!(
                    "per-level kernels disagree on output width: {d} vs {bd}"
                )));
            }
            b.ensure_finite("per-level aggregator kernel")?;
            widths[i] = c;
        }
        Self::check_bias(d, &bias)?;
        Ok(Self {
            form: AggregatorForm::Cfa { blocks },
            widths,
            bias,
        })
    }

    fn check_bias(d: usize, bias: &Option<Tensor<T>>) -> Result<()> {
        if let Some(b) = bias {
            if b.shape() != [d] {
                return Err(Error::shape(format!(
                    "aggregator bias shape {:?} does not match output width {d}",
                    b.shape()
                )));
            }
            b.ensure_finite("aggregator bias")?;
        }
        Ok(())
    }

    /// Random fused IFA kernel, uniform in `±1/sqrt(fan_in)`.
    pub fn random_ifa(rng: &mut Rng, widths: [usize; 4], d: usize, with_bias: bool) -> Result<Self> {
        let fan_in: usize = widths.iter().sum();
        let bound = T::of(1.0 / (fan_in as f64).sqrt());
        let fused = rand_uniform(rng, vec![d, fan_in], -bound, bound)?;
        let bias = if with_bias {
            Some(rand_uniform(rng, vec![d], -bound, bound)?)
        } else {
            None
        };
        Self::ifa(fused, widths, bias)
    }

    pub fn form(&self) -> &AggregatorForm<T> {
        &self.form
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn without_bias(&self) -> Self {
        Self {
            bias: None,
            ..self.clone()
        }
    }

    pub fn out_channels(&self) -> usize {
        match &self.form {
            AggregatorForm::Ifa { fused } => fused.shape()[0],
            AggregatorForm::Cfa { blocks } => blocks[0].shape()[0],
        }
    }

    pub fn is_ifa(&self) -> bool {
        matches!(self.form, AggregatorForm::Ifa { .. })
    }

    fn check_pyramid(&self, p: &PyramidFeatures<T>) -> Result<()> {
        if p.widths() != self.widths {
            return Err(Error::shape(format!(
                "pyramid widths {:?} do not match weight block widths {:?}",
                p.widths(),
                self.widths
            )));
        }
        Ok(())
    }
}

/// Splits a fused IFA kernel columnwise into per-level CFA kernels.
pub fn reparameterize<T: Element>(w: &AggregatorWeights<T>) -> Result<AggregatorWeights<T>> {
    let AggregatorForm::Ifa { fused } = &w.form else {
        return Err(Error::invalid("reparameterize expects IFA-form weights"));
    };
    let mut start = 0;
    let mut blocks = Vec::with_capacity(4);
    for &c in &w.widths {
        blocks.push(fused.columns(start, start + c)?);
        start += c;
    }
    let blocks: [Tensor<T>; 4] = blocks.try_into().expect("four levels");
    AggregatorWeights::cfa(blocks, w.bias.clone())
}

/// Inverse of [`reparameterize`]: concatenates per-level kernels.
pub fn fuse<T: Element>(w: &AggregatorWeights<T>) -> Result<AggregatorWeights<T>> {
    let AggregatorForm::Cfa { blocks } = &w.form else {
        return Err(Error::invalid("fuse expects CFA-form weights"));
    };
    let parts: Vec<&Tensor<T>> = blocks.iter().collect();
    AggregatorWeights::ifa(Tensor::hcat(&parts)?, w.widths, w.bias.clone())
}

fn finish<T: Element>(out: Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match bias {
        Some(b) => add_channel_bias(&out, b),
        None => Ok(out),
    }
}

/// Interpolation-first aggregation.
pub fn aggregate_ifa<T: Element>(p: &PyramidFeatures<T>, w: &AggregatorWeights<T>) -> Result<Tensor<T>> {
    let AggregatorForm::Ifa { fused } = &w.form else {
        return Err(Error::invalid("aggregate_ifa expects IFA-form weights"));
    };
    w.check_pyramid(p)?;
    let (h, wd) = (p.height(), p.width());
    let [p2, rest @ ..] = p.levels();
    let mut parts = vec![p2.clone()];
    for level in rest {
        parts.push(bilinear_resize(level, h, wd)?);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    let stacked = Tensor::vcat(&refs)?;
    let kernel = Conv1x1Weights::without_bias(fused.clone())?;
    finish(conv1x1(&stacked, &kernel)?, w.bias())
}

/// Convolution-first aggregation.
pub fn aggregate_cfa<T: Element>(p: &PyramidFeatures<T>, w: &AggregatorWeights<T>) -> Result<Tensor<T>> {
    let AggregatorForm::Cfa { blocks } = &w.form else {
        return Err(Error::invalid("aggregate_cfa expects CFA-form weights"));
    };
    w.check_pyramid(p)?;
    let (h, wd) = (p.height(), p.width());
    let mut acc: Option<Tensor<T>> = None;
    for (level, kernel) in p.levels().iter().zip(blocks) {
        let y = conv1x1(level, &Conv1x1Weights::without_bias(kernel.clone())?)?;
        let y = if y.shape()[1] == h && y.shape()[2] == wd {
            y
        } else {
            bilinear_resize(&y, h, wd)?
        };
        acc = Some(match acc {
            Some(a) => a.add(&y)?,
            None => y,
        });
    }
    finish(acc.expect("four levels"), w.bias())
}

/// A pyramid aggregation strategy.
pub trait Aggregator<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn weights(&self) -> &AggregatorWeights<T>;
    fn aggregate(&self, p: &PyramidFeatures<T>) -> Result<Tensor<T>>;
}

/// Interpolation-first strategy; holds IFA-form weights.
#[derive(Debug, Clone)]
pub struct InterpolationFirst<T> {
    weights: AggregatorWeights<T>,
}

impl<T: Element> InterpolationFirst<T> {
    /// Accepts either form; CFA weights are fused.
    pub fn new(weights: AggregatorWeights<T>) -> Result<Self> {
        let weights = if weights.is_ifa() { weights } else { fuse(&weights)? };
        Ok(Self { weights })
    }
}

impl<T: Element> Aggregator<T> for InterpolationFirst<T> {
    fn name(&self) -> &'static str {
        "ifa"
    }

    fn weights(&self) -> &AggregatorWeights<T> {
        &self.weights
    }

    fn aggregate(&self, p: &PyramidFeatures<T>) -> Result<Tensor<T>> {
        aggregate_ifa(p, &self.weights)
    }
}

/// Convolution-first strategy; holds CFA-form weights.
#[derive(Debug, Clone)]
pub struct ConvolutionFirst<T> {
    weights: AggregatorWeights<T>,
}

impl<T: Element> ConvolutionFirst<T> {
    /// Accepts either form; IFA weights are re-parameterized.
    pub fn new(weights: AggregatorWeights<T>) -> Result<Self> {
        let weights = if weights.is_ifa() {
            reparameterize(&weights)?
        } else {
            weights
        };
        Ok(Self { weights })
    }
}

impl<T: Element> Aggregator<T> for ConvolutionFirst<T> {
    fn name(&self) -> &'static str {
        "cfa"
    }

    fn weights(&self) -> &AggregatorWeights<T> {
        &self.weights
    }

    fn aggregate(&self, p: &PyramidFeatures<T>) -> Result<Tensor<T>> {
        aggregate_cfa(p, &self.weights)
    }
}

pub type AggregatorCtor<T> = fn(AggregatorWeights<T>) -> Result<Box<dyn Aggregator<T>>>;

pub fn aggregator_registry<T: Element>() -> Registry<AggregatorCtor<T>> {
    let mut r: Registry<AggregatorCtor<T>> = Registry::new("aggregator");
    r.register("ifa", |w| Ok(Box::new(InterpolationFirst::new(w)?)));
    r.register("cfa", |w| Ok(Box::new(ConvolutionFirst::new(w)?)));
    r
}

pub fn build_aggregator<T: Element>(
    name: &str,
    weights: AggregatorWeights<T>,
) -> Result<Box<dyn Aggregator<T>>> {
    (aggregator_registry::<T>().get(name)?)(weights)
}

/// On-disk manifest for aggregator weights. Tensor paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorManifest {
    pub form: String,
    pub widths: [usize; 4],
    pub out_channels: usize,
    pub bias: Option<String>,
    /// `["fused.tns"]` for IFA, four per-level paths for CFA.
    pub kernels: Vec<String>,
}

pub fn save_weights<T: Element>(dir: impl AsRef<Path>, w: &AggregatorWeights<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let kernels = match &w.form {
        AggregatorForm::Ifa { fused } => {
            fixture::save(dir.join("fused.tns"), fused)?;
            vec!["fused.tns".to_string()]
        }
        AggregatorForm::Cfa { blocks } => {
            let mut names = Vec::new();
            for (b, level) in blocks.iter().zip(LEVELS) {
                let name = format!("w_{level}.tns");
                fixture::save(dir.join(&name), b)?;
                names.push(name);
            }
            names
        }
    };
    let bias = match &w.bias {
        Some(b) => {
            fixture::save(dir.join("bias.tns"), b)?;
            Some("bias.tns".to_string())
        }
        None => None,
    };
    let manifest = AggregatorManifest {
        form: if w.is_ifa() { "ifa" } else { "cfa" }.to_string(),
        widths: w.widths,
        out_channels: w.out_channels(),
        bias,
        kernels,
    };
    fs::write(dir.join("aggregator.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_weights<T: Element>(dir: impl AsRef<Path>) -> Result<AggregatorWeights<T>> {
    let dir = dir.as_ref();
    let manifest: AggregatorManifest = serde_json::from_slice(&fs::read(dir.join("aggregator.json"))?)
        .map_err(|e| Error::Format(format!("aggregator manifest: {e}")))?;
    let bias = manifest
        .bias
        .as_ref()
        .map(|p| fixture::load(dir.join(p)))
        .transpose()?;
    let w = match (manifest.form.as_str(), manifest.kernels.as_slice()) {
        ("ifa", [fused]) => AggregatorWeights::ifa(fixture::load(dir.join(fused))?, manifest.widths, bias)?,
        ("cfa", [a, b, c, d]) => AggregatorWeights::cfa(
            [
                fixture::load(dir.join(a))?,
                fixture::load(dir.join(b))?,
                fixture::load(dir.join(c))?,
                fixture::load(dir.join(d))?,
            ],
            bias,
        )?,
        (form, k) => {
            return Err(Error::Format(format!(
                "aggregator manifest form `{form}` with {} kernels",
                k.len()
            )))
        }
    };
    if w.widths != manifest.widths || w.out_channels() != manifest.out_channels {
        return Err(Error::Format(
            "aggregator manifest widths disagree with tensor shapes".into(),
        ));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pyramid(seed: u64, widths: [usize; 4], h: usize) -> PyramidFeatures<f64> {
        PyramidFeatures::random(&mut Rng::new(seed), widths, h, h).unwrap()
    }

    #[test]
    fn pyramid_extents_validated() {
        let z = |c, h| Tensor::<f64>::zeros(vec![c, h, h]).unwrap();
        assert!(PyramidFeatures::new(z(1, 8), z(1, 4), z(1, 2), z(1, 1)).is_ok());
        assert!(PyramidFeatures::new(z(1, 8), z(1, 4), z(1, 3), z(1, 1)).is_err());
        assert!(PyramidFeatures::new(z(1, 12), z(1, 6), z(1, 3), z(1, 1)).is_err());
    }

    #[test]
    fn single_level_selection() {
        let mut p = pyramid(1, [3, 2, 2, 2], 8);
        let z = |t: &Tensor<f64>| Tensor::zeros(t.shape().to_vec()).unwrap();
        p.levels = [p.levels[0].clone(), z(&p.levels[1]), z(&p.levels[2]), z(&p.levels[3])];
        let mut fused = vec![0.0; 3 * 9];
        for i in 0..3 {
            fused[i * 9 + i] = 1.0;
        }
        let w = AggregatorWeights::ifa(
            Tensor::from_vec(vec![3, 9], fused).unwrap(),
            [3, 2, 2, 2],
            None,
        )
        .unwrap();
        assert_eq!(aggregate_ifa(&p, &w).unwrap(), p.levels[0]);
    }

    #[test]
    fn zero_pyramid_gives_bias() {
        let widths = [2, 2, 2, 2];
        let p = PyramidFeatures::new(
            Tensor::<f64>::zeros(vec![2, 8, 8]).unwrap(),
            Tensor::zeros(vec![2, 4, 4]).unwrap(),
            Tensor::zeros(vec![2, 2, 2]).unwrap(),
            Tensor::zeros(vec![2, 1, 1]).unwrap(),
        )
        .unwrap();
        let w = AggregatorWeights::random_ifa(&mut Rng::new(2), widths, 3, true).unwrap();
        let bias = w.bias().unwrap().as_slice().to_vec();
        for out in [aggregate_ifa(&p, &w).unwrap(), aggregate_cfa(&p, &reparameterize(&w).unwrap()).unwrap()] {
            for (c, plane) in out.as_slice().chunks_exact(64).enumerate() {
                assert!(plane.iter().all(|&v| v == bias[c]));
            }
        }
        let out = aggregate_ifa(&p, &w.without_bias()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reparameterize_block_structure_and_roundtrip() {
        let w = AggregatorWeights::<f32>::random_ifa(&mut Rng::new(3), [2, 3, 4, 5], 6, true).unwrap();
        let cfa = reparameterize(&w).unwrap();
        let AggregatorForm::Cfa { blocks } = cfa.form() else { panic!() };
        assert_eq!(blocks.clone().map(|b| b.shape()[1]), [2, 3, 4, 5]);
        assert_eq!(fuse(&cfa).unwrap(), w);
        assert!(reparameterize(&cfa).is_err());
    }

    #[test]
    fn width_mismatch_errors() {
        let w = AggregatorWeights::<f64>::random_ifa(&mut Rng::new(4), [2, 2, 2, 2], 3, false).unwrap();
        let p = pyramid(5, [2, 2, 2, 3], 8);
        assert!(matches!(aggregate_ifa(&p, &w), Err(Error::Shape(_))));
        assert!(AggregatorWeights::ifa(Tensor::<f64>::zeros(vec![3, 7]).unwrap(), [2, 2, 2, 2], None).is_err());
    }

    #[test]
    fn strategies_agree() {
        let p = pyramid(6, [4, 4, 4, 4], 16);
        let w = AggregatorWeights::random_ifa(&mut Rng::new(7), [4, 4, 4, 4], 5, true).unwrap();
        let ifa = build_aggregator("ifa", w.clone()).unwrap();
        let cfa = build_aggregator("cfa", w).unwrap();
        let diff = ifa.aggregate(&p).unwrap().max_abs_diff(&cfa.aggregate(&p).unwrap()).unwrap();
        assert!(diff <= 1e-12, "{diff}");
        assert!(build_aggregator::<f64>("xyz", ifa.weights().clone()).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let w = AggregatorWeights::<f32>::random_ifa(&mut Rng::new(8), [2, 3, 4, 5], 6, true).unwrap();
        save_weights(dir.path(), &w).unwrap();
        assert_eq!(load_weights::<f32>(dir.path()).unwrap(), w);

        let c = reparameterize(&w).unwrap().without_bias();
        let dir2 = tempfile::tempdir().unwrap();
        save_weights(dir2.path(), &c).unwrap();
        assert_eq!(load_weights::<f32>(dir2.path()).unwrap(), c);
    }
}
