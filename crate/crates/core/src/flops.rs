//! Analytic operation counts for the aggregators and attention variants,
//! the instrumented counting oracle, and reduction-ratio contour grids.
//!
//! Counting convention: one op per multiply-accumulate, four per
//! bilinear-interpolated output element, one per standalone accumulation add.
//! Bias additions, softmax, scaling and normalization are not counted.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::aggregator::{build_aggregator, AggregatorWeights, PyramidFeatures};
use crate::attention::{random_attention, AttentionDims, AttentionVariant};
use crate::count::{self, OpTally};
use crate::error::{Error, Result};
use crate::rng::{rand_uniform, Rng};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorCostConfig {
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub c5: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for AggregatorCostConfig {
    /// The reference aggregator setting: d=256, c=(128,256,512,1024), 256×256.
    fn default() -> Self {
        Self {
            c2: 128,
            c3: 256,
            c4: 512,
            c5: 1024,
            d: 256,
            h: 256,
            w: 256,
        }
    }
}

impl AggregatorCostConfig {
    pub fn widths(&self) -> [usize; 4] {
        [self.c2, self.c3, self.c4, self.c5]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.c2, self.c3, self.c4, self.c5, self.d, self.h, self.w];
        if all.contains(&0) {
            return Err(Error::invalid(format!("aggregator cost config {self:?} has a zero field")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionCostConfig {
    pub n: usize,
    pub d: usize,
    pub t: usize,
}

impl Default for AttentionCostConfig {
    /// The reference attention setting: n=100, d=256, t=3.
    fn default() -> Self {
        Self { n: 100, d: 256, t: 3 }
    }
}

impl AttentionCostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.t == 0 {
            return Err(Error::invalid(format!("attention cost config {self:?} has a zero field")));
        }
        Ok(())
    }

    pub fn dims(&self) -> AttentionDims {
        AttentionDims {
            n: self.n,
            d: self.d,
            t: self.t,
        }
    }
}

/// Op weights of the counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Convention {
    pub mac: u32,
    pub interp_output: u32,
    pub add: u32,
}

pub const CONVENTION: Convention = Convention {
    mac: 1,
    interp_output: OpTally::INTERP_COST as u32,
    add: 1,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub module: String,
    pub analytic: u128,
    pub counted: u128,
    pub tally: OpTally,
    pub convention: Convention,
}

impl FlopsReport {
    pub fn matches(&self) -> bool {
        self.analytic == self.counted
    }
}

fn u(x: usize) -> u128 {
    x as u128
}

/// IFA: `4(c5+c4+c3)hw + (c5+c4+c3+c2)dhw`.
pub fn flops_ifa(cfg: &AggregatorCostConfig) -> Result<u128> {
    cfg.validate()?;
    let hw = u(cfg.h) * u(cfg.w);
    let upsampled = u(cfg.c3) + u(cfg.c4) + u(cfg.c5);
    let total = upsampled + u(cfg.c2);
    Ok(4 * upsampled * hw + total * u(cfg.d) * hw)
}

/// CFA: `(c5/64 + c4/16 + c3/4 + c2)dhw + 12dhw + 3dhw`, evaluated exactly.
/// Errors when the per-level convolution term is not integral.
pub fn flops_cfa(cfg: &AggregatorCostConfig) -> Result<u128> {
    cfg.validate()?;
    let dhw = u(cfg.d) * u(cfg.h) * u(cfg.w);
    let conv64 = (u(cfg.c5) + 4 * u(cfg.c4) + 16 * u(cfg.c3) + 64 * u(cfg.c2)) * dhw;
    if conv64 % 64 != 0 {
        return Err(Error::invalid(format!(
            "CFA convolution term is not integral for {cfg:?}; h and w should be divisible by 8"
        )));
    }
    Ok(conv64 / 64 + 12 * dhw + 3 * dhw)
}

/// IFA/CFA reduction ratio as an exact rational.
pub fn ifa_cfa_ratio(cfg: &AggregatorCostConfig) -> Result<Ratio<u128>> {
    Ok(Ratio::new(flops_ifa(cfg)?, flops_cfa(cfg)?))
}

/// Analytic attention cost.
///
/// | variant | count |
/// |---------|-------|
/// | MHCA | `4nd² + 2n²d` |
/// | DCA  | `n·d·nt + n·n·t·d = 2n²dt` |
/// | SDCA | `2ndt + 2n²d` |
/// | PDCA | `2n²d` |
/// | DDCA | `2ndt` |
pub fn flops_attention(cfg: &AttentionCostConfig, variant: AttentionVariant) -> u128 {
    let (n, d, t) = (u(cfg.n), u(cfg.d), u(cfg.t));
    match variant {
        AttentionVariant::Mhca => 4 * n * d * d + 2 * n * n * d,
        AttentionVariant::Dca => 2 * n * n * d * t,
        AttentionVariant::Sdca => 2 * n * d * t + 2 * n * n * d,
        AttentionVariant::Pdca => 2 * n * n * d,
        AttentionVariant::Ddca => 2 * n * d * t,
    }
}

/// MHCA/SDCA reduction ratio in closed form, `(2d+n)/(t+n)`.
pub fn mhca_sdca_ratio(cfg: &AttentionCostConfig) -> Ratio<u128> {
    Ratio::new(2 * u(cfg.d) + u(cfg.n), u(cfg.t) + u(cfg.n))
}

/// Runs `f` under a counting scope and returns its result with the total
/// op count under [`CONVENTION`].
pub fn counted_flops<R>(f: impl FnOnce() -> R) -> (R, OpTally) {
    count::measure(f)
}

/// Builds a random pyramid and weights at `cfg`, runs the named aggregator
/// strategy under counting, and reports both counts.
pub fn count_aggregator<T: Element>(name: &str, cfg: &AggregatorCostConfig, seed: u64) -> Result<FlopsReport> {
    let analytic = match name {
        "ifa" => flops_ifa(cfg)?,
        "cfa" => flops_cfa(cfg)?,
        other => {
            return Err(Error::Unknown {
                kind: "aggregator",
                name: other.to_string(),
            })
        }
    };
    let mut rng = Rng::new(seed);
    let pyramid = PyramidFeatures::<T>::random(&mut rng, cfg.widths(), cfg.h, cfg.w)?;
    let weights = AggregatorWeights::random_ifa(&mut rng, cfg.widths(), cfg.d, false)?;
    let module = build_aggregator(name, weights)?;
    let (out, tally) = counted_flops(|| module.aggregate(&pyramid));
    out?;
    Ok(FlopsReport {
        module: name.to_string(),
        analytic,
        counted: tally.total(),
        tally,
        convention: CONVENTION,
    })
}

/// Runs the named attention variant on random tokens under counting.
/// Kernel generation and convolution are both inside the counted scope.
pub fn count_attention<T: Element>(
    variant: AttentionVariant,
    cfg: &AttentionCostConfig,
    seed: u64,
) -> Result<FlopsReport> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let module = random_attention::<T>(variant.name(), &cfg.dims(), &mut rng)?;
    let q = rand_uniform(&mut rng, vec![cfg.n, cfg.d], T::of(-1.0), T::one())?;
    let v = rand_uniform(&mut rng, vec![cfg.n, cfg.d], T::of(-1.0), T::one())?;
    let (out, tally) = counted_flops(|| module.forward(&q, &v));
    out?;
    Ok(FlopsReport {
        module: variant.name().to_string(),
        analytic: flops_attention(cfg, variant),
        counted: tally.total(),
        tally,
        convention: CONVENTION,
    })
}

/// Which reduction ratio a contour grid evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContourKind {
    /// x = shared input width `c` (c2=c3=c4=c5), y = output width `d`.
    Cfa,
    /// x = token count `n`, y = hidden width `d`, t = 3.
    Sdca,
}

impl std::str::FromStr for ContourKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfa" => Ok(Self::Cfa),
            "sdca" => Ok(Self::Sdca),
            other => Err(Error::Unknown {
                kind: "contour kind",
                name: other.to_string(),
            }),
        }
    }
}

/// Inclusive integer axis sampled at `steps` evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: usize,
    pub hi: usize,
    pub steps: usize,
}

impl AxisRange {
    pub fn new(lo: usize, hi: usize, steps: usize) -> Result<Self> {
        let r = Self { lo, hi, steps };
        r.points()?;
        Ok(r)
    }

    pub fn points(&self) -> Result<Vec<usize>> {
        if self.lo == 0 || self.hi < self.lo || self.steps == 0 {
            return Err(Error::invalid(format!("invalid axis range {self:?}")));
        }
        if self.steps == 1 {
            return Ok(vec![self.lo]);
        }
        let span = self.hi - self.lo;
        if span < self.steps - 1 {
            return Err(Error::invalid(format!(
                "axis {}..={} cannot hold {} distinct integer points",
                self.lo, self.hi, self.steps
            )));
        }
        let last = self.steps - 1;
        Ok((0..self.steps)
            .map(|i| self.lo + (i * span + last / 2) / last)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourCell {
    pub x: usize,
    pub y: usize,
    pub ratio: Ratio<u128>,
}

impl ContourCell {
    pub fn ratio_f64(&self) -> f64 {
        self.ratio.to_f64().unwrap_or(f64::NAN)
    }
}

/// Kernel size used by SDCA contours.
pub const CONTOUR_TAPS: usize = 3;

/// Evaluates the chosen reduction ratio over `x × y`, x-major.
pub fn contour_grid(kind: ContourKind, x: AxisRange, y: AxisRange) -> Result<Vec<ContourCell>> {
    let xs = x.points()?;
    let ys = y.points()?;
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    for &xv in &xs {
        for &yv in &ys {
            let ratio = match kind {
                ContourKind::Cfa => ifa_cfa_ratio(&AggregatorCostConfig {
                    c2: xv,
                    c3: xv,
                    c4: xv,
                    c5: xv,
                    d: yv,
                    h: 8,
                    w: 8,
                })?,
                ContourKind::Sdca => mhca_sdca_ratio(&AttentionCostConfig {
                    n: xv,
                    d: yv,
                    t: CONTOUR_TAPS,
                }),
            };
            cells.push(ContourCell { x: xv, y: yv, ratio });
        }
    }
    Ok(cells)
}

/// `x,y,ratio` CSV with six decimal places.
pub fn contour_csv(cells: &[ContourCell]) -> String {
    let mut out = String::from("x,y,ratio\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{:.6}", c.x, c.y, c.ratio_f64());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ifa_small_config() {
        let cfg = AggregatorCostConfig { c2: 1, c3: 1, c4: 1, c5: 1, d: 1, h: 8, w: 8 };
        assert_eq!(flops_ifa(&cfg).unwrap(), 1024);
    }

    #[test]
    fn cfa_small_config() {
        let cfg = AggregatorCostConfig { c2: 64, c3: 64, c4: 64, c5: 64, d: 1, h: 8, w: 8 };
        assert_eq!(flops_cfa(&cfg).unwrap(), 6400);
    }

    #[test]
    fn cfa_rejects_fractional_term() {
        let cfg = AggregatorCostConfig { c2: 1, c3: 1, c4: 1, c5: 1, d: 1, h: 3, w: 3 };
        assert!(flops_cfa(&cfg).is_err());
    }

    #[test]
    fn reference_aggregator_counts() {
        let cfg = AggregatorCostConfig::default();
        assert_eq!(flops_ifa(&cfg).unwrap(), 32_682_016_768);
        assert_eq!(flops_cfa(&cfg).unwrap(), 4_278_190_080);
    }

    #[test]
    fn reference_attention_counts() {
        let cfg = AttentionCostConfig::default();
        assert_eq!(flops_attention(&cfg, AttentionVariant::Mhca), 31_334_400);
        assert_eq!(flops_attention(&cfg, AttentionVariant::Sdca), 5_273_600);
        assert_eq!(flops_attention(&cfg, AttentionVariant::Dca), 15_360_000);
        assert_eq!(flops_attention(&cfg, AttentionVariant::Pdca), 5_120_000);
        assert_eq!(flops_attention(&cfg, AttentionVariant::Ddca), 153_600);
        assert_eq!(mhca_sdca_ratio(&cfg), Ratio::new(612, 103));
    }

    #[test]
    fn counted_mhca_single_token() {
        let cfg = AttentionCostConfig { n: 1, d: 6, t: 3 };
        let r = count_attention::<f64>(AttentionVariant::Mhca, &cfg, 1).unwrap();
        assert_eq!(r.counted, 4 * 36 + 2 * 6);
        assert!(r.matches());
    }

    #[test]
    fn counted_matches_small() {
        let cfg = AggregatorCostConfig { c2: 3, c3: 5, c4: 2, c5: 7, d: 4, h: 16, w: 8 };
        for name in ["ifa", "cfa"] {
            let r = count_aggregator::<f32>(name, &cfg, 2).unwrap();
            assert!(r.matches(), "{r:?}");
        }
        let cfg = AttentionCostConfig { n: 5, d: 9, t: 3 };
        for v in AttentionVariant::ALL {
            let r = count_attention::<f32>(v, &cfg, 3).unwrap();
            assert!(r.matches(), "{r:?}");
        }
    }

    #[test]
    fn axis_points() {
        assert_eq!(AxisRange::new(1, 10, 4).unwrap().points().unwrap(), [1, 4, 7, 10]);
        assert_eq!(AxisRange::new(5, 5, 1).unwrap().points().unwrap(), [5]);
        assert!(AxisRange::new(1, 2, 4).is_err());
        assert!(AxisRange::new(0, 2, 2).is_err());
    }

    #[test]
    fn single_cell_grid_matches_ratio() {
        let one = |v| AxisRange::new(v, v, 1).unwrap();
        let cells = contour_grid(ContourKind::Sdca, one(100), one(256)).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].ratio, mhca_sdca_ratio(&AttentionCostConfig::default()));
        let csv = contour_csv(&cells);
        assert_eq!(csv, "x,y,ratio\n100,256,5.941748\n");
    }
}
