//! Single-threaded wall-clock micro-benchmarks of the aggregators and
//! attention variants.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::aggregator::{build_aggregator, reparameterize, AggregatorWeights, PyramidFeatures};
use crate::attention::{random_attention, AttentionVariant};
use crate::error::{Error, Result};
use crate::flops::{AggregatorCostConfig, AttentionCostConfig};
use crate::rng::{rand_uniform, Rng};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchModule {
    Ifa,
    Cfa,
    Attention(AttentionVariant),
}

impl BenchModule {
    pub const NAMES: [&'static str; 7] = ["ifa", "cfa", "mhca", "dca", "sdca", "pdca", "ddca"];

    pub fn name(&self) -> &'static str {
        match self {
            BenchModule::Ifa => "ifa",
            BenchModule::Cfa => "cfa",
            BenchModule::Attention(v) => v.name(),
        }
    }

    pub fn is_aggregator(&self) -> bool {
        matches!(self, BenchModule::Ifa | BenchModule::Cfa)
    }
}

impl fmt::Display for BenchModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ifa" => Ok(BenchModule::Ifa),
            "cfa" => Ok(BenchModule::Cfa),
            other => other.parse().map(BenchModule::Attention).map_err(|_| Error::Unknown {
                kind: "bench module",
                name: other.to_string(),
            }),
        }
    }
}

/// Shape parameters echoed into every result row. Fields that do not apply
/// to a module are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BenchShape {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub c5: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub module: String,
    pub shape: BenchShape,
    pub warmup: usize,
    pub iters: usize,
    pub min_ns: u128,
    pub median_ns: u128,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub max_ns: u128,
}

pub const CSV_HEADER: &str = "module,n,d,t,c2,c3,c4,c5,h,w,iters,min_ns,median_ns,mean_ns,stddev_ns";

impl BenchResult {
    pub fn csv_row(&self) -> String {
        let s = &self.shape;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.1},{:.1}",
            self.module,
            s.n,
            s.d,
            s.t,
            s.c2,
            s.c3,
            s.c4,
            s.c5,
            s.h,
            s.w,
            self.iters,
            self.min_ns,
            self.median_ns,
            self.mean_ns,
            self.stddev_ns
        )
    }
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-iteration timing statistics. The median of an even sample is the
/// lower middle value so it is always an observed time.
pub fn summarize(samples: &[u128]) -> Result<(u128, u128, f64, f64, u128)> {
    if samples.is_empty() {
        return Err(Error::invalid("no timed iterations"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mean = sorted.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = sorted.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok((
        sorted[0],
        sorted[(sorted.len() - 1) / 2],
        mean,
        var.sqrt(),
        sorted[sorted.len() - 1],
    ))
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
pub fn time_iterations<R>(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<R>) -> Result<Vec<u128>> {
    if iters == 0 {
        return Err(Error::invalid("iters must be at least 1"));
    }
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let out = f()?;
        samples.push(start.elapsed().as_nanos());
        std::hint::black_box(out);
    }
    Ok(samples)
}

fn result(module: BenchModule, shape: BenchShape, warmup: usize, samples: &[u128]) -> Result<BenchResult> {
    let (min_ns, median_ns, mean_ns, stddev_ns, max_ns) = summarize(samples)?;
    Ok(BenchResult {
        module: module.name().to_string(),
        shape,
        warmup,
        iters: samples.len(),
        min_ns,
        median_ns,
        mean_ns,
        stddev_ns,
        max_ns,
    })
}

/// Benchmarks an aggregator on a random pyramid. The CFA weights come from
/// re-parameterizing the IFA weights outside the timed region.
pub fn bench_aggregator<T: Element>(
    module: BenchModule,
    cfg: &AggregatorCostConfig,
    seed: u64,
    warmup: usize,
    iters: usize,
) -> Result<BenchResult> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let pyramid = PyramidFeatures::<T>::random(&mut rng, cfg.widths(), cfg.h, cfg.w)?;
    let ifa = AggregatorWeights::random_ifa(&mut rng, cfg.widths(), cfg.d, true)?;
    let agg = match module {
        BenchModule::Ifa => build_aggregator("ifa", ifa)?,
        BenchModule::Cfa => build_aggregator("cfa", reparameterize(&ifa)?)?,
        BenchModule::Attention(v) => {
            return Err(Error::invalid(format!("`{v}` is not an aggregator")));
        }
    };
    let samples = time_iterations(warmup, iters, || agg.aggregate(&pyramid))?;
    let shape = BenchShape {
        d: cfg.d,
        c2: cfg.c2,
        c3: cfg.c3,
        c4: cfg.c4,
        c5: cfg.c5,
        h: cfg.h,
        w: cfg.w,
        ..BenchShape::default()
    };
    result(module, shape, warmup, &samples)
}

/// Benchmarks one cross-attention forward pass (kernel generation plus
/// convolution) on random `n×d` queries and values.
pub fn bench_attention<T: Element>(
    module: BenchModule,
    cfg: &AttentionCostConfig,
    seed: u64,
    warmup: usize,
    iters: usize,
) -> Result<BenchResult> {
    cfg.validate()?;
    let BenchModule::Attention(variant) = module else {
        return Err(Error::invalid(format!("`{module}` is not an attention variant")));
    };
    let mut rng = Rng::new(seed);
    let attn = random_attention::<T>(variant.name(), &cfg.dims(), &mut rng)?;
    let q = rand_uniform(&mut rng, vec![cfg.n, cfg.d], T::of(-1.0), T::one())?;
    let v = rand_uniform(&mut rng, vec![cfg.n, cfg.d], T::of(-1.0), T::one())?;
    let samples = time_iterations(warmup, iters, || attn.forward(&q, &v))?;
    let shape = BenchShape {
        n: cfg.n,
        d: cfg.d,
        t: cfg.t,
        ..BenchShape::default()
    };
    result(module, shape, warmup, &samples)
}

pub fn bench_module<T: Element>(
    module: BenchModule,
    agg: &AggregatorCostConfig,
    attn: &AttentionCostConfig,
    seed: u64,
    warmup: usize,
    iters: usize,
) -> Result<BenchResult> {
    if module.is_aggregator() {
        bench_aggregator::<T>(module, agg, seed, warmup, iters)
    } else {
        bench_attention::<T>(module, attn, seed, warmup, iters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_names_roundtrip() {
        for name in BenchModule::NAMES {
            assert_eq!(name.parse::<BenchModule>().unwrap().name(), name);
        }
        assert!("xyz".parse::<BenchModule>().is_err());
    }

    #[test]
    fn single_iteration_stats_collapse() {
        let (min, med, mean, sd, max) = summarize(&[42]).unwrap();
        assert_eq!((min, med, max), (42, 42, 42));
        assert_eq!((mean, sd), (42.0, 0.0));
    }

    #[test]
    fn median_is_lower_middle() {
        assert_eq!(summarize(&[4, 1, 3, 2]).unwrap().1, 2);
        assert_eq!(summarize(&[5, 1, 3]).unwrap().1, 3);
    }

    #[test]
    fn small_runs_produce_rows() {
        let agg = AggregatorCostConfig {
            c2: 4,
            c3: 4,
            c4: 4,
            c5: 4,
            d: 4,
            h: 8,
            w: 8,
        };
        let attn = AttentionCostConfig { n: 5, d: 6, t: 3 };
        for name in BenchModule::NAMES {
            let m: BenchModule = name.parse().unwrap();
            let r = bench_module::<f32>(m, &agg, &attn, 1, 0, 2).unwrap();
            assert_eq!(r.iters, 2);
            assert!(r.min_ns <= r.median_ns && r.median_ns <= r.max_ns);
        }
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn zero_iters_rejected() {
        assert!(time_iterations(0, 0, || Ok(())).is_err());
    }
}
