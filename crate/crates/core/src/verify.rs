//! Seeded property suites with runtime reference implementations. Each
//! check reports the number of cases, the largest observed error, and the
//! tolerance it was held to.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate_cfa, aggregate_ifa, fuse, reparameterize, AggregatorForm, AggregatorWeights, PyramidFeatures};
use crate::attention::{mhca, AttentionVariant};
use crate::decoder::{decode, hard_sigmoid, pre_attention, DecoderConfig, DecoderWeights, KernelSet};
use crate::error::{Error, Result};
use crate::flops::{
    count_aggregator, count_attention, contour_grid, flops_attention, mhca_sdca_ratio, AggregatorCostConfig,
    AttentionCostConfig, AxisRange, ContourKind,
};
use crate::hungarian::hungarian;
use crate::kernels::{bilinear_resize, dyconv1d, dyconv1d_depthwise, dyconv1d_pointwise};
use crate::panoptic::{decode_seg, encode_seg, merge, ClassTable, PanopticMap, PixelLabel, DEFAULT_THRESHOLD, VOID};
use crate::pq::pq_evaluate;
use crate::rng::{rand_uniform, Rng};
use crate::tensor::{softmax_rows, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Aggregator,
    Decoder,
    Flops,
    Panoptic,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["all", "aggregator", "decoder", "flops", "panoptic"];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Aggregator => "aggregator",
            Suite::Decoder => "decoder",
            Suite::Flops => "flops",
            Suite::Panoptic => "panoptic",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "aggregator" => Ok(Suite::Aggregator),
            "decoder" => Ok(Suite::Decoder),
            "flops" => Ok(Suite::Flops),
            "panoptic" => Ok(Suite::Panoptic),
            other => Err(Error::Unknown {
                kind: "suite",
                name: other.to_string(),
            }),
        }
    }
}

/// Tolerances applied by the suites. Exact checks always use zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// IFA vs re-parameterized CFA at 32-bit.
    pub equivalence_f32: f64,
    /// IFA vs re-parameterized CFA at 64-bit.
    pub equivalence_f64: f64,
    /// Multi-head attention vs the per-head scalar reference.
    pub attention: f64,
    /// Decoder outputs under a proposal permutation.
    pub equivariance: f64,
    /// `PQ` vs `SQ·RQ`.
    pub pq: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            equivalence_f32: 1e-5,
            equivalence_f64: 1e-12,
            attention: 1e-6,
            equivariance: 1e-12,
            pq: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Empty on success; the failure reason otherwise.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Cases run and the largest error seen.
type Outcome = Result<(usize, f64)>;

struct Runner<'a> {
    suite: Suite,
    checks: &'a mut Vec<Check>,
}

impl Runner<'_> {
    fn run(&mut self, name: String, tolerance: f64, f: impl FnOnce() -> Outcome) {
        let check = match f() {
            Ok((cases, max_error)) => {
                let passed = max_error <= tolerance && max_error.is_finite();
                Check {
                    suite: self.suite.to_string(),
                    name,
                    passed,
                    cases,
                    max_error,
                    tolerance,
                    detail: if passed {
                        String::new()
                    } else {
                        format!("max error {max_error:e} exceeds {tolerance:e}")
                    },
                }
            }
            Err(e) => Check {
                suite: self.suite.to_string(),
                name,
                passed: false,
                cases: 0,
                max_error: f64::INFINITY,
                tolerance,
                detail: e.to_string(),
            },
        };
        self.checks.push(check);
    }
}

pub fn run_suite(suite: Suite, seed: u64, tol: &Tolerances) -> VerifyReport {
    let mut checks = Vec::new();
    let parts: &[Suite] = match suite {
        Suite::All => &[Suite::Aggregator, Suite::Decoder, Suite::Flops, Suite::Panoptic],
        Suite::Aggregator => &[Suite::Aggregator],
        Suite::Decoder => &[Suite::Decoder],
        Suite::Flops => &[Suite::Flops],
        Suite::Panoptic => &[Suite::Panoptic],
    };
    for &part in parts {
        let mut rng = Rng::new(seed ^ (part as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut r = Runner {
            suite: part,
            checks: &mut checks,
        };
        match part {
            Suite::Aggregator => aggregator_suite(&mut r, &mut rng, tol),
            Suite::Decoder => decoder_suite(&mut r, &mut rng, tol),
            Suite::Flops => flops_suite(&mut r, &mut rng),
            Suite::Panoptic => panoptic_suite(&mut r, &mut rng, tol),
            Suite::All => unreachable!(),
        }
    }
    VerifyReport {
        suite: suite.to_string(),
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn err_f64<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.to_f64().unwrap_or(f64::INFINITY))
}

fn uniform<T: Element>(rng: &mut Rng, shape: Vec<usize>) -> Result<Tensor<T>> {
    rand_uniform(rng, shape, T::of(-1.0), T::one())
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.range_inclusive(lo as u64, hi as u64) as usize
}

// ---------------------------------------------------------------- aggregator

const EQUIV_WIDTHS: [[usize; 4]; 3] = [[8, 8, 8, 8], [16, 32, 64, 128], [3, 5, 7, 9]];

fn equivalence<T: Element>(rng: &mut Rng) -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for widths in EQUIV_WIDTHS {
        for d in [4, 32] {
            for hw in [8, 16] {
                let p = PyramidFeatures::<T>::random(rng, widths, hw, hw)?;
                let ifa = AggregatorWeights::random_ifa(rng, widths, d, true)?;
                let a = aggregate_ifa(&p, &ifa)?;
                let b = aggregate_cfa(&p, &reparameterize(&ifa)?)?;
                worst = worst.max(err_f64(&a, &b)?);
                cases += 1;
            }
        }
    }
    Ok((cases, worst))
}

fn aggregator_suite(r: &mut Runner, rng: &mut Rng, tol: &Tolerances) {
    r.run(
        format!("IFA≡CFA max|Δ| ≤ {:e} (f32)", tol.equivalence_f32),
        tol.equivalence_f32,
        || equivalence::<f32>(rng),
    );
    r.run(
        format!("IFA≡CFA max|Δ| ≤ {:e} (f64)", tol.equivalence_f64),
        tol.equivalence_f64,
        || equivalence::<f64>(rng),
    );
    r.run("fuse∘reparameterize round trip (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let widths = [pick(rng, 1, 9), pick(rng, 1, 9), pick(rng, 1, 9), pick(rng, 1, 9)];
            let d = pick(rng, 1, 9);
            let w = AggregatorWeights::<f64>::random_ifa(rng, widths, d, true)?;
            let back = fuse(&reparameterize(&w)?)?;
            let (AggregatorForm::Ifa { fused: a }, AggregatorForm::Ifa { fused: b }) = (w.form(), back.form())
            else {
                return Err(Error::invalid("round trip lost the fused form"));
            };
            worst = worst.max(err_f64(a, b)?);
        }
        Ok((20, worst))
    });
    r.run("bilinear same-size resize is the identity (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let shape = vec![pick(rng, 1, 4), pick(rng, 1, 9), pick(rng, 1, 9)];
            let x = uniform::<f64>(rng, shape)?;
            let s = x.shape().to_vec();
            worst = worst.max(err_f64(&bilinear_resize(&x, s[1], s[2])?, &x)?);
        }
        Ok((20, worst))
    });
    r.run("bilinear resize matches per-pixel reference".into(), 1e-12, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (c, h, w) = (pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8));
            let (oh, ow) = (pick(rng, 1, 20), pick(rng, 1, 20));
            let x = uniform::<f64>(rng, vec![c, h, w])?;
            let got = bilinear_resize(&x, oh, ow)?;
            let want = reference_bilinear(&x, oh, ow)?;
            worst = worst.max(err_f64(&got, &want)?);
        }
        Ok((20, worst))
    });
}

/// Half-pixel bilinear sampling evaluated one output pixel at a time.
fn reference_bilinear(x: &Tensor<f64>, oh: usize, ow: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3("reference input")?;
    let source = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0).min((inp - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(inp - 1), s - lo as f64)
    };
    Tensor::from_fn(vec![c, oh, ow], |idx| {
        let (ch, rest) = (idx / (oh * ow), idx % (oh * ow));
        let (y0, y1, fy) = source(rest / ow, oh, h);
        let (x0, x1, fx) = source(rest % ow, ow, w);
        let v = |y: usize, xx: usize| x.at(&[ch, y, xx]);
        (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
    })
}

// ------------------------------------------------------------------ decoder

/// `O[i,j] = Σ_p Σ_q K[i,p,q] · V[p, j+q-pad]` with out-of-range taps skipped.
fn reference_dyconv1d(v: &Tensor<f64>, k: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, d) = v.dims2("reference values")?;
    let (_, _, t) = k.dims3("reference kernel")?;
    let pad = (t - 1) / 2;
    Tensor::from_fn(vec![n, d], |idx| {
        let (i, j) = (idx / d, idx % d);
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..t {
                let src = j as isize + q as isize - pad as isize;
                if (0..d as isize).contains(&src) {
                    acc += k.at(&[i, p, q]) * v.at(&[p, src as usize]);
                }
            }
        }
        acc
    })
}

fn reference_mhca(
    q: &Tensor<f64>,
    v: &Tensor<f64>,
    w: [&Tensor<f64>; 4],
    heads: usize,
) -> Result<Tensor<f64>> {
    let (n, d) = q.dims2("reference queries")?;
    let (m, _) = v.dims2("reference values")?;
    let [wq, wk, wv, wo] = w;
    let proj = |x: &Tensor<f64>, rows: usize, wt: &Tensor<f64>| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|i| (0..d).map(|c| (0..d).map(|k| x.at(&[i, k]) * wt.at(&[k, c])).sum()).collect())
            .collect()
    };
    let (qp, kp, vp) = (proj(q, n, wq), proj(v, m, wk), proj(v, m, wv));
    let scale = 1.0 / (d as f64).sqrt();
    let mut concat = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * d / heads..(h + 1) * d / heads;
        for i in 0..n {
            let scores: Vec<f64> = (0..m)
                .map(|j| cols.clone().map(|c| qp[i][c] * kp[j][c]).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exp.iter().sum();
            for c in cols.clone() {
                concat[i][c] = (0..m).map(|j| exp[j] / z * vp[j][c]).sum();
            }
        }
    }
    Tensor::from_fn(vec![n, d], |idx| {
        let (i, c) = (idx / d, idx % d);
        (0..d).map(|k| concat[i][k] * wo.at(&[k, c])).sum()
    })
}

/// Masked pooling computed proposal by proposal.
fn reference_pre_attention(s: &Tensor<f64>, q: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (d, h, w) = s.dims3("reference features")?;
    let (n, _) = q.dims2("reference kernels")?;
    let hw = h * w;
    let feat = s.as_slice();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for pix in 0..hw {
            let mut a = 0.0;
            for c in 0..d {
                a += q.at(&[i, c]) * feat[c * hw + pix];
            }
            if hard_sigmoid(a) >= 0.5 {
                for c in 0..d {
                    out[i * d + c] += feat[c * hw + pix];
                }
            }
        }
    }
    Tensor::from_vec(vec![n, d], out)
}

fn permute_rows<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rows = perm.len();
    let inner = x.len() / rows.max(1);
    let data = perm
        .iter()
        .flat_map(|&p| x.as_slice()[p * inner..(p + 1) * inner].iter().copied())
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

fn shuffle(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.below(i as u64 + 1) as usize);
    }
    p
}

fn decoder_suite(r: &mut Runner, rng: &mut Rng, tol: &Tolerances) {
    r.run("dyconv1d equals direct loop (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..30 {
            let (n, d, t) = (pick(rng, 1, 6), pick(rng, 1, 10), 2 * pick(rng, 0, 3) + 1);
            let v = uniform::<f64>(rng, vec![n, d])?;
            let k = uniform::<f64>(rng, vec![n, n, t])?;
            worst = worst.max(err_f64(&dyconv1d(&v, &k)?, &reference_dyconv1d(&v, &k)?)?);
        }
        Ok((30, worst))
    });
    r.run("separable kernels equal full-kernel embeddings (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..30 {
            let (n, d, t) = (pick(rng, 1, 6), pick(rng, 1, 10), 2 * pick(rng, 0, 3) + 1);
            let v = uniform::<f64>(rng, vec![n, d])?;
            let kd = uniform::<f64>(rng, vec![n, 1, t])?;
            let kp = uniform::<f64>(rng, vec![n, n, 1])?;
            let dw_full = Tensor::from_fn(vec![n, n, t], |idx| {
                let (i, p, q) = (idx / (n * t), idx / t % n, idx % t);
                if i == p { kd.at(&[i, 0, q]) } else { 0.0 }
            })?;
            let pw_full = Tensor::from_fn(vec![n, n, t], |idx| {
                let (i, p, q) = (idx / (n * t), idx / t % n, idx % t);
                if q == (t - 1) / 2 { kp.at(&[i, p, 0]) } else { 0.0 }
            })?;
            worst = worst.max(err_f64(&dyconv1d_depthwise(&v, &kd)?, &dyconv1d(&v, &dw_full)?)?);
            worst = worst.max(err_f64(&dyconv1d_pointwise(&v, &kp)?, &dyconv1d(&v, &pw_full)?)?);
        }
        Ok((30, worst))
    });
    r.run(
        format!("mhca matches per-head reference ≤ {:e}", tol.attention),
        tol.attention,
        || {
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let heads = pick(rng, 1, 4);
                let d = pick(rng, heads, 12);
                let (n, m) = (pick(rng, 1, 6), pick(rng, 1, 6));
                let q = uniform::<f64>(rng, vec![n, d])?;
                let v = uniform::<f64>(rng, vec![m, d])?;
                let w: Vec<Tensor<f64>> = (0..4).map(|_| uniform(rng, vec![d, d])).collect::<Result<_>>()?;
                let got = mhca(&q, &v, &w[0], &w[1], &w[2], &w[3], heads)?;
                let want = reference_mhca(&q, &v, [&w[0], &w[1], &w[2], &w[3]], heads)?;
                worst = worst.max(err_f64(&got, &want)?);
            }
            Ok((20, worst))
        },
    );
    r.run("pre_attention equals masked pooling reference (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (n, d, h, w) = (pick(rng, 1, 5), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6));
            let s = rand_uniform::<f64>(rng, vec![d, h, w], -3.0, 3.0)?;
            let q = rand_uniform::<f64>(rng, vec![n, d], -3.0, 3.0)?;
            let got = pre_attention(&s, &KernelSet::new(q.clone())?)?;
            worst = worst.max(err_f64(&got, &reference_pre_attention(&s, &q)?)?);
        }
        Ok((20, worst))
    });
    r.run("softmax rows sum to one".into(), 1e-12, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let shape = vec![pick(rng, 1, 6), pick(rng, 1, 12)];
            let x = rand_uniform::<f64>(rng, shape, -50.0, 50.0)?;
            let sm = softmax_rows(&x)?;
            for row in sm.as_slice().chunks_exact(x.shape()[1]) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        Ok((20, worst))
    });
    r.run(
        format!("decoder is proposal-permutation equivariant (mhca/ddca) ≤ {:e}", tol.equivariance),
        tol.equivariance,
        || {
            let cfg = DecoderConfig {
                n: 6,
                d: 9,
                t: 3,
                blocks: 2,
                stages: 2,
                heads: 3,
                ffn_hidden: 12,
                classes: 4,
                variants: vec![AttentionVariant::Mhca, AttentionVariant::Ddca],
            };
            let mut worst = 0.0f64;
            for _ in 0..5 {
                let w = DecoderWeights::<f64>::random(&cfg, rng)?;
                let s = uniform::<f64>(rng, vec![cfg.d, 4, 4])?;
                let q = uniform::<f64>(rng, vec![cfg.n, cfg.d])?;
                let perm = shuffle(rng, cfg.n);
                let base = decode(&s, &KernelSet::new(q.clone())?, &cfg, &w)?;
                let moved = decode(&s, &KernelSet::new(permute_rows(&q, &perm)?)?, &cfg, &w)?;
                worst = worst.max(err_f64(&permute_rows(&base.kernels, &perm)?, &moved.kernels)?);
                worst = worst.max(err_f64(&permute_rows(&base.mask_logits, &perm)?, &moved.mask_logits)?);
                worst = worst.max(err_f64(&permute_rows(&base.class_probs, &perm)?, &moved.class_probs)?);
            }
            Ok((5, worst))
        },
    );
}

// -------------------------------------------------------------------- flops

fn flops_suite(r: &mut Runner, rng: &mut Rng) {
    r.run("counted == analytic (exact)".into(), 0.0, || {
        let mut cases = 0;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let cfg = AggregatorCostConfig {
                c2: pick(rng, 1, 8),
                c3: pick(rng, 1, 8),
                c4: pick(rng, 1, 8),
                c5: pick(rng, 1, 8),
                d: pick(rng, 1, 8),
                h: 8 * pick(rng, 1, 2),
                w: 8 * pick(rng, 1, 2),
            };
            for name in ["ifa", "cfa"] {
                let rep = count_aggregator::<f64>(name, &cfg, rng.next_u64())?;
                worst = worst.max(rep.analytic.abs_diff(rep.counted) as f64);
                cases += 1;
            }
            let t = 2 * pick(rng, 0, 2) + 1;
            let att = AttentionCostConfig {
                n: pick(rng, 1, 10),
                d: t * pick(rng, 1, 4),
                t,
            };
            for v in AttentionVariant::ALL {
                let rep = count_attention::<f64>(v, &att, rng.next_u64())?;
                worst = worst.max(rep.analytic.abs_diff(rep.counted) as f64);
                cases += 1;
            }
        }
        Ok((cases, worst))
    });
    r.run("MHCA/SDCA count ratio equals (2d+n)/(t+n) (exact)".into(), 0.0, || {
        let mut bad = 0usize;
        for _ in 0..200 {
            let cfg = AttentionCostConfig {
                n: pick(rng, 1, 500),
                d: pick(rng, 1, 1024),
                t: 2 * pick(rng, 0, 4) + 1,
            };
            let ratio = Ratio::new(
                flops_attention(&cfg, AttentionVariant::Mhca),
                flops_attention(&cfg, AttentionVariant::Sdca),
            );
            bad += usize::from(ratio != mhca_sdca_ratio(&cfg));
        }
        Ok((200, bad as f64))
    });
    r.run("contour ratios are monotone (violations)".into(), 0.0, || {
        let cfa = contour_grid(ContourKind::Cfa, AxisRange::new(8, 256, 20)?, AxisRange::new(16, 512, 20)?)?;
        let sdca = contour_grid(ContourKind::Sdca, AxisRange::new(10, 300, 20)?, AxisRange::new(16, 512, 20)?)?;
        Ok((cfa.len() + sdca.len(), contour_violations(&cfa, &sdca) as f64))
    });
}

/// Counts monotonicity violations on x-major `20×20`-style grids: the CFA
/// ratio must not decrease along x; the SDCA ratio must rise along y and
/// fall along x.
pub fn contour_violations(cfa: &[crate::flops::ContourCell], sdca: &[crate::flops::ContourCell]) -> usize {
    let group = |cells: &[crate::flops::ContourCell]| {
        let mut by_x: BTreeMap<usize, BTreeMap<usize, Ratio<u128>>> = BTreeMap::new();
        for c in cells {
            by_x.entry(c.x).or_default().insert(c.y, c.ratio);
        }
        by_x
    };
    let mut bad = 0;
    let g = group(cfa);
    let xs: Vec<_> = g.keys().copied().collect();
    for pair in xs.windows(2) {
        for (y, r) in &g[&pair[0]] {
            bad += usize::from(g[&pair[1]].get(y).is_some_and(|next| next < r));
        }
    }
    let g = group(sdca);
    let xs: Vec<_> = g.keys().copied().collect();
    for pair in xs.windows(2) {
        for (y, r) in &g[&pair[0]] {
            bad += usize::from(g[&pair[1]].get(y).is_some_and(|next| next >= r));
        }
    }
    for col in g.values() {
        let rs: Vec<_> = col.values().collect();
        bad += rs.windows(2).filter(|w| w[1] <= w[0]).count();
    }
    bad
}

// ----------------------------------------------------------------- panoptic

/// Minimum total cost over all injective row→column assignments.
fn brute_force_assignment(c: &Tensor<f64>) -> Result<f64> {
    let (n, m) = c.dims2("cost")?;
    if n > m {
        return brute_force_assignment(&c.transpose()?);
    }
    fn go(c: &Tensor<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let (n, m) = (c.shape()[0], c.shape()[1]);
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c.at(&[row, j]), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; m], 0.0, &mut best);
    Ok(best)
}

/// Random map over 4 classes (class 0 stuff) with some VOID pixels.
fn random_map(rng: &mut Rng, h: usize, w: usize) -> Result<PanopticMap> {
    let pixels = (0..h * w)
        .map(|_| match rng.below(6) {
            0 => PixelLabel::VOID,
            1 => PixelLabel { class: 0, instance: 0 },
            _ => PixelLabel {
                class: 1 + rng.below(3) as u32,
                instance: 1 + rng.below(3) as u32,
            },
        })
        .collect();
    PanopticMap::new(h, w, pixels)
}

fn panoptic_suite(r: &mut Runner, rng: &mut Rng, tol: &Tolerances) {
    r.run("hungarian equals brute force (exact)".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (n, m) = (pick(rng, 1, 5), pick(rng, 1, 5));
            // Integer costs keep every partial sum exact.
            let c = Tensor::from_fn(vec![n, m], |_| rng.below(100) as f64)?;
            let a = hungarian(&c)?;
            worst = worst.max((a.total - brute_force_assignment(&c)?).abs());
        }
        Ok((50, worst))
    });
    let classes = ClassTable::new(4, &[0]).expect("static class table");
    r.run("PQ = SQ = RQ = 1 on identical maps".into(), 0.0, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (h, w) = (pick(rng, 2, 6), pick(rng, 2, 6));
            let m = random_map(rng, h, w)?;
            let rep = pq_evaluate(&m, &m, &classes)?;
            for c in &rep.per_class {
                worst = worst.max((c.pq - 1.0).abs()).max((c.sq - 1.0).abs()).max((c.rq - 1.0).abs());
            }
        }
        Ok((20, worst))
    });
    r.run(format!("PQ = SQ·RQ ≤ {:e}", tol.pq), tol.pq, || {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (h, w) = (pick(rng, 2, 6), pick(rng, 2, 6));
            let rep = pq_evaluate(&random_map(rng, h, w)?, &random_map(rng, h, w)?, &classes)?;
            for c in &rep.per_class {
                worst = worst.max((c.pq - c.sq * c.rq).abs());
            }
        }
        Ok((50, worst))
    });
    r.run("PQ invariant under instance relabeling (exact)".into(), 0.0, || {
        let mut bad = 0usize;
        for _ in 0..30 {
            let (h, w) = (pick(rng, 2, 6), pick(rng, 2, 6));
            let (pred, gt) = (random_map(rng, h, w)?, random_map(rng, h, w)?);
            let perm = shuffle(rng, 4);
            let relabeled = PanopticMap::new(
                h,
                w,
                pred.pixels()
                    .iter()
                    .map(|p| match p.instance {
                        0 => *p,
                        i => PixelLabel {
                            class: p.class,
                            instance: perm[i as usize] as u32 + 10,
                        },
                    })
                    .collect(),
            )?;
            let a = pq_evaluate(&pred, &gt, &classes)?;
            let b = pq_evaluate(&relabeled, &gt, &classes)?;
            bad += usize::from(a != b);
        }
        Ok((30, bad as f64))
    });
    r.run("merge yields a valid partition with .seg round trip".into(), 0.0, || {
        let cfg = DecoderConfig {
            n: 8,
            d: 6,
            t: 3,
            blocks: 1,
            stages: 1,
            heads: 2,
            ffn_hidden: 8,
            classes: 4,
            variants: vec![AttentionVariant::Sdca],
        };
        let mut bad = 0usize;
        for _ in 0..10 {
            let w = DecoderWeights::<f64>::random(&cfg, rng)?;
            let s = uniform::<f64>(rng, vec![cfg.d, 5, 7])?;
            let q = KernelSet::random(rng, cfg.n, cfg.d)?;
            let out = decode(&s, &q, &cfg, &w)?;
            let map = merge(&out, &classes, DEFAULT_THRESHOLD)?;
            bad += usize::from(map.validate(&classes).is_err());
            let (back, cls) = decode_seg(&encode_seg(&map, &classes)?)?;
            bad += usize::from(back != map || cls != classes);
            bad += usize::from(map.pixels().iter().any(|p| p.class != VOID && p.class >= 4));
        }
        Ok((10, bad as f64))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("xyz".parse::<Suite>().is_err());
    }

    #[test]
    fn every_suite_passes() {
        let report = run_suite(Suite::All, 7, &Tolerances::default());
        for c in &report.checks {
            assert!(c.passed, "{}: {} ({})", c.suite, c.name, c.detail);
        }
        assert!(report.passed);
        assert!(report.checks.iter().any(|c| c.name == "IFA≡CFA max|Δ| ≤ 1e-5 (f32)"));
    }

    #[test]
    fn failing_check_is_reported() {
        let mut checks = Vec::new();
        let mut r = Runner {
            suite: Suite::Flops,
            checks: &mut checks,
        };
        r.run("fails".into(), 0.0, || Ok((1, 1.0)));
        r.run("errors".into(), 0.0, || Err(Error::invalid("boom")));
        assert!(!checks[0].passed && !checks[1].passed);
        assert_eq!(checks[1].detail, "invalid argument: boom");
    }
}
