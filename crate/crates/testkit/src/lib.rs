//! Reference implementations written as plain loops over `f64` slices.
//!
//! Nothing here depends on the library under test. Each function follows
//! the defining formula as literally as possible, favouring clarity over
//! speed; layouts are row-major.

/// `a` is `m×k`, `b` is `k×p`; `out[i][j] = Σ_k a[i][k]·b[k][j]`.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], p: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * p);
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Source coordinate of output index `o` under half-pixel alignment,
/// clamped to the input extent.
fn source_coord(o: usize, out: usize, inp: usize) -> f64 {
    let s = (o as f64 + 0.5) * (inp as f64 / out as f64) - 0.5;
    s.max(0.0).min((inp - 1) as f64)
}

/// Bilinear resize of `c×h×w` to `c×oh×ow`, one output pixel at a time:
/// `(1-fy)[(1-fx)v00 + fx·v01] + fy[(1-fx)v10 + fx·v11]`.
pub fn bilinear(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(x.len(), c * h * w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            let sy = source_coord(oy, oh, h);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..ow {
                let sx = source_coord(ox, ow, w);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v = |y: usize, xx: usize| x[(ch * h + y) * w + xx];
                out.push(
                    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
                        + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1)),
                );
            }
        }
    }
    out
}

/// Interpolation-first aggregation: resize every level to `h×w`, stack the
/// channels, apply the fused `d×Σc` kernel, add the bias.
pub fn aggregate_ifa(
    levels: &[(&[f64], usize, usize, usize)],
    fused: &[f64],
    d: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (_, _, h, w) = levels[0];
    let mut stacked = Vec::new();
    for &(x, c, lh, lw) in levels {
        stacked.extend(bilinear(x, c, lh, lw, h, w));
    }
    let cin: usize = levels.iter().map(|l| l.1).sum();
    let mut out = matmul(fused, d, cin, &stacked, h * w);
    if let Some(b) = bias {
        for o in 0..d {
            for v in &mut out[o * h * w..(o + 1) * h * w] {
                *v += b[o];
            }
        }
    }
    out
}

/// Dynamic 1D convolution, written term by term:
/// `O[i][j] = Σ_p Σ_q K[i][p][q] · V[p][j + q - (t-1)/2]`, where taps that
/// fall outside `0..d` read zero.
pub fn dyconv1d(v: &[f64], n: usize, d: usize, k: &[f64], t: usize) -> Vec<f64> {
    assert_eq!(v.len(), n * d);
    assert_eq!(k.len(), n * n * t);
    let pad = (t as isize - 1) / 2;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for p in 0..n {
                for q in 0..t {
                    let src = j as isize + q as isize - pad;
                    let value = if src < 0 || src >= d as isize {
                        0.0
                    } else {
                        v[p * d + src as usize]
                    };
                    acc += k[(i * n + p) * t + q] * value;
                }
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// Multi-head cross-attention evaluated head by head:
/// `H_h = softmax(Q Wq_h (V Wk_h)^T / sqrt(d)) V Wv_h`, output
/// `[H_1 … H_heads] Wo`. Head `h` owns columns `h·d/heads .. (h+1)·d/heads`,
/// rounded down.
#[allow(clippy::too_many_arguments)]
pub fn mhca(
    q: &[f64],
    n: usize,
    v: &[f64],
    m: usize,
    d: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
    heads: usize,
) -> Vec<f64> {
    let qp = matmul(q, n, d, wq, d);
    let kp = matmul(v, m, d, wk, d);
    let vp = matmul(v, m, d, wv, d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut concat = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; m];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in h * d / heads..(h + 1) * d / heads {
                    dot += qp[i * d + c] * kp[j * d + c];
                }
                *s = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in h * d / heads..(h + 1) * d / heads {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += exps[j] / z * vp[j * d + c];
                }
                concat[i * d + c] = acc;
            }
        }
    }
    matmul(&concat, n, d, wo, d)
}

pub fn hard_sigmoid(x: f64) -> f64 {
    (x / 6.0 + 0.5).clamp(0.0, 1.0)
}

/// Masked pooling as two matrix products: `A = Q · r(S)` gives the
/// `n×hw` attention maps, `B = [hard_sigmoid(A) ≥ 0.5]`, `V = B · r(S)^T`.
pub fn pre_attention(s: &[f64], d: usize, h: usize, w: usize, q: &[f64], n: usize) -> Vec<f64> {
    let hw = h * w;
    let a = matmul(q, n, d, s, hw);
    let b: Vec<f64> = a
        .iter()
        .map(|&x| if hard_sigmoid(x) >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    matmul(&b, n, hw, &transpose(s, d, hw), d)
}

/// Minimum total cost over every injective assignment of the smaller side,
/// by exhaustive search.
pub fn assignment_brute_force(cost: &[f64], n: usize, m: usize) -> f64 {
    if n > m {
        return assignment_brute_force(&transpose(cost, n, m), m, n);
    }
    fn go(cost: &[f64], n: usize, m: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(cost, n, m, row + 1, used, acc + cost[row * m + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, m, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

pub const VOID: u32 = u32::MAX;

/// Per-class panoptic quality, computed pair by pair over segment lists.
/// Returns `(class, pq, sq, rq)` for classes with at least one TP, FP or FN,
/// sorted by class.
pub fn panoptic_quality(pred: &[(u32, u32)], gt: &[(u32, u32)]) -> Vec<(u32, f64, f64, f64)> {
    assert_eq!(pred.len(), gt.len());
    let segments = |labels: &[(u32, u32)]| {
        let mut s: Vec<(u32, u32)> = labels.iter().copied().filter(|l| l.0 != VOID).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let (ps, gs) = (segments(pred), segments(gt));
    let area = |labels: &[(u32, u32)], seg: (u32, u32)| labels.iter().filter(|&&l| l == seg).count();
    let mut classes: Vec<u32> = ps.iter().chain(&gs).map(|s| s.0).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut rows = Vec::new();
    for class in classes {
        let (mut tp, mut fp, mut fn_, mut iou_sum) = (0usize, 0usize, 0usize, 0.0);
        let mut pred_matched = vec![false; ps.len()];
        for &g in gs.iter().filter(|g| g.0 == class) {
            let mut hit = false;
            for (pi, &p) in ps.iter().enumerate().filter(|(_, p)| p.0 == class) {
                let inter = (0..gt.len()).filter(|&i| pred[i] == p && gt[i] == g).count();
                let p_void = (0..gt.len()).filter(|&i| pred[i] == p && gt[i].0 == VOID).count();
                let union = area(pred, p) + area(gt, g) - inter - p_void;
                let iou = inter as f64 / union as f64;
                if iou > 0.5 {
                    hit = true;
                    pred_matched[pi] = true;
                    tp += 1;
                    iou_sum += iou;
                }
            }
            if !hit {
                fn_ += 1;
            }
        }
        for (pi, &p) in ps.iter().enumerate().filter(|(_, p)| p.0 == class) {
            if pred_matched[pi] {
                continue;
            }
            let p_void = (0..gt.len()).filter(|&i| pred[i] == p && gt[i].0 == VOID).count();
            if 2 * p_void <= area(pred, p) {
                fp += 1;
            }
        }
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        if denom == 0.0 {
            continue;
        }
        let sq = if tp > 0 { iou_sum / tp as f64 } else { 0.0 };
        rows.push((class, iou_sum / denom, sq, tp as f64 / denom));
    }
    rows
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
