mod common;

use common::{pick, uniform};
use kernlab::attention::{attention_registry, dca, ddca, mhca, pdca, random_attention, sdca, AttentionDims, AttentionVariant};
use kernlab::decoder::{decode, load_bundle, pre_attention, save_bundle, DecoderConfig, DecoderWeights, KernelSet};
use kernlab::kernels::{dyconv1d, dyconv1d_depthwise, dyconv1d_pointwise};
use kernlab::tensor::matmul;
use kernlab::{Rng, Tensor};
use kernlab_testkit as oracle;

#[test]
fn mhca_matches_per_head_oracle() {
    let mut rng = Rng::new(31);
    for _ in 0..100 {
        let heads = pick(&mut rng, 1, 4);
        let d = pick(&mut rng, heads, 12);
        let (n, m) = (pick(&mut rng, 1, 6), pick(&mut rng, 1, 6));
        let q = uniform(&mut rng, vec![n, d]);
        let v = uniform(&mut rng, vec![m, d]);
        let w: Vec<Tensor<f64>> = (0..4).map(|_| uniform(&mut rng, vec![d, d])).collect();
        let got = mhca(&q, &v, &w[0], &w[1], &w[2], &w[3], heads).unwrap();
        let want = oracle::mhca(
            q.as_slice(), n, v.as_slice(), m, d,
            w[0].as_slice(), w[1].as_slice(), w[2].as_slice(), w[3].as_slice(), heads,
        );
        assert!(oracle::max_abs_diff(got.as_slice(), &want) < 1e-6);
    }
}

#[test]
fn mhca_rejects_empty_heads() {
    let q = Tensor::<f64>::zeros(vec![2, 5]).unwrap();
    let w = Tensor::<f64>::zeros(vec![5, 5]).unwrap();
    assert!(mhca(&q, &q, &w, &w, &w, &w, 0).is_err());
    assert!(mhca(&q, &q, &w, &w, &w, &w, 6).is_err());
}

#[test]
fn mhca_uneven_heads_match_oracle() {
    let mut rng = Rng::new(34);
    let (n, m, d, heads) = (3, 4, 8, 3);
    let q = uniform(&mut rng, vec![n, d]);
    let v = uniform(&mut rng, vec![m, d]);
    let w: Vec<Tensor<f64>> = (0..4).map(|_| uniform(&mut rng, vec![d, d])).collect();
    let got = mhca(&q, &v, &w[0], &w[1], &w[2], &w[3], heads).unwrap();
    let want = oracle::mhca(
        q.as_slice(), n, v.as_slice(), m, d,
        w[0].as_slice(), w[1].as_slice(), w[2].as_slice(), w[3].as_slice(), heads,
    );
    assert!(oracle::max_abs_diff(got.as_slice(), &want) < 1e-6);
}

#[test]
fn pre_attention_matches_matmul_composition() {
    let mut rng = Rng::new(32);
    for _ in 0..100 {
        let (n, d, h, w) = (pick(&mut rng, 1, 5), pick(&mut rng, 1, 6), pick(&mut rng, 1, 6), pick(&mut rng, 1, 6));
        let s = kernlab::rng::rand_uniform::<f64>(&mut rng, vec![d, h, w], -3.0, 3.0).unwrap();
        let q = kernlab::rng::rand_uniform::<f64>(&mut rng, vec![n, d], -3.0, 3.0).unwrap();
        let got = pre_attention(&s, &KernelSet::new(q.clone()).unwrap()).unwrap();
        assert_eq!(got.as_slice(), oracle::pre_attention(s.as_slice(), d, h, w, q.as_slice(), n).as_slice());
    }
}

#[test]
fn pre_attention_threshold_is_inclusive() {
    // A zero logit maps to exactly 0.5 and counts as active.
    let s = Tensor::from_vec(vec![1, 1, 2], vec![0.0, 4.0]).unwrap();
    let q = KernelSet::new(Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(pre_attention(&s, &q).unwrap().as_slice(), &[4.0]);
    let neg = KernelSet::new(Tensor::from_vec(vec![1, 1], vec![-1.0]).unwrap()).unwrap();
    assert_eq!(pre_attention(&s, &neg).unwrap().as_slice(), &[0.0]);
}

#[test]
fn convolutional_variants_compose_from_generated_kernels() {
    let mut rng = Rng::new(33);
    for _ in 0..50 {
        let (n, d, t) = (pick(&mut rng, 1, 6), pick(&mut rng, 1, 8), 2 * pick(&mut rng, 0, 2) + 1);
        let q = uniform(&mut rng, vec![n, d]);
        let v = uniform(&mut rng, vec![n, d]);
        let w = uniform(&mut rng, vec![d, n * t]);
        let wd = uniform(&mut rng, vec![d, t]);
        let wp = uniform(&mut rng, vec![d, n]);

        let k = oracle::matmul(q.as_slice(), n, d, w.as_slice(), n * t);
        let want = oracle::dyconv1d(v.as_slice(), n, d, &k, t);
        assert_eq!(dca(&q, &v, &w, t).unwrap().as_slice(), want.as_slice());

        let kd = matmul(&q, &wd).unwrap().reshape(vec![n, 1, t]).unwrap();
        let kp = matmul(&q, &wp).unwrap().reshape(vec![n, n, 1]).unwrap();
        assert_eq!(ddca(&q, &v, &wd).unwrap(), dyconv1d_depthwise(&v, &kd).unwrap());
        assert_eq!(pdca(&q, &v, &wp).unwrap(), dyconv1d_pointwise(&v, &kp).unwrap());
        let two_step = dyconv1d_pointwise(&dyconv1d_depthwise(&v, &kd).unwrap(), &kp).unwrap();
        assert_eq!(sdca(&q, &v, &wd, &wp).unwrap(), two_step);
        // Separable form equals one full kernel K[i,p,q] = kp[i,p]·kd[p,q].
        let mut full = vec![0.0; n * n * t];
        for i in 0..n {
            for p in 0..n {
                for tap in 0..t {
                    full[(i * n + p) * t + tap] = kp.at(&[i, p, 0]) * kd.at(&[p, 0, tap]);
                }
            }
        }
        let full = Tensor::from_vec(vec![n, n, t], full).unwrap();
        assert!(two_step.max_abs_diff(&dyconv1d(&v, &full).unwrap()).unwrap() < 1e-12);
    }
}

#[test]
fn registry_covers_every_variant() {
    let reg = attention_registry::<f64>();
    let names: Vec<&str> = AttentionVariant::ALL.iter().map(|v| v.name()).collect();
    assert_eq!(reg.names().collect::<Vec<_>>(), names);
    let dims = AttentionDims { n: 4, d: 6, t: 3 };
    let mut rng = Rng::new(34);
    for v in AttentionVariant::ALL {
        let block = random_attention::<f64>(v.name(), &dims, &mut rng).unwrap();
        assert_eq!(block.variant(), v);
        let q = uniform(&mut rng, vec![4, 6]);
        assert_eq!(block.forward(&q, &q).unwrap().shape(), &[4, 6]);
        let mut tensors = block
            .tensors()
            .into_iter()
            .map(|(k, t)| (k.to_string(), t.clone()))
            .collect();
        let rebuilt = (reg.get(v.name()).unwrap().from_tensors)(&dims, &mut tensors).unwrap();
        assert_eq!(rebuilt.forward(&q, &q).unwrap(), block.forward(&q, &q).unwrap());
    }
    assert!(random_attention::<f64>("xyz", &dims, &mut rng).is_err());
}

fn small_config(variants: Vec<AttentionVariant>) -> DecoderConfig {
    DecoderConfig {
        n: 6,
        d: 9,
        t: 3,
        blocks: variants.len(),
        stages: 2,
        heads: 3,
        ffn_hidden: 12,
        classes: 4,
        variants,
    }
}

fn permute_rows(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let inner = x.len() / perm.len();
    let data = perm.iter().flat_map(|&p| x.as_slice()[p * inner..(p + 1) * inner].to_vec()).collect();
    Tensor::from_vec(x.shape().to_vec(), data).unwrap()
}

#[test]
fn token_local_decoders_are_permutation_equivariant() {
    let mut rng = Rng::new(35);
    for variants in [
        vec![AttentionVariant::Mhca],
        vec![AttentionVariant::Ddca],
        vec![AttentionVariant::Mhca, AttentionVariant::Ddca],
    ] {
        let cfg = small_config(variants);
        let w = DecoderWeights::<f64>::random(&cfg, &mut rng).unwrap();
        let s = uniform(&mut rng, vec![cfg.d, 4, 4]);
        let q = uniform(&mut rng, vec![cfg.n, cfg.d]);
        let perm = [3, 0, 5, 1, 4, 2];
        let base = decode(&s, &KernelSet::new(q.clone()).unwrap(), &cfg, &w).unwrap();
        let moved = decode(&s, &KernelSet::new(permute_rows(&q, &perm)).unwrap(), &cfg, &w).unwrap();
        assert!(permute_rows(&base.kernels, &perm).max_abs_diff(&moved.kernels).unwrap() < 1e-12);
        assert!(permute_rows(&base.class_probs, &perm).max_abs_diff(&moved.class_probs).unwrap() < 1e-12);
        assert!(permute_rows(&base.mask_logits, &perm).max_abs_diff(&moved.mask_logits).unwrap() < 1e-12);
    }
}

#[test]
fn decoder_outputs_are_well_formed_and_deterministic() {
    let cfg = small_config(vec![AttentionVariant::Sdca, AttentionVariant::Dca]);
    let run = || {
        let mut rng = Rng::new(36);
        let w = DecoderWeights::<f64>::random(&cfg, &mut rng).unwrap();
        let s = uniform(&mut rng, vec![cfg.d, 5, 3]);
        let q = KernelSet::random(&mut rng, cfg.n, cfg.d).unwrap();
        decode(&s, &q, &cfg, &w).unwrap()
    };
    let out = run();
    assert_eq!(out, run());
    assert_eq!(out.masks.shape(), &[6, 5, 3]);
    assert!(out.masks.as_slice().iter().all(|&m| m == 0.0 || m == 1.0));
    for (m, l) in out.masks.as_slice().iter().zip(out.mask_logits.as_slice()) {
        assert_eq!(*m == 1.0, *l >= 0.0);
    }
    for row in out.class_probs.as_slice().chunks_exact(cfg.classes) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn decoder_rejects_mismatched_inputs() {
    let cfg = small_config(vec![AttentionVariant::Sdca]);
    let mut rng = Rng::new(37);
    let w = DecoderWeights::<f64>::random(&cfg, &mut rng).unwrap();
    let s = uniform(&mut rng, vec![cfg.d + 1, 4, 4]);
    let q = KernelSet::random(&mut rng, cfg.n, cfg.d).unwrap();
    assert!(decode(&s, &q, &cfg, &w).is_err());
    let mut bad = cfg.clone();
    bad.t = 2;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.variants = vec![];
    assert!(bad.validate().is_err());
}

#[test]
fn decoder_bundle_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(vec![AttentionVariant::Mhca, AttentionVariant::Sdca]);
    let mut rng = Rng::new(38);
    let w = DecoderWeights::<f64>::random(&cfg, &mut rng).unwrap();
    save_bundle(dir.path(), &cfg, &w).unwrap();
    let (cfg2, w2) = load_bundle::<f64>(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    let s = uniform(&mut rng, vec![cfg.d, 4, 4]);
    let q = KernelSet::random(&mut rng, cfg.n, cfg.d).unwrap();
    assert_eq!(decode(&s, &q, &cfg, &w).unwrap(), decode(&s, &q, &cfg2, &w2).unwrap());
}

#[test]
fn decoder_config_rejects_unknown_keys() {
    let err = serde_json::from_str::<DecoderConfig>(r#"{"n": 4, "bogus": 1}"#);
    assert!(err.is_err());
    let cfg: DecoderConfig = serde_json::from_str(r#"{"n": 4, "variants": ["mhca", "ddca"]}"#).unwrap();
    assert_eq!(cfg.n, 4);
    assert_eq!(cfg.d, 256);
    assert_eq!(cfg.variants, [AttentionVariant::Mhca, AttentionVariant::Ddca]);
}
