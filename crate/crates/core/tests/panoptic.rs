mod common;

use common::pick;
use kernlab::decoder::DecoderOutput;
use kernlab::hungarian::hungarian;
use kernlab::panoptic::{decode_seg, encode_seg, merge, ClassTable, PanopticMap, PixelLabel, VOID};
use kernlab::pq::pq_evaluate;
use kernlab::{Rng, Tensor};
use kernlab_testkit as oracle;
use proptest::prelude::*;

fn map_from(h: usize, w: usize, labels: &[(u32, u32)]) -> PanopticMap {
    let pixels = labels.iter().map(|&(class, instance)| PixelLabel { class, instance }).collect();
    PanopticMap::new(h, w, pixels).unwrap()
}

fn labels(m: &PanopticMap) -> Vec<(u32, u32)> {
    m.pixels().iter().map(|p| (p.class, p.instance)).collect()
}

fn random_labels(rng: &mut Rng, len: usize) -> Vec<(u32, u32)> {
    (0..len)
        .map(|_| match rng.below(6) {
            0 => (VOID, 0),
            1 => (0, 0),
            _ => (1 + rng.below(3) as u32, 1 + rng.below(3) as u32),
        })
        .collect()
}

#[test]
fn hungarian_matches_brute_force() {
    let mut rng = Rng::new(51);
    for _ in 0..200 {
        let (n, m) = (pick(&mut rng, 1, 7), pick(&mut rng, 1, 7));
        let cost: Vec<f64> = (0..n * m).map(|_| rng.below(1000) as f64).collect();
        let a = hungarian(&Tensor::from_vec(vec![n, m], cost.clone()).unwrap()).unwrap();
        assert_eq!(a.total, oracle::assignment_brute_force(&cost, n, m));
        assert_eq!(a.pairs.len(), n.min(m));
        let mut rows: Vec<_> = a.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = a.pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!((rows.len(), cols.len()), (n.min(m), n.min(m)));
    }
}

#[test]
fn hungarian_is_deterministic_under_ties() {
    let c = Tensor::<f64>::full(vec![4, 4], 1.0).unwrap();
    let first = hungarian(&c).unwrap();
    for _ in 0..5 {
        assert_eq!(hungarian(&c).unwrap(), first);
    }
}

/// Thing segment A (pixels 0..10) and stuff segment B (10..20); each
/// prediction overlaps its target on 8 pixels with a union of 12.
#[test]
fn eight_of_twelve_overlap_gives_two_thirds() {
    let classes = ClassTable::new(3, &[2]).unwrap();
    let mut gt = vec![(1, 1); 10];
    gt.extend(vec![(2, 0); 10]);
    let mut pred = vec![(2, 0), (2, 0)];
    pred.extend(vec![(1, 1); 10]);
    pred.extend(vec![(2, 0); 8]);
    let report = pq_evaluate(&map_from(4, 5, &pred), &map_from(4, 5, &gt), &classes).unwrap();
    assert_eq!(report.tp, 2);
    assert!((report.all.pq - 2.0 / 3.0).abs() < 1e-6);
    assert!((report.all.pq - 0.666667).abs() < 1e-6);
    assert!((report.things.pq - 2.0 / 3.0).abs() < 1e-12);
    assert!((report.stuff.pq - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn identical_maps_are_perfect() {
    let classes = ClassTable::new(4, &[0]).unwrap();
    let mut rng = Rng::new(52);
    for _ in 0..20 {
        let m = map_from(5, 4, &random_labels(&mut rng, 20));
        let r = pq_evaluate(&m, &m, &classes).unwrap();
        assert_eq!((r.all.pq, r.all.sq, r.all.rq), (1.0, 1.0, 1.0));
        assert_eq!((r.fp, r.fn_), (0, 0));
    }
}

#[test]
fn prediction_mostly_on_void_is_not_a_false_positive() {
    let classes = ClassTable::new(2, &[]).unwrap();
    let gt = map_from(1, 4, &[(VOID, 0), (VOID, 0), (VOID, 0), (1, 1)]);
    let pred = map_from(1, 4, &[(0, 1), (0, 1), (0, 1), (1, 1)]);
    let r = pq_evaluate(&pred, &gt, &classes).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
    assert_eq!(r.all.pq, 1.0);
}

#[test]
fn void_pixels_leave_the_union() {
    // IoU = 2 / (3 + 2 - 2 - 1) = 1: the VOID-overlapping pixel is ignored.
    let classes = ClassTable::new(2, &[]).unwrap();
    let gt = map_from(1, 3, &[(1, 1), (1, 1), (VOID, 0)]);
    let pred = map_from(1, 3, &[(1, 1), (1, 1), (1, 1)]);
    let r = pq_evaluate(&pred, &gt, &classes).unwrap();
    assert_eq!(r.per_class[0].sq, 1.0);
}

#[test]
fn dimension_and_class_errors() {
    let classes = ClassTable::new(2, &[]).unwrap();
    let a = map_from(1, 2, &[(1, 1), (1, 1)]);
    let b = map_from(2, 1, &[(1, 1), (1, 1)]);
    assert!(pq_evaluate(&a, &b, &classes).is_err());
    let c = map_from(1, 2, &[(7, 1), (1, 1)]);
    assert!(pq_evaluate(&c, &a, &classes).is_err());
}

fn output(n: usize, h: usize, w: usize, masks: Vec<f64>, probs: Vec<f64>, l: usize) -> DecoderOutput<f64> {
    let masks = Tensor::from_vec(vec![n, h, w], masks).unwrap();
    DecoderOutput {
        kernels: Tensor::zeros(vec![n, 1]).unwrap(),
        mask_logits: masks.clone(),
        masks,
        class_probs: Tensor::from_vec(vec![n, l], probs).unwrap(),
    }
}

#[test]
fn merge_assigns_contiguous_thing_ids_in_prediction_order() {
    // Classes: 0 stuff, 1 thing. Prediction 1 owns nothing and gets no id.
    let classes = ClassTable::new(2, &[0]).unwrap();
    let masks = vec![
        1.0, 0.0, 0.0, 0.0, // thing, 0.9
        1.0, 0.0, 0.0, 0.0, // thing, 0.6, fully covered by prediction 0
        0.0, 0.0, 1.0, 0.0, // thing, 0.7
        0.0, 1.0, 1.0, 0.0, // stuff, 0.8
    ];
    let probs = vec![0.1, 0.9, 0.4, 0.6, 0.3, 0.7, 0.8, 0.2];
    let map = merge(&output(4, 2, 2, masks, probs, 2), &classes, 0.5).unwrap();
    assert_eq!(labels(&map), [(1, 1), (0, 0), (0, 0), (VOID, 0)]);
    map.validate(&classes).unwrap();
}

#[test]
fn merge_tie_goes_to_lower_index() {
    let classes = ClassTable::new(2, &[]).unwrap();
    let masks = vec![1.0, 1.0];
    let probs = vec![0.2, 0.8, 0.2, 0.8];
    let map = merge(&output(2, 1, 1, masks, probs, 2), &classes, 0.5).unwrap();
    assert_eq!(labels(&map), [(1, 1)]);
}

#[test]
fn seg_header_is_json_line() {
    let classes = ClassTable::new(3, &[1]).unwrap();
    let m = map_from(1, 2, &[(0, 1), (1, 0)]);
    let bytes = encode_seg(&m, &classes).unwrap();
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header: serde_json::Value = serde_json::from_slice(&bytes[..header_end]).unwrap();
    assert_eq!(header, serde_json::json!({"h": 1, "w": 2, "l": 3, "stuff": [1]}));
    assert_eq!(&bytes[header_end + 1..], &[0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
    let with_unknown = [br#"{"h":1,"w":2,"l":3,"stuff":[1],"x":0}"#.as_slice(), &bytes[header_end..]].concat();
    assert!(decode_seg(&with_unknown).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pq_matches_pairwise_oracle(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (pick(&mut rng, 1, 6), pick(&mut rng, 1, 6));
        let (p, g) = (random_labels(&mut rng, h * w), random_labels(&mut rng, h * w));
        let classes = ClassTable::new(4, &[0]).unwrap();
        let r = pq_evaluate(&map_from(h, w, &p), &map_from(h, w, &g), &classes).unwrap();
        let want = oracle::panoptic_quality(&p, &g);
        prop_assert_eq!(r.per_class.len(), want.len());
        for (got, (class, pq, sq, rq)) in r.per_class.iter().zip(want) {
            prop_assert_eq!(got.class, class);
            prop_assert!((got.pq - pq).abs() < 1e-12);
            prop_assert!((got.sq - sq).abs() < 1e-12);
            prop_assert!((got.rq - rq).abs() < 1e-12);
            prop_assert!((got.pq - got.sq * got.rq).abs() < 1e-9);
        }
    }

    #[test]
    fn pq_ignores_instance_relabeling(seed in any::<u64>(), offset in 1u32..1000) {
        let mut rng = Rng::new(seed);
        let (h, w) = (pick(&mut rng, 1, 6), pick(&mut rng, 1, 6));
        let (p, g) = (random_labels(&mut rng, h * w), random_labels(&mut rng, h * w));
        let classes = ClassTable::new(4, &[0]).unwrap();
        let relabel = |l: &[(u32, u32)]| -> Vec<(u32, u32)> {
            l.iter().map(|&(c, i)| if i == 0 { (c, 0) } else { (c, 4 - i + offset) }).collect()
        };
        let base = pq_evaluate(&map_from(h, w, &p), &map_from(h, w, &g), &classes).unwrap();
        let moved = pq_evaluate(&map_from(h, w, &relabel(&p)), &map_from(h, w, &relabel(&g)), &classes).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn seg_roundtrip(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (pick(&mut rng, 1, 9), pick(&mut rng, 1, 9));
        let classes = ClassTable::new(4, &[0, 3]).unwrap();
        let m = map_from(h, w, &random_labels(&mut rng, h * w));
        let (back, cls) = decode_seg(&encode_seg(&m, &classes).unwrap()).unwrap();
        prop_assert_eq!(back, m);
        prop_assert_eq!(cls, classes);
    }

    #[test]
    fn hungarian_never_beats_or_loses_to_enumeration(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (n, m) = (pick(&mut rng, 1, 5), pick(&mut rng, 1, 5));
        let cost: Vec<f64> = (0..n * m).map(|_| rng.below(50) as f64 - 25.0).collect();
        let a = hungarian(&Tensor::from_vec(vec![n, m], cost.clone()).unwrap()).unwrap();
        prop_assert_eq!(a.total, oracle::assignment_brute_force(&cost, n, m));
    }

    #[test]
    fn merge_output_is_a_partition(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (n, h, w, l) = (pick(&mut rng, 1, 6), pick(&mut rng, 1, 5), pick(&mut rng, 1, 5), 4);
        let masks: Vec<f64> = (0..n * h * w).map(|_| rng.below(2) as f64).collect();
        let mut probs = Vec::new();
        for _ in 0..n {
            let raw: Vec<f64> = (0..l).map(|_| rng.next_f64() + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / z * if rng.below(2) == 0 { 1.0 } else { 3.0 }));
        }
        let classes = ClassTable::new(l, &[0, 1]).unwrap();
        let out = output(n, h, w, masks.clone(), probs, l);
        let map = merge(&out, &classes, 0.5).unwrap();
        prop_assert!(map.validate(&classes).is_ok());
        for (pix, label) in map.pixels().iter().enumerate() {
            let covered = (0..n).any(|i| masks[i * h * w + pix] == 1.0);
            if !covered {
                prop_assert!(label.is_void());
            }
        }
    }
}
