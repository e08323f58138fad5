mod common;

use common::pick;
use kernlab::attention::AttentionVariant;
use kernlab::flops::{
    contour_csv, contour_grid, count_aggregator, count_attention, flops_attention, flops_cfa, flops_ifa,
    ifa_cfa_ratio, mhca_sdca_ratio, AggregatorCostConfig, AttentionCostConfig, AxisRange, ContourKind,
};
use kernlab::Rng;
use num_rational::Ratio;
use proptest::prelude::*;

#[test]
fn attention_counts_at_reference_setting() {
    let cfg = AttentionCostConfig::default();
    let expect = [
        (AttentionVariant::Mhca, 31_334_400u128),
        (AttentionVariant::Dca, 15_360_000),
        (AttentionVariant::Sdca, 5_273_600),
        (AttentionVariant::Pdca, 5_120_000),
        (AttentionVariant::Ddca, 153_600),
    ];
    for (v, n) in expect {
        assert_eq!(flops_attention(&cfg, v), n, "{v}");
    }
    assert_eq!(mhca_sdca_ratio(&cfg), Ratio::new(612, 103));
}

#[test]
fn aggregator_counts_at_reference_setting() {
    let cfg = AggregatorCostConfig::default();
    assert_eq!(flops_ifa(&cfg).unwrap(), 32_682_016_768);
    assert_eq!(flops_cfa(&cfg).unwrap(), 4_278_190_080);
    let r = ifa_cfa_ratio(&cfg).unwrap();
    assert_eq!(r, Ratio::new(32_682_016_768, 4_278_190_080));
    assert!((r.numer() * 1000 / r.denom()) == 7639);
}

#[test]
fn aggregator_counts_small_hand_cases() {
    let ones = AggregatorCostConfig { c2: 1, c3: 1, c4: 1, c5: 1, d: 1, h: 8, w: 8 };
    // Three resized levels at 4 ops per output, plus 4·64 MACs.
    assert_eq!(flops_ifa(&ones).unwrap(), 1024);
    let wide = AggregatorCostConfig { c2: 64, c3: 64, c4: 64, c5: 64, d: 1, h: 8, w: 8 };
    // 64·64 + 64·16 + 64·4 + 64·1 MACs, 3·64 resized outputs, 3·64 adds.
    assert_eq!(flops_cfa(&wide).unwrap(), 6400);
}

#[test]
fn counted_equals_analytic_on_random_configs() {
    let mut rng = Rng::new(41);
    for _ in 0..50 {
        let cfg = AggregatorCostConfig {
            c2: pick(&mut rng, 1, 12),
            c3: pick(&mut rng, 1, 12),
            c4: pick(&mut rng, 1, 12),
            c5: pick(&mut rng, 1, 12),
            d: pick(&mut rng, 1, 12),
            h: 8 * pick(&mut rng, 1, 3),
            w: 8 * pick(&mut rng, 1, 3),
        };
        for name in ["ifa", "cfa"] {
            let rep = count_aggregator::<f32>(name, &cfg, rng.next_u64()).unwrap();
            assert!(rep.matches(), "{name} {cfg:?}: {} vs {}", rep.counted, rep.analytic);
        }
        let t = 2 * pick(&mut rng, 0, 3) + 1;
        let att = AttentionCostConfig { n: pick(&mut rng, 1, 16), d: t * pick(&mut rng, 1, 5), t };
        for v in AttentionVariant::ALL {
            let rep = count_attention::<f64>(v, &att, rng.next_u64()).unwrap();
            assert!(rep.matches(), "{v} {att:?}: {} vs {}", rep.counted, rep.analytic);
        }
    }
}

#[test]
fn unknown_aggregator_is_rejected() {
    assert!(count_aggregator::<f64>("xfa", &AggregatorCostConfig::default(), 0).is_err());
}

#[test]
fn contour_grid_shape_and_monotonicity() {
    let cfa = contour_grid(ContourKind::Cfa, AxisRange::new(8, 256, 20).unwrap(), AxisRange::new(16, 512, 20).unwrap()).unwrap();
    assert_eq!(cfa.len(), 400);
    for c in &cfa {
        let next = cfa.iter().find(|o| o.y == c.y && o.x > c.x);
        if let Some(n) = next {
            assert!(n.ratio >= c.ratio);
        }
    }
    let sd = contour_grid(ContourKind::Sdca, AxisRange::new(10, 300, 20).unwrap(), AxisRange::new(16, 512, 20).unwrap()).unwrap();
    for (i, c) in sd.iter().enumerate() {
        if c.y != 512 {
            assert!(sd[i + 1].ratio > c.ratio, "rises with d");
        }
        if let Some(n) = sd.get(i + 20) {
            assert!(n.ratio < c.ratio, "falls with n");
        }
    }
}

#[test]
fn contour_csv_layout() {
    let one = AxisRange::new(100, 100, 1).unwrap();
    let d = AxisRange::new(256, 256, 1).unwrap();
    let cells = contour_grid(ContourKind::Sdca, one, d).unwrap();
    assert_eq!(contour_csv(&cells), "x,y,ratio\n100,256,5.941748\n");
    let grid = contour_grid(ContourKind::Sdca, AxisRange::new(1, 2, 2).unwrap(), AxisRange::new(3, 4, 2).unwrap()).unwrap();
    assert_eq!(contour_csv(&grid).lines().count(), 5);
}

#[test]
fn axis_ranges_must_hold_distinct_points() {
    assert!(AxisRange::new(1, 3, 5).is_err());
    assert!(AxisRange::new(0, 3, 2).is_err());
    assert!(AxisRange::new(5, 4, 2).is_err());
    assert_eq!(AxisRange::new(10, 20, 3).unwrap().points().unwrap(), [10, 15, 20]);
}

#[test]
fn cost_configs_reject_unknown_keys() {
    assert!(serde_json::from_str::<AttentionCostConfig>(r#"{"n":1,"d":2,"t":3,"x":0}"#).is_err());
    assert!(serde_json::from_str::<AggregatorCostConfig>(r#"{"c2":1}"#).is_err());
}

proptest! {
    #[test]
    fn ratio_identity_holds_exactly(n in 1usize..2000, d in 1usize..4096, t in 1usize..32) {
        let cfg = AttentionCostConfig { n, d, t };
        let direct = Ratio::new(
            flops_attention(&cfg, AttentionVariant::Mhca),
            flops_attention(&cfg, AttentionVariant::Sdca),
        );
        prop_assert_eq!(direct, mhca_sdca_ratio(&cfg));
        prop_assert_eq!(direct, Ratio::new((2 * d + n) as u128, (t + n) as u128));
    }

    #[test]
    fn sdca_is_the_sum_of_its_branches(n in 1usize..500, d in 1usize..1024, t in 1usize..16) {
        let cfg = AttentionCostConfig { n, d, t };
        let f = |v| flops_attention(&cfg, v);
        prop_assert_eq!(f(AttentionVariant::Sdca), f(AttentionVariant::Pdca) + f(AttentionVariant::Ddca));
    }
}
